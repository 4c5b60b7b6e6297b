#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "refquery/tensor.hpp"
#include "refquery/timeseries.hpp"

namespace refquery::win {

inline constexpr std::size_t kWindowLength = 599;
inline constexpr float kStdEpsilon = 1e-6f;

/// Index of the supervised sample inside a window: floor(L / 2).
constexpr std::size_t center_offset(std::size_t window) { return window / 2; }

/// Appliance-power windows centered on ON-interval midpoints.
struct ReferenceBank {
  std::string appliance;
  std::size_t window = kWindowLength;
  std::vector<std::size_t> starts;           // t0 of each window
  std::vector<std::vector<float>> windows;   // watts, length `window`

  std::size_t size() const { return windows.size(); }
  bool empty() const { return windows.empty(); }
};

/// For each interval [s, e): c = floor((s + e) / 2), t0 = c - floor(L / 2);
/// the window is kept iff 0 <= t0 and t0 + L <= N.
ReferenceBank build_reference_bank(const ts::TimeSeries& appliance,
                                   const ts::OnIntervalSet& intervals,
                                   std::size_t window = kWindowLength,
                                   std::string appliance_name = {});

struct TrainingQuadruple {
  std::vector<float> query;      // mains watts
  std::vector<float> reference;  // appliance watts
  float power_label = 0.0f;      // appliance watts at t + p
  std::uint8_t on_label = 0;     // cleaned mask at t + p
  std::size_t t = 0;
  std::size_t reference_index = 0;
};

/// Reference draws for every t in [0, count): uniform with replacement
/// from [0, bank_size), fixed by `seed`.
std::vector<std::uint32_t> draw_reference_indices(std::size_t count,
                                                  std::size_t bank_size,
                                                  std::uint64_t seed);

/// Window starts t in [0, N - L] whose query window contains only usable
/// samples.
std::vector<std::size_t> usable_window_starts(const ts::TimeSeries& mains,
                                              std::size_t window);

/// Materialized training-set generation for one (building, appliance):
/// one quadruple per usable t in [0, N - L]. Throws NoReferenceError for an
/// empty bank.
std::vector<TrainingQuadruple> generate_quadruples(
    const ts::TimeSeries& mains, const ts::TimeSeries& appliance,
    const ts::ActivationMask& mask, const ReferenceBank& bank,
    std::size_t window, std::uint64_t seed);

class ZNormalizer {
 public:
  ZNormalizer() = default;
  ZNormalizer(float mean, float std);

  /// mean and max(population std, kStdEpsilon). Throws EmptyInputError.
  static ZNormalizer fit(std::span<const float> values);

  float mean() const { return mean_; }
  float std() const { return std_; }
  float forward(float watts) const { return (watts - mean_) / std_; }
  /// Written relative to zero_point() so that inverse(zero_point()) is
  /// exactly 0 W in floating point.
  float inverse(float z) const { return (z - zero_point()) * std_; }
  /// z-space value that maps back to exactly 0 W: -mean / std.
  float zero_point() const { return -mean_ / std_; }

  friend bool operator==(const ZNormalizer&, const ZNormalizer&) = default;

 private:
  float mean_ = 0.0f;
  float std_ = 1.0f;
};

enum class Direction { kForward, kInverse };

Tensor znorm_apply(const ZNormalizer& z, const Tensor& x, Direction direction);
std::vector<float> znorm_apply(const ZNormalizer& z, std::span<const float> x,
                               Direction direction);

struct Normalizers {
  ZNormalizer query;
  ZNormalizer reference;
  ZNormalizer power;
  friend bool operator==(const Normalizers&, const Normalizers&) = default;
};

/// One appliance of a building, ready for quadruple generation.
struct PreparedAppliance {
  std::string name;
  ts::TimeSeries series;
  ts::ActivationMask mask;  // cleaned
  ts::OnIntervalSet intervals;
  ReferenceBank bank;
  /// Reference draw per window start t (indexed by t, length N - L + 1).
  std::vector<std::uint32_t> reference_draws;
};

struct PreparedBuilding {
  std::string id;
  ts::TimeSeries mains;
  std::vector<PreparedAppliance> appliances;
  std::vector<std::size_t> window_starts;
  std::vector<std::string> warnings;

  std::size_t quadruple_count() const {
    return window_starts.size() * appliances.size();
  }
};

/// Masks, intervals, banks and reference draws for every appliance of an
/// aligned building. Appliances with an empty bank are dropped with a
/// warning; restricting to `appliances` (when non-empty) selects channels.
PreparedBuilding prepare_building(const ts::BuildingSeries& building,
                                  std::size_t window, std::uint64_t seed,
                                  std::span<const std::string> appliances = {});

/// Pooled fits: query over mains samples, reference over bank windows,
/// power over the center labels of every quadruple.
Normalizers fit_normalizers(std::span<const PreparedBuilding> buildings,
                            std::size_t window);

/// Text cache of the generated training set; see README for the layout.
void write_dataset_cache(const std::filesystem::path& path,
                         std::span<const PreparedBuilding> buildings,
                         const Normalizers& normalizers, std::size_t window);

struct CachedQuadruple {
  std::string building;
  std::string appliance;
  std::size_t t = 0;
  std::size_t reference_index = 0;
  float power_label = 0.0f;
  std::uint8_t on_label = 0;
};

struct DatasetCache {
  std::size_t window = 0;
  Normalizers normalizers;
  std::vector<CachedQuadruple> quadruples;
};

DatasetCache read_dataset_cache(const std::filesystem::path& path);

}  // namespace refquery::win
