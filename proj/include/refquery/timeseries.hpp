#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace refquery::ts {

inline constexpr double kDefaultPeriod = 8.0;
inline constexpr float kOnThresholdWatts = 20.0f;
inline constexpr double kMinOnSeconds = 60.0;
inline constexpr double kMaxOffGapSeconds = 300.0;
inline constexpr double kMaxFillSeconds = 300.0;

/// Uniformly sampled power signal in watts. Sample i is taken at
/// start + i * period.
struct TimeSeries {
  double start = 0.0;
  double period = kDefaultPeriod;
  std::vector<float> values;
  /// Empty means every sample is usable; otherwise one flag per sample,
  /// 0 marking samples synthesized across a long data gap.
  std::vector<std::uint8_t> usable;

  std::size_t size() const { return values.size(); }
  double time_at(std::size_t i) const { return start + period * static_cast<double>(i); }
  /// Exclusive end of the covered time range.
  double end() const { return time_at(values.size()); }
  bool is_usable(std::size_t i) const { return usable.empty() || usable[i] != 0; }
  /// True when every sample in [begin, begin + length) is usable.
  bool range_usable(std::size_t begin, std::size_t length) const;
  /// Sub-series [begin, begin + length).
  TimeSeries slice(std::size_t begin, std::size_t length) const;
};

struct ActivationMask {
  double period = kDefaultPeriod;
  std::vector<std::uint8_t> bits;
  std::size_t size() const { return bits.size(); }
};

/// Half-open sample index range [begin, end).
struct OnInterval {
  std::size_t begin = 0;
  std::size_t end = 0;
  friend bool operator==(const OnInterval&, const OnInterval&) = default;
};

struct OnIntervalSet {
  std::vector<OnInterval> intervals;
  std::size_t size() const { return intervals.size(); }
  bool empty() const { return intervals.empty(); }
  friend bool operator==(const OnIntervalSet&, const OnIntervalSet&) = default;
};

struct CsvColumns {
  std::size_t timestamp = 0;
  std::size_t watts = 1;
  char delimiter = ',';
};

struct LoadOptions {
  CsvColumns columns;
  /// Target sampling period; <= 0 infers the median timestamp spacing.
  double period = 0.0;
  double max_fill = kMaxFillSeconds;
};

/// Reads "unix_timestamp,watts" rows (optional header line). Rows are
/// sorted by timestamp, duplicate timestamps keep the last row, negative
/// readings clamp to 0 and NaN readings count as missing. The result is
/// placed on a uniform grid as resample() does.
TimeSeries load_series(const std::filesystem::path& path,
                       const LoadOptions& options = {});

/// Writes "unix_timestamp,watts" with a header line.
void write_series(const std::filesystem::path& path, const TimeSeries& series);

/// Resamples onto a grid of `period` seconds anchored at a multiple of the
/// period. Buckets average the samples they contain; runs of empty buckets
/// lasting at most `max_fill` seconds are forward-filled, longer runs are
/// zeroed and flagged unusable.
TimeSeries resample(const TimeSeries& series, double period,
                    double max_fill = kMaxFillSeconds);

/// Trims both series to their common time range.
std::pair<TimeSeries, TimeSeries> align(const TimeSeries& mains,
                                        const TimeSeries& appliance);

/// bit = value > threshold
ActivationMask activation_mask(const TimeSeries& appliance,
                               float threshold = kOnThresholdWatts);

/// Removes ON runs shorter than `min_on` seconds, then bridges OFF gaps
/// shorter than `max_gap` seconds that have ON samples on both sides.
ActivationMask clean_mask(const ActivationMask& mask,
                          double min_on = kMinOnSeconds,
                          double max_gap = kMaxOffGapSeconds);

OnIntervalSet extract_on_intervals(const ActivationMask& mask);

/// Inverse of extract_on_intervals for a mask of length `size`.
ActivationMask mask_from_intervals(const OnIntervalSet& intervals,
                                   std::size_t size,
                                   double period = kDefaultPeriod);

/// threshold, clean, extract.
OnIntervalSet on_intervals(const TimeSeries& appliance);

// Channel map: which CSV files make up each building.
struct BuildingChannels {
  std::string id;
  std::filesystem::path mains;
  std::map<std::string, std::filesystem::path> appliances;
};

struct ChannelMap {
  double period = kDefaultPeriod;
  std::vector<BuildingChannels> buildings;

  const BuildingChannels& building(const std::string& id) const;
};

/// JSON: {"period": 8, "buildings": [{"id": "...", "mains": "...",
/// "appliances": {"name": "path", ...}}]}. Relative paths resolve against
/// the map file's directory.
ChannelMap load_channel_map(const std::filesystem::path& path);
void save_channel_map(const std::filesystem::path& path, const ChannelMap& map);

/// A building with mains and appliance channels on one common grid.
struct BuildingSeries {
  std::string id;
  TimeSeries mains;
  std::map<std::string, TimeSeries> appliances;
};

/// Loads and aligns every channel of one building at the map's period.
BuildingSeries load_building(const ChannelMap& map, const std::string& id);

/// Trims every channel to the common time range.
BuildingSeries align_building(BuildingSeries building);

}  // namespace refquery::ts
