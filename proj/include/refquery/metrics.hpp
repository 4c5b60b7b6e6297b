#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace refquery::metrics {

inline constexpr double kStateThreshold = 0.5;

/// Mean absolute error in watts. Throws on empty or mismatched input.
double mae(std::span<const float> truth, std::span<const float> pred);

struct F1Result {
  double f1 = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;
};

/// Predicted ON iff prob >= threshold. F1 = 2TP / (2TP + FP + FN), and 0
/// when that denominator is 0.
F1Result f1(std::span<const std::uint8_t> truth_states,
            std::span<const float> probs, double threshold = kStateThreshold);

struct ApplianceScore {
  std::string appliance;
  double mae = 0.0;
  F1Result f1;
  std::size_t samples = 0;
  /// Mean predicted watts over truth-OFF samples.
  double off_mean_watts = 0.0;
};

struct EvalReport {
  std::vector<ApplianceScore> rows;

  double mean_mae() const;
  double mean_f1() const;
};

ApplianceScore score_appliance(std::string appliance,
                               std::span<const float> truth_watts,
                               std::span<const std::uint8_t> truth_states,
                               std::span<const float> pred_watts,
                               std::span<const float> pred_probs);

/// Aligned plain-text table: one row per appliance plus an average row.
std::string format_table(const EvalReport& report);
/// Machine-readable JSON form.
std::string format_json(const EvalReport& report);

}  // namespace refquery::metrics
