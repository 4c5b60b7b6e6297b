#include "refquery/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "refquery/error.hpp"

namespace refquery::metrics {

double mae(std::span<const float> truth, std::span<const float> pred) {
  if (truth.empty()) throw EmptyInputError("mae of an empty sequence");
  if (truth.size() != pred.size()) throw InvalidShapeError("mae length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    acc += std::abs(static_cast<double>(truth[i]) - pred[i]);
  }
  return acc / static_cast<double>(truth.size());
}

F1Result f1(std::span<const std::uint8_t> truth_states,
            std::span<const float> probs, double threshold) {
  if (truth_states.empty()) throw EmptyInputError("f1 of an empty sequence");
  if (truth_states.size() != probs.size()) {
    throw InvalidShapeError("f1 length mismatch");
  }
  F1Result r;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool predicted = probs[i] >= threshold;
    const bool actual = truth_states[i] != 0;
    if (predicted && actual) ++r.tp;
    else if (predicted) ++r.fp;
    else if (actual) ++r.fn;
    else ++r.tn;
  }
  const std::size_t denom = 2 * r.tp + r.fp + r.fn;
  r.f1 = denom == 0 ? 0.0 : 2.0 * static_cast<double>(r.tp) / static_cast<double>(denom);
  return r;
}

double EvalReport::mean_mae() const {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.mae;
  return s / static_cast<double>(rows.size());
}

double EvalReport::mean_f1() const {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.f1.f1;
  return s / static_cast<double>(rows.size());
}

ApplianceScore score_appliance(std::string appliance,
                               std::span<const float> truth_watts,
                               std::span<const std::uint8_t> truth_states,
                               std::span<const float> pred_watts,
                               std::span<const float> pred_probs) {
  ApplianceScore s;
  s.appliance = std::move(appliance);
  s.mae = mae(truth_watts, pred_watts);
  s.f1 = f1(truth_states, pred_probs);
  s.samples = truth_watts.size();
  double off_sum = 0.0;
  std::size_t off = 0;
  for (std::size_t i = 0; i < truth_states.size(); ++i) {
    if (truth_states[i]) continue;
    off_sum += pred_watts[i];
    ++off;
  }
  s.off_mean_watts = off ? off_sum / static_cast<double>(off) : 0.0;
  return s;
}

std::string format_table(const EvalReport& report) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %10s %8s %8s %8s %8s %10s\n",
                "appliance", "MAE[W]", "F1", "TP", "FP", "FN", "samples");
  out += line;
  for (const auto& r : report.rows) {
    std::snprintf(line, sizeof line, "%-16s %10.3f %8.3f %8zu %8zu %8zu %10zu\n",
                  r.appliance.c_str(), r.mae, r.f1.f1, r.f1.tp, r.f1.fp,
                  r.f1.fn, r.samples);
    out += line;
  }
  std::snprintf(line, sizeof line, "%-16s %10.3f %8.3f\n", "average",
                report.mean_mae(), report.mean_f1());
  out += line;
  return out;
}

std::string format_json(const EvalReport& report) {
  nlohmann::json doc;
  doc["appliances"] = nlohmann::json::array();
  for (const auto& r : report.rows) {
    doc["appliances"].push_back({{"appliance", r.appliance},
                                 {"mae", r.mae},
                                 {"f1", r.f1.f1},
                                 {"tp", r.f1.tp},
                                 {"fp", r.f1.fp},
                                 {"fn", r.f1.fn},
                                 {"tn", r.f1.tn},
                                 {"samples", r.samples},
                                 {"off_mean_watts", r.off_mean_watts}});
  }
  doc["average"] = {{"mae", report.mean_mae()}, {"f1", report.mean_f1()}};
  return doc.dump(2);
}

}  // namespace refquery::metrics
