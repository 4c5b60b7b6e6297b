#include "refquery/costmodel.hpp"

#include <cstdio>

#include "json.hpp"
#include "refquery/ops.hpp"

namespace refquery::cost {
namespace {

std::uint64_t sum(const std::vector<LayerFlops>& layers) {
  std::uint64_t s = 0;
  for (const auto& l : layers) s += l.flops;
  return s;
}

}  // namespace

std::uint64_t FlopBreakdown::shared_flops() const { return sum(encoder); }
std::uint64_t FlopBreakdown::per_appliance_flops() const { return sum(head); }

FlopBreakdown count_flops(const model::Architecture& arch) {
  arch.validate();
  FlopBreakdown f;
  std::uint64_t len = arch.window;
  std::uint64_t in = 1;
  for (std::size_t i = 0; i < model::kConvLayers; ++i) {
    const std::uint64_t out = arch.channels[i];
    const std::uint64_t conv_len = nd::conv_output_length(len, i == 0 ? 2 : 1);
    const std::string tag = "conv" + std::to_string(i + 1);
    f.encoder.push_back({tag, 2 * arch.kernel * in * out * conv_len + conv_len * out});
    f.encoder.push_back({tag + ".relu", conv_len * out});
    const std::uint64_t pooled = nd::pool_output_length(conv_len);
    f.encoder.push_back({"pool" + std::to_string(i + 1), pooled * out});
    len = pooled;
    in = out;
  }
  const std::uint64_t flat = arch.flattened_size();
  const std::uint64_t e = arch.embedding;
  const std::uint64_t h = arch.hidden;
  f.encoder.push_back({"projection", 2 * flat * e + e});
  f.encoder.push_back({"l2norm", 3 * e + 1});

  // (e_q - e_r)^2 costs a subtract and a multiply; e_q * e_r one multiply.
  f.head.push_back({"interaction", 3 * e});
  f.head.push_back({"fc1", 2 * 4 * e * h + h});
  f.head.push_back({"fc1.relu", h});
  f.head.push_back({"fc2", 2 * h * h + h});
  f.head.push_back({"fc2.relu", h});
  f.head.push_back({"state", 2 * h + 1});
  f.head.push_back({"state.sigmoid", 1});
  f.head.push_back({"power", 2 * h + 1});
  f.head.push_back({"power.relu", 1});
  f.head.push_back({"gate", 2});
  return f;
}

StorageReport storage_accounting(const model::ModelBundle& bundle) {
  const model::BundleLayout layout = model::bundle_layout(bundle);
  StorageReport s;
  s.parameter_count = bundle.network.params().parameter_count();
  s.parameter_bytes = layout.parameter_bytes;
  s.serialized_bytes = layout.total();
  s.overhead_bytes = layout.fixed_bytes + layout.tensor_descriptor_bytes;
  s.embedding_bytes = layout.embedding_bytes;
  s.appliance_count = bundle.embeddings.size();
  for (const auto& [name, e] : bundle.embeddings) {
    s.max_appliance_delta_bytes = std::max(
        s.max_appliance_delta_bytes, model::embedding_record_bytes(name, e.size()));
  }
  return s;
}

std::vector<ScalingRow> scaling_report(double shared_mflops,
                                       double per_appliance_mflops,
                                       std::span<const std::size_t> appliance_counts) {
  std::vector<ScalingRow> rows;
  for (std::size_t k : appliance_counts) {
    rows.push_back({k, shared_mflops + static_cast<double>(k) * per_appliance_mflops});
  }
  return rows;
}

CostReport cost_report(const model::ModelBundle& bundle,
                       std::span<const std::size_t> appliance_counts) {
  CostReport r;
  r.flops = count_flops(bundle.network.arch());
  r.storage = storage_accounting(bundle);
  r.scaling = scaling_report(r.flops.shared_mflops(), r.flops.per_appliance_mflops(),
                             appliance_counts);
  return r;
}

std::string format_cost_report(const CostReport& report) {
  std::string out;
  char line[200];
  out += "layer                    FLOPs\n";
  for (const auto* part : {&report.flops.encoder, &report.flops.head}) {
    for (const auto& l : *part) {
      std::snprintf(line, sizeof line, "  %-20s %12llu\n", l.layer.c_str(),
                    static_cast<unsigned long long>(l.flops));
      out += line;
    }
  }
  const double b = report.flops.shared_mflops();
  const double m = report.flops.per_appliance_mflops();
  std::snprintf(line, sizeof line,
                "\nMFLOPs/(mains window) = b + K*m = %.3f + K * %.3f\n", b, m);
  out += line;
  out += "    K   total MFLOPs\n";
  for (const auto& row : report.scaling) {
    std::snprintf(line, sizeof line, "  %3zu   %12.3f\n", row.appliances, row.total_mflops);
    out += line;
  }
  const StorageReport& s = report.storage;
  std::snprintf(line, sizeof line,
                "\nparameters            %zu\n"
                "parameter bytes       %zu (%.2f MB)\n"
                "serialized bytes      %zu (%.2f MB)\n"
                "per-appliance delta   %zu bytes (%.2f KB)\n"
                "stored appliances     %zu\n",
                s.parameter_count, s.parameter_bytes,
                static_cast<double>(s.parameter_bytes) * 1e-6, s.serialized_bytes,
                static_cast<double>(s.serialized_bytes) * 1e-6,
                s.max_appliance_delta_bytes,
                static_cast<double>(s.max_appliance_delta_bytes) / 1024.0,
                s.appliance_count);
  out += line;
  return out;
}

std::string format_cost_json(const CostReport& report) {
  nlohmann::json doc;
  doc["shared_mflops"] = report.flops.shared_mflops();
  doc["per_appliance_mflops"] = report.flops.per_appliance_mflops();
  doc["shared_flops"] = report.flops.shared_flops();
  doc["per_appliance_flops"] = report.flops.per_appliance_flops();
  for (const auto& row : report.scaling) {
    doc["scaling"].push_back({{"K", row.appliances}, {"mflops", row.total_mflops}});
  }
  const StorageReport& s = report.storage;
  doc["storage"] = {{"parameter_count", s.parameter_count},
                    {"parameter_bytes", s.parameter_bytes},
                    {"serialized_bytes", s.serialized_bytes},
                    {"overhead_bytes", s.overhead_bytes},
                    {"embedding_bytes", s.embedding_bytes},
                    {"max_appliance_delta_bytes", s.max_appliance_delta_bytes},
                    {"appliance_count", s.appliance_count}};
  return doc.dump(2);
}

}  // namespace refquery::cost
