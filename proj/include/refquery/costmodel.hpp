#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "refquery/bundle.hpp"
#include "refquery/model.hpp"

namespace refquery::cost {

/// FLOPs of one layer (2 per multiply-accumulate, 1 per elementwise op).
struct LayerFlops {
  std::string layer;
  std::uint64_t flops = 0;
};

struct FlopBreakdown {
  std::vector<LayerFlops> encoder;  // shared: one pass per mains window
  std::vector<LayerFlops> head;     // per appliance
  std::uint64_t shared_flops() const;
  std::uint64_t per_appliance_flops() const;
  double shared_mflops() const { return static_cast<double>(shared_flops()) * 1e-6; }
  double per_appliance_mflops() const {
    return static_cast<double>(per_appliance_flops()) * 1e-6;
  }
};

FlopBreakdown count_flops(const model::Architecture& arch);

struct StorageReport {
  std::size_t parameter_count = 0;
  std::size_t parameter_bytes = 0;     // 4 x parameter count
  std::size_t serialized_bytes = 0;    // whole bundle file
  std::size_t overhead_bytes = 0;      // header, descriptors, counts, CRC
  std::size_t embedding_bytes = 0;     // all embedding records
  std::size_t max_appliance_delta_bytes = 0;
  std::size_t appliance_count = 0;
};

StorageReport storage_accounting(const model::ModelBundle& bundle);

struct ScalingRow {
  std::size_t appliances = 0;
  double total_mflops = 0.0;
};

/// total(K) = shared + K * per_appliance
std::vector<ScalingRow> scaling_report(double shared_mflops,
                                       double per_appliance_mflops,
                                       std::span<const std::size_t> appliance_counts);

struct CostReport {
  FlopBreakdown flops;
  StorageReport storage;
  std::vector<ScalingRow> scaling;
};

CostReport cost_report(const model::ModelBundle& bundle,
                       std::span<const std::size_t> appliance_counts);

/// Plain-text report: per-layer FLOPs, b + K*m summary, storage lines.
std::string format_cost_report(const CostReport& report);
std::string format_cost_json(const CostReport& report);

}  // namespace refquery::cost
