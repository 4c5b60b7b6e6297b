#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "refquery/param_set.hpp"
#include "refquery/tape.hpp"
#include "refquery/tensor.hpp"

namespace refquery::model {

inline constexpr std::size_t kConvLayers = 5;

/// Shape of the encoder and head. Defaults are the deployed configuration:
/// a 599-sample window, five k=3 convolutions (32,32,64,64,128 channels,
/// the first with stride 2) each followed by a ceil-mode 2x max-pool, a
/// 1280 -> E projection, and a head of width H.
struct Architecture {
  std::size_t window = 599;
  std::size_t kernel = 3;
  std::array<std::size_t, kConvLayers> channels{32, 32, 64, 64, 128};
  std::size_t embedding = 128;
  std::size_t hidden = 128;

  void validate() const;
  /// Sequence length after each conv and each pool, interleaved:
  /// conv1, pool1, conv2, pool2, ...
  std::vector<std::size_t> length_schedule() const;
  std::size_t flattened_size() const;
  std::size_t encoder_parameter_count() const;
  std::size_t head_parameter_count() const;
  std::size_t parameter_count() const {
    return encoder_parameter_count() + head_parameter_count();
  }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// Positions of each layer inside the network ParamSet.
struct LayerIndex {
  std::array<std::size_t, kConvLayers> conv_weight{};
  std::array<std::size_t, kConvLayers> conv_bias{};
  std::size_t projection_weight = 0, projection_bias = 0;
  std::size_t fc1_weight = 0, fc1_bias = 0;
  std::size_t fc2_weight = 0, fc2_bias = 0;
  std::size_t state_weight = 0, state_bias = 0;
  std::size_t power_weight = 0, power_bias = 0;
};

/// Encoder and head weights. Parameter names start with "encoder." or
/// "head.". The OFF bias is not a parameter; callers pass it in.
class Network {
 public:
  Network() : Network(Architecture{}, 0) {}
  /// Fan-in scaled uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
  /// zero biases.
  Network(Architecture arch, std::uint64_t seed);
  /// Weights taken from `params`, which must match the architecture.
  Network(Architecture arch, nd::ParamSet params);

  const Architecture& arch() const { return arch_; }
  const LayerIndex& layers() const { return layers_; }
  nd::ParamSet& params() { return params_; }
  const nd::ParamSet& params() const { return params_; }

  void set_encoder_trainable(bool trainable);
  void set_head_trainable(bool trainable);

  friend bool operator==(const Network& a, const Network& b) {
    return a.arch_ == b.arch_ && a.params_ == b.params_;
  }

 private:
  void index_layers();

  Architecture arch_;
  nd::ParamSet params_;
  LayerIndex layers_;
};

// ---- recorded forward passes -------------------------------------------

/// Maps a z-normalized window ([L] or [L,1]) to an L2-normalized [E]
/// embedding. `bound` is the result of nd::bind_parameters on the network.
nd::Var encode(nd::Tape& tape, const Network& net,
               std::span<const nd::Var> bound, nd::Var window);

struct HeadVars {
  nd::Var state_prob;  // sigmoid output
  nd::Var magnitude;   // ReLU branch, Delta z >= 0
  nd::Var power_z;     // magnitude * state_prob + off_bias
};

/// Reference and query may each be [E] or [B,E] (rank-1 broadcasts).
HeadVars head(nd::Tape& tape, const Network& net,
              std::span<const nd::Var> bound, nd::Var reference, nd::Var query,
              float off_bias);

// ---- plain inference ---------------------------------------------------

Tensor encode(const Network& net, std::span<const float> window_z);

/// concat[e_r, e_q, (e_q - e_r)^2, e_q * e_r]
Tensor interaction_features(const Tensor& reference, const Tensor& query);

struct HeadOutput {
  std::vector<float> state_prob;
  std::vector<float> power_z;
};

/// One output per query row.
HeadOutput head_forward(const Network& net, const Tensor& reference,
                        const Tensor& query, float off_bias);

}  // namespace refquery::model
