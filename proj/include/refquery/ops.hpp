#pragma once

// Forward and backward kernels for the fixed operator set used by the
// network. These are pure functions over tensors; tape.hpp records them.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "refquery/tensor.hpp"

namespace refquery::nd {

inline constexpr float kNormEpsilon = 1e-12f;
inline constexpr float kProbEpsilon = 1e-7f;

/// ceil(len / stride)
std::size_t conv_output_length(std::size_t length, std::size_t stride);
/// ceil(len / 2)
std::size_t pool_output_length(std::size_t length);

/// Same-padded 1-D cross-correlation.
///   input  [len, in_ch]
///   kernel [k, in_ch, out_ch]  (k odd)
///   bias   [out_ch]
/// Output position o reads taps o*stride - k/2 ... o*stride + k/2; taps
/// outside [0, len) read as zero.
Tensor conv1d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::size_t stride);
void conv1d_backward(const Tensor& input, const Tensor& kernel,
                     std::size_t stride, const Tensor& grad_output,
                     Tensor* grad_input, Tensor* grad_kernel,
                     Tensor* grad_bias);

struct PoolResult {
  Tensor output;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

/// Window 2, stride 2, ceil mode over [len, ch].
PoolResult maxpool1d(const Tensor& input);

/// input [n] or [batch, n]; weight [n, m]; bias [m].
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);
void dense_backward(const Tensor& input, const Tensor& weight,
                    const Tensor& grad_output, Tensor* grad_input,
                    Tensor* grad_weight, Tensor* grad_bias);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// v / ||v|| when ||v|| > kNormEpsilon, otherwise v unchanged.
Tensor l2_normalize(const Tensor& v);

/// concat[e_r, e_q, (e_q - e_r)^2, e_q * e_r] along the last axis.
/// Either argument may be [E] or [batch, E]; a rank-1 argument is
/// broadcast over the batch.
Tensor interaction_features(const Tensor& reference, const Tensor& query);

/// magnitude * prob + offset, elementwise.
Tensor gate(const Tensor& magnitude, const Tensor& prob, float offset);

float mse_loss(const Tensor& pred, const Tensor& target);
/// Probabilities are clamped to [kProbEpsilon, 1 - kProbEpsilon].
float bce_loss(const Tensor& prob, const Tensor& label);

}  // namespace refquery::nd
