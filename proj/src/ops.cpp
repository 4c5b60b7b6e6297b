#include "refquery/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "refquery/error.hpp"

namespace refquery::nd {
namespace {

using RowMatrix =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using ConstRowVector = Eigen::Map<const Eigen::RowVectorXf>;
using RowVectorMap = Eigen::Map<Eigen::RowVectorXf>;

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidShapeError(what);
}

struct ConvGeometry {
  std::size_t length, in_ch, out_ch, taps, half, stride, out_length;
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& kernel,
                           std::size_t stride) {
  require(input.rank() == 2, "conv1d input must be [len, ch], got " +
                                 shape_string(input.shape()));
  require(kernel.rank() == 3, "conv1d kernel must be [k, in, out], got " +
                                  shape_string(kernel.shape()));
  require(kernel.dim(1) == input.dim(1),
          "conv1d channel mismatch: input " + shape_string(input.shape()) +
              " kernel " + shape_string(kernel.shape()));
  require(kernel.dim(0) % 2 == 1, "conv1d kernel size must be odd");
  require(stride == 1 || stride == 2, "conv1d stride must be 1 or 2");
  require(input.dim(0) >= 1, "conv1d input is empty");
  ConvGeometry g{};
  g.length = input.dim(0);
  g.in_ch = input.dim(1);
  g.out_ch = kernel.dim(2);
  g.taps = kernel.dim(0);
  g.half = g.taps / 2;
  g.stride = stride;
  g.out_length = conv_output_length(g.length, stride);
  return g;
}

// Row o of the column matrix holds the k*in_ch receptive field of output o.
RowMatrix im2col(const Tensor& input, const ConvGeometry& g) {
  RowMatrix cols = RowMatrix::Zero(g.out_length, g.taps * g.in_ch);
  const float* x = input.data();
  for (std::size_t o = 0; o < g.out_length; ++o) {
    const auto center = static_cast<std::ptrdiff_t>(o * g.stride);
    for (std::size_t j = 0; j < g.taps; ++j) {
      const std::ptrdiff_t pos = center + static_cast<std::ptrdiff_t>(j) -
                                 static_cast<std::ptrdiff_t>(g.half);
      if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(g.length)) continue;
      std::copy_n(x + static_cast<std::size_t>(pos) * g.in_ch, g.in_ch,
                  cols.data() + o * cols.cols() + j * g.in_ch);
    }
  }
  return cols;
}

}  // namespace

std::size_t conv_output_length(std::size_t length, std::size_t stride) {
  return (length + stride - 1) / stride;
}

std::size_t pool_output_length(std::size_t length) { return (length + 1) / 2; }

Tensor conv1d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::size_t stride) {
  const ConvGeometry g = conv_geometry(input, kernel, stride);
  require(bias.size() == g.out_ch, "conv1d bias length mismatch");
  const RowMatrix cols = im2col(input, g);
  Tensor out({g.out_length, g.out_ch});
  MatrixMap y(out.data(), g.out_length, g.out_ch);
  y.noalias() = cols * ConstMatrixMap(kernel.data(), g.taps * g.in_ch, g.out_ch);
  y.rowwise() += ConstRowVector(bias.data(), g.out_ch);
  return out;
}

void conv1d_backward(const Tensor& input, const Tensor& kernel,
                     std::size_t stride, const Tensor& grad_output,
                     Tensor* grad_input, Tensor* grad_kernel,
                     Tensor* grad_bias) {
  const ConvGeometry g = conv_geometry(input, kernel, stride);
  ConstMatrixMap dy(grad_output.data(), g.out_length, g.out_ch);
  if (grad_bias) {
    RowVectorMap(grad_bias->data(), g.out_ch) += dy.colwise().sum();
  }
  if (grad_kernel) {
    const RowMatrix cols = im2col(input, g);
    MatrixMap(grad_kernel->data(), g.taps * g.in_ch, g.out_ch).noalias() +=
        cols.transpose() * dy;
  }
  if (grad_input) {
    const RowMatrix dcols =
        dy * ConstMatrixMap(kernel.data(), g.taps * g.in_ch, g.out_ch)
                 .transpose();
    float* dx = grad_input->data();
    for (std::size_t o = 0; o < g.out_length; ++o) {
      const auto center = static_cast<std::ptrdiff_t>(o * g.stride);
      for (std::size_t j = 0; j < g.taps; ++j) {
        const std::ptrdiff_t pos = center + static_cast<std::ptrdiff_t>(j) -
                                   static_cast<std::ptrdiff_t>(g.half);
        if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(g.length)) continue;
        const float* src = dcols.data() + o * dcols.cols() + j * g.in_ch;
        float* dst = dx + static_cast<std::size_t>(pos) * g.in_ch;
        for (std::size_t c = 0; c < g.in_ch; ++c) dst[c] += src[c];
      }
    }
  }
}

PoolResult maxpool1d(const Tensor& input) {
  require(input.rank() == 2, "maxpool1d input must be [len, ch]");
  require(input.dim(0) >= 1, "maxpool1d input is empty");
  const std::size_t len = input.dim(0);
  const std::size_t ch = input.dim(1);
  const std::size_t out_len = pool_output_length(len);
  PoolResult r{Tensor({out_len, ch}), std::vector<std::uint32_t>(out_len * ch)};
  for (std::size_t o = 0; o < out_len; ++o) {
    const std::size_t a = 2 * o;
    const std::size_t b = std::min(a + 1, len - 1);
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t ia = a * ch + c;
      const std::size_t ib = b * ch + c;
      const std::size_t best = input[ib] > input[ia] ? ib : ia;
      r.output[o * ch + c] = input[best];
      r.argmax[o * ch + c] = static_cast<std::uint32_t>(best);
    }
  }
  return r;
}

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require(weight.rank() == 2, "dense weight must be [n, m]");
  require(input.rank() == 1 || input.rank() == 2,
          "dense input must be [n] or [batch, n]");
  const std::size_t n = weight.dim(0);
  const std::size_t m = weight.dim(1);
  const std::size_t inner = input.shape().back();
  require(inner == n, "dense shape mismatch: input " +
                          shape_string(input.shape()) + " weight " +
                          shape_string(weight.shape()));
  require(bias.size() == m, "dense bias length mismatch");
  const std::size_t rows = input.rank() == 2 ? input.dim(0) : 1;
  Tensor out(input.rank() == 2 ? Shape{rows, m} : Shape{m});
  MatrixMap y(out.data(), rows, m);
  y.noalias() = ConstMatrixMap(input.data(), rows, n) *
                ConstMatrixMap(weight.data(), n, m);
  y.rowwise() += ConstRowVector(bias.data(), m);
  return out;
}

void dense_backward(const Tensor& input, const Tensor& weight,
                    const Tensor& grad_output, Tensor* grad_input,
                    Tensor* grad_weight, Tensor* grad_bias) {
  const std::size_t n = weight.dim(0);
  const std::size_t m = weight.dim(1);
  const std::size_t rows = input.rank() == 2 ? input.dim(0) : 1;
  ConstMatrixMap dy(grad_output.data(), rows, m);
  if (grad_bias) RowVectorMap(grad_bias->data(), m) += dy.colwise().sum();
  if (grad_weight) {
    MatrixMap(grad_weight->data(), n, m).noalias() +=
        ConstMatrixMap(input.data(), rows, n).transpose() * dy;
  }
  if (grad_input) {
    MatrixMap(grad_input->data(), rows, n).noalias() +=
        dy * ConstMatrixMap(weight.data(), n, m).transpose();
  }
}

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (float& v : out.values()) v = v > 0.0f ? v : 0.0f;
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = x;
  for (float& v : out.values()) v = 1.0f / (1.0f + std::exp(-v));
  return out;
}

Tensor l2_normalize(const Tensor& v) {
  double sq = 0.0;
  for (float x : v.values()) sq += static_cast<double>(x) * x;
  const double norm = std::sqrt(sq);
  if (norm <= kNormEpsilon) return v;
  Tensor out = v;
  for (float& x : out.values()) x = static_cast<float>(x / norm);
  return out;
}

Tensor interaction_features(const Tensor& reference, const Tensor& query) {
  require(reference.rank() >= 1 && reference.rank() <= 2 &&
              query.rank() >= 1 && query.rank() <= 2,
          "interaction inputs must be [E] or [batch, E]");
  const std::size_t e = reference.shape().back();
  require(query.shape().back() == e,
          "embedding length mismatch: " + shape_string(reference.shape()) +
              " vs " + shape_string(query.shape()));
  const std::size_t r_rows = reference.rank() == 2 ? reference.dim(0) : 1;
  const std::size_t q_rows = query.rank() == 2 ? query.dim(0) : 1;
  require(r_rows == q_rows || r_rows == 1 || q_rows == 1,
          "interaction batch mismatch");
  const std::size_t rows = std::max(r_rows, q_rows);
  const bool batched = reference.rank() == 2 || query.rank() == 2;
  Tensor out(batched ? Shape{rows, 4 * e} : Shape{4 * e});
  for (std::size_t b = 0; b < rows; ++b) {
    const float* r = reference.data() + (r_rows == 1 ? 0 : b * e);
    const float* q = query.data() + (q_rows == 1 ? 0 : b * e);
    float* o = out.data() + b * 4 * e;
    for (std::size_t i = 0; i < e; ++i) {
      const float d = q[i] - r[i];
      o[i] = r[i];
      o[e + i] = q[i];
      o[2 * e + i] = d * d;
      o[3 * e + i] = q[i] * r[i];
    }
  }
  return out;
}

Tensor gate(const Tensor& magnitude, const Tensor& prob, float offset) {
  require(magnitude.size() == prob.size(), "gate operand size mismatch");
  Tensor out = magnitude;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = magnitude[i] * prob[i] + offset;
  }
  return out;
}

float mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.size() == 0) throw EmptyBatchError("mse_loss on an empty batch");
  require(pred.size() == target.size(), "mse_loss length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - target[i];
    acc += d * d;
  }
  return static_cast<float>(acc / static_cast<double>(pred.size()));
}

float bce_loss(const Tensor& prob, const Tensor& label) {
  if (prob.size() == 0) throw EmptyBatchError("bce_loss on an empty batch");
  require(prob.size() == label.size(), "bce_loss length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double p = std::clamp(static_cast<double>(prob[i]),
                                static_cast<double>(kProbEpsilon),
                                1.0 - static_cast<double>(kProbEpsilon));
    const double y = label[i];
    acc -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return static_cast<float>(acc / static_cast<double>(prob.size()));
}

}  // namespace refquery::nd
