#include "refquery/adam.hpp"

#include <cmath>

#include "refquery/error.hpp"

namespace refquery::nd {

AdamState::AdamState(const ParamSet& params, AdamOptions options)
    : options_(options), mask_(params.trainable_mask()) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params.value(i).shape());
    v_.emplace_back(params.value(i).shape());
  }
}

void adam_step(AdamState& state, ParamSet& params, const Gradients& grads) {
  if (params.trainable_mask() != state.mask_) {
    throw InvalidArgumentError(
        "trainable flags changed during an optimization run");
  }
  if (grads.size() != params.size()) {
    throw InvalidShapeError("gradient count does not match parameter count");
  }
  ++state.step_;
  const AdamOptions& o = state.options_;
  const double t = static_cast<double>(state.step_);
  const float correction1 = static_cast<float>(1.0 - std::pow(o.beta1, t));
  const float correction2 = static_cast<float>(1.0 - std::pow(o.beta2, t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!state.mask_[i]) continue;
    Tensor& p = params.value(i);
    const Tensor& g = grads[i];
    if (g.size() != p.size()) {
      throw InvalidShapeError("gradient shape mismatch for " + params.name(i));
    }
    Tensor& m = state.m_[i];
    Tensor& v = state.v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = o.beta1 * m[j] + (1.0f - o.beta1) * g[j];
      v[j] = o.beta2 * v[j] + (1.0f - o.beta2) * g[j] * g[j];
      const float m_hat = m[j] / correction1;
      const float v_hat = v[j] / correction2;
      p[j] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon);
    }
  }
}

}  // namespace refquery::nd
