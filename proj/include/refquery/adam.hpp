#pragma once

#include <cstdint>
#include <vector>

#include "refquery/param_set.hpp"

namespace refquery::nd {

struct AdamOptions {
  float learning_rate = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
};

/// Moment accumulators for one optimization run. The trainable mask of the
/// ParamSet is captured at construction and must not change afterwards.
class AdamState {
 public:
  AdamState(const ParamSet& params, AdamOptions options);

  const AdamOptions& options() const { return options_; }
  std::uint64_t step() const { return step_; }
  const Tensor& first_moment(std::size_t i) const { return m_.at(i); }
  const Tensor& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  friend void adam_step(AdamState&, ParamSet&, const Gradients&);

  AdamOptions options_;
  std::vector<bool> mask_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::uint64_t step_ = 0;
};

/// Bias-corrected Adam update of the trainable entries of `params`.
void adam_step(AdamState& state, ParamSet& params, const Gradients& grads);

}  // namespace refquery::nd
