#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "refquery/param_set.hpp"
#include "refquery/tensor.hpp"

namespace refquery::nd {

struct Var {
  std::uint32_t id = 0;
};

/// Records one forward pass over the fixed operator set and replays it in
/// reverse to produce gradients. Nodes are appended in evaluation order, so
/// reverse insertion order is a valid topological order.
///
/// A tape is single-use: after backward() it is consumed and any further
/// recording or backward call throws StaleTapeError.
class Tape {
 public:
  using BackwardFn =
      std::function<void(Tape&, std::uint32_t self, const Tensor& grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Tensor value);
  /// Borrowed constant; `value` must outlive the tape.
  Var constant_ref(const Tensor& value);
  /// Leaf whose gradient is kept on the tape (read it with grad()).
  Var variable(Tensor value);
  /// Borrowed parameter leaf. Gradients accumulate into `grad_sink`;
  /// a null sink marks the parameter frozen.
  Var parameter(const Tensor& value, Tensor* grad_sink);

  const Tensor& value(Var v) const;
  /// Accumulated gradient of a node; empty tensor when none was produced.
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Seeds d(loss)/d(loss) = 1 for a single-element node.
  void backward(Var loss);
  /// Seeds an arbitrary upstream gradient at `root`.
  void backward(Var root, const Tensor& seed);

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

  // Operator plumbing.
  Var record(Tensor value, bool requires_grad, BackwardFn backward);
  /// Gradient buffer for `v`, allocated on first use; null when `v` does not
  /// require a gradient.
  Tensor* grad_target(Var v);

 private:
  struct Node {
    Tensor value;
    const Tensor* borrowed = nullptr;
    Tensor grad;
    Tensor* sink = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };
  void check_live() const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

/// Binds every entry of `params` as a parameter leaf. Trainable entries
/// accumulate into the matching slot of `grads` (when given).
std::vector<Var> bind_parameters(Tape& tape, const ParamSet& params,
                                 Gradients* grads);

Var conv1d(Tape& t, Var input, Var kernel, Var bias, std::size_t stride);
Var maxpool1d(Tape& t, Var input);
Var relu(Tape& t, Var x);
Var sigmoid(Tape& t, Var x);
Var reshape(Tape& t, Var x, Shape shape);
Var dense(Tape& t, Var input, Var weight, Var bias);
Var l2_normalize(Tape& t, Var v);
Var interaction_features(Tape& t, Var reference, Var query);
Var gate(Tape& t, Var magnitude, Var prob, float offset);
/// Flattens and concatenates the inputs into one vector.
Var concat(Tape& t, std::span<const Var> parts);
Var add(Tape& t, Var a, Var b);
Var scale(Tape& t, Var x, float factor);
Var mse_loss(Tape& t, Var pred, Var target);
Var bce_loss(Tape& t, Var prob, Var label);

}  // namespace refquery::nd
