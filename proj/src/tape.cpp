#include "refquery/tape.hpp"

#include <algorithm>
#include <cmath>

#include "refquery/error.hpp"
#include "refquery/ops.hpp"

namespace refquery::nd {

Var Tape::constant(Tensor value) { return record(std::move(value), false, {}); }

Var Tape::constant_ref(const Tensor& value) {
  check_live();
  Node n;
  n.borrowed = &value;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::variable(Tensor value) { return record(std::move(value), true, {}); }

Var Tape::parameter(const Tensor& value, Tensor* grad_sink) {
  check_live();
  Node n;
  n.borrowed = &value;
  n.sink = grad_sink;
  n.requires_grad = grad_sink != nullptr;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tensor& Tape::value(Var v) const {
  const Node& n = nodes_.at(v.id);
  return n.borrowed ? *n.borrowed : n.value;
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  return n.sink ? *n.sink : n.grad;
}

Var Tape::record(Tensor value, bool requires_grad, BackwardFn backward) {
  check_live();
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor* Tape::grad_target(Var v) {
  Node& n = nodes_.at(v.id);
  if (!n.requires_grad) return nullptr;
  if (n.sink) return n.sink;
  if (n.grad.size() != value(v).size()) n.grad = Tensor(value(v).shape());
  return &n.grad;
}

void Tape::check_live() const {
  if (consumed_) throw StaleTapeError("tape already consumed by backward()");
}

void Tape::backward(Var loss) {
  if (value(loss).size() != 1) {
    throw InvalidShapeError("backward(loss) needs a single-element node, got " +
                            shape_string(value(loss).shape()));
  }
  backward(loss, Tensor(value(loss).shape(), 1.0f));
}

void Tape::backward(Var root, const Tensor& seed) {
  check_live();
  consumed_ = true;
  if (seed.size() != value(root).size()) {
    throw InvalidShapeError("backward seed shape mismatch");
  }
  if (Tensor* g = grad_target(root)) {
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += seed[i];
  }
  for (std::uint32_t id = root.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backward || n.grad.size() == 0) continue;
    n.backward(*this, id, n.grad);
  }
}

std::vector<Var> bind_parameters(Tape& tape, const ParamSet& params,
                                 Gradients* grads) {
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor* sink = (grads && params.trainable(i)) ? &(*grads)[i] : nullptr;
    vars.push_back(tape.parameter(params.value(i), sink));
  }
  return vars;
}

namespace {

bool any_grad(const Tape& t, std::initializer_list<Var> vars) {
  return std::any_of(vars.begin(), vars.end(),
                     [&](Var v) { return t.requires_grad(v); });
}

void accumulate(Tensor* dst, const Tensor& src) {
  if (!dst) return;
  for (std::size_t i = 0; i < src.size(); ++i) (*dst)[i] += src[i];
}

}  // namespace

Var conv1d(Tape& t, Var input, Var kernel, Var bias, std::size_t stride) {
  Tensor out = nd::conv1d(t.value(input), t.value(kernel), t.value(bias), stride);
  return t.record(std::move(out), any_grad(t, {input, kernel, bias}),
                  [=](Tape& tp, std::uint32_t, const Tensor& g) {
                    conv1d_backward(tp.value(input), tp.value(kernel), stride, g,
                                    tp.grad_target(input),
                                    tp.grad_target(kernel),
                                    tp.grad_target(bias));
                  });
}

Var maxpool1d(Tape& t, Var input) {
  PoolResult r = nd::maxpool1d(t.value(input));
  return t.record(std::move(r.output), t.requires_grad(input),
                  [=, argmax = std::move(r.argmax)](Tape& tp, std::uint32_t,
                                                   const Tensor& g) {
                    Tensor* dx = tp.grad_target(input);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      (*dx)[argmax[i]] += g[i];
                    }
                  });
}

Var relu(Tape& t, Var x) {
  return t.record(nd::relu(t.value(x)), t.requires_grad(x),
                  [=](Tape& tp, std::uint32_t, const Tensor& g) {
                    const Tensor& in = tp.value(x);
                    Tensor* dx = tp.grad_target(x);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      if (in[i] > 0.0f) (*dx)[i] += g[i];
                    }
                  });
}

Var sigmoid(Tape& t, Var x) {
  return t.record(nd::sigmoid(t.value(x)), t.requires_grad(x),
                  [=](Tape& tp, std::uint32_t self, const Tensor& g) {
                    const Tensor& y = tp.value(Var{self});
                    Tensor* dx = tp.grad_target(x);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      (*dx)[i] += g[i] * y[i] * (1.0f - y[i]);
                    }
                  });
}

Var reshape(Tape& t, Var x, Shape shape) {
  return t.record(t.value(x).reshaped(std::move(shape)), t.requires_grad(x),
                  [=](Tape& tp, std::uint32_t, const Tensor& g) {
                    accumulate(tp.grad_target(x), g);
                  });
}

Var dense(Tape& t, Var input, Var weight, Var bias) {
  Tensor out = nd::dense(t.value(input), t.value(weight), t.value(bias));
  return t.record(std::move(out), any_grad(t, {input, weight, bias}),
                  [=](Tape& tp, std::uint32_t, const Tensor& g) {
                    dense_backward(tp.value(input), tp.value(weight), g,
                                   tp.grad_target(input),
                                   tp.grad_target(weight),
                                   tp.grad_target(bias));
                  });
}

Var l2_normalize(Tape& t, Var v) {
  const Tensor& in = t.value(v);
  double sq = 0.0;
  for (float x : in.values()) sq += static_cast<double>(x) * x;
  const float norm = static_cast<float>(std::sqrt(sq));
  return t.record(nd::l2_normalize(in), t.requires_grad(v),
                  [=](Tape& tp, std::uint32_t self, const Tensor& g) {
                    Tensor* dv = tp.grad_target(v);
                    if (norm <= kNormEpsilon) {
                      accumulate(dv, g);
                      return;
                    }
                    const Tensor& y = tp.value(Var{self});
                    double dot = 0.0;
                    for (std::size_t i = 0; i < g.size(); ++i) dot += y[i] * g[i];
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      (*dv)[i] += (g[i] - y[i] * static_cast<float>(dot)) / norm;
                    }
                  });
}

Var interaction_features(Tape& t, Var reference, Var query) {
  Tensor out = nd::interaction_features(t.value(reference), t.value(query));
  return t.record(
      std::move(out), any_grad(t, {reference, query}),
      [=](Tape& tp, std::uint32_t, const Tensor& g) {
        const Tensor& r = tp.value(reference);
        const Tensor& q = tp.value(query);
        const std::size_t e = r.shape().back();
        const std::size_t r_rows = r.rank() == 2 ? r.dim(0) : 1;
        const std::size_t q_rows = q.rank() == 2 ? q.dim(0) : 1;
        const std::size_t rows = std::max(r_rows, q_rows);
        Tensor* dr = tp.grad_target(reference);
        Tensor* dq = tp.grad_target(query);
        for (std::size_t b = 0; b < rows; ++b) {
          const std::size_t ro = r_rows == 1 ? 0 : b * e;
          const std::size_t qo = q_rows == 1 ? 0 : b * e;
          const float* gb = g.data() + b * 4 * e;
          for (std::size_t i = 0; i < e; ++i) {
            const float d = q[qo + i] - r[ro + i];
            const float g_sq = gb[2 * e + i] * 2.0f * d;
            if (dr) (*dr)[ro + i] += gb[i] - g_sq + gb[3 * e + i] * q[qo + i];
            if (dq) (*dq)[qo + i] += gb[e + i] + g_sq + gb[3 * e + i] * r[ro + i];
          }
        }
      });
}

Var gate(Tape& t, Var magnitude, Var prob, float offset) {
  Tensor out = nd::gate(t.value(magnitude), t.value(prob), offset);
  return t.record(std::move(out), any_grad(t, {magnitude, prob}),
                  [=](Tape& tp, std::uint32_t, const Tensor& g) {
                    const Tensor& m = tp.value(magnitude);
                    const Tensor& p = tp.value(prob);
                    Tensor* dm = tp.grad_target(magnitude);
                    Tensor* dp = tp.grad_target(prob);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      if (dm) (*dm)[i] += g[i] * p[i];
                      if (dp) (*dp)[i] += g[i] * m[i];
                    }
                  });
}

Var concat(Tape& t, std::span<const Var> parts) {
  std::vector<float> joined;
  bool needs_grad = false;
  for (Var p : parts) {
    const Tensor& v = t.value(p);
    joined.insert(joined.end(), v.values().begin(), v.values().end());
    needs_grad = needs_grad || t.requires_grad(p);
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.record(Tensor::vector(std::move(joined)), needs_grad,
                  [inputs = std::move(inputs)](Tape& tp, std::uint32_t,
                                               const Tensor& g) {
                    std::size_t offset = 0;
                    for (Var p : inputs) {
                      const std::size_t n = tp.value(p).size();
                      if (Tensor* dp = tp.grad_target(p)) {
                        for (std::size_t i = 0; i < n; ++i) {
                          (*dp)[i] += g[offset + i];
                        }
                      }
                      offset += n;
                    }
                  });
}

Var add(Tape& t, Var a, Var b) {
  const Tensor& va = t.value(a);
  const Tensor& vb = t.value(b);
  if (va.size() != vb.size()) throw InvalidShapeError("add size mismatch");
  Tensor out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
  return t.record(std::move(out), any_grad(t, {a, b}),
                  [=](Tape& tp, std::uint32_t, const Tensor& g) {
                    accumulate(tp.grad_target(a), g);
                    accumulate(tp.grad_target(b), g);
                  });
}

Var scale(Tape& t, Var x, float factor) {
  Tensor out = t.value(x);
  for (float& v : out.values()) v *= factor;
  return t.record(std::move(out), t.requires_grad(x),
                  [=](Tape& tp, std::uint32_t, const Tensor& g) {
                    Tensor* dx = tp.grad_target(x);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      (*dx)[i] += g[i] * factor;
                    }
                  });
}

Var mse_loss(Tape& t, Var pred, Var target) {
  const float loss = nd::mse_loss(t.value(pred), t.value(target));
  return t.record(Tensor::scalar(loss), any_grad(t, {pred, target}),
                  [=](Tape& tp, std::uint32_t, const Tensor& g) {
                    const Tensor& p = tp.value(pred);
                    const Tensor& y = tp.value(target);
                    const float k = 2.0f * g[0] / static_cast<float>(p.size());
                    Tensor* dp = tp.grad_target(pred);
                    Tensor* dy = tp.grad_target(target);
                    for (std::size_t i = 0; i < p.size(); ++i) {
                      const float d = k * (p[i] - y[i]);
                      if (dp) (*dp)[i] += d;
                      if (dy) (*dy)[i] -= d;
                    }
                  });
}

Var bce_loss(Tape& t, Var prob, Var label) {
  const float loss = nd::bce_loss(t.value(prob), t.value(label));
  return t.record(
      Tensor::scalar(loss), t.requires_grad(prob),
      [=](Tape& tp, std::uint32_t, const Tensor& g) {
        const Tensor& p = tp.value(prob);
        const Tensor& y = tp.value(label);
        const float k = g[0] / static_cast<float>(p.size());
        Tensor* dp = tp.grad_target(prob);
        // The derivative is evaluated at the clamped probability so that a
        // saturated sigmoid still receives a corrective signal.
        for (std::size_t i = 0; i < p.size(); ++i) {
          const float pc = std::clamp(p[i], kProbEpsilon, 1.0f - kProbEpsilon);
          (*dp)[i] += k * (-y[i] / pc + (1.0f - y[i]) / (1.0f - pc));
        }
      });
}

}  // namespace refquery::nd
