#pragma once
// Analytic (fp32 tape) versus central finite-difference (fp64 oracle)
// gradients of the training loss on a reduced network.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "oracle.hpp"
#include "refquery/model.hpp"
#include "refquery/ops.hpp"
#include "refquery/tape.hpp"

namespace gradcheck {

inline constexpr double kStep = 1e-4;
inline constexpr double kTolerance = 1e-3;

inline refquery::model::Architecture tiny_arch() {
  refquery::model::Architecture a;
  a.window = 16;
  a.channels = {2, 2, 4, 4, 8};
  a.embedding = 4;
  a.hidden = 4;
  return a;
}

struct Report {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t nonzero = 0;
  std::string worst;
};

/// |a - n| / max(|a|, |n|); 0 when both are exactly 0.
inline double rel_error(double a, double n) {
  const double scale = std::max(std::abs(a), std::abs(n));
  return scale == 0.0 ? 0.0 : std::abs(a - n) / scale;
}

inline void record(Report& r, double analytic, double numeric, const std::string& what) {
  const double e = rel_error(analytic, numeric);
  ++r.checked;
  if (analytic != 0.0 || numeric != 0.0) ++r.nonzero;
  if (e > r.max_rel_error) {
    r.max_rel_error = e;
    r.worst = what + " analytic=" + std::to_string(analytic) +
              " numeric=" + std::to_string(numeric);
  }
}

struct Fixture {
  refquery::model::Network net;
  std::vector<oracle::Item> items;
  float off = -0.6f;
};

/// Minimum distance from a ReLU or max-pool kink a fixture must keep. A
/// perturbation of kStep moves any pre-activation by far less than this.
inline constexpr double kKinkMargin = 1e-3;

inline Fixture draw_fixture(std::uint64_t seed, std::size_t batch, bool embedding_reference) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  std::uniform_real_distribution<float> small(0.0f, 0.3f);
  Fixture f{refquery::model::Network(tiny_arch(), seed), {}, -0.6f};
  auto& ps = f.net.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps.name(i).ends_with(".bias")) {
      for (float& v : ps.value(i).values()) v = small(rng);
    }
  }
  // Keep the state branch away from saturation and the magnitude ReLU active.
  ps.value("head.power.bias")[0] = 0.5f;
  const std::size_t L = tiny_arch().window;
  oracle::Vec embedding;
  if (embedding_reference) {
    const refquery::Tensor e = refquery::nd::l2_normalize(
        refquery::Tensor::vector({gauss(rng), gauss(rng), gauss(rng), gauss(rng)}));
    embedding.assign(e.values().begin(), e.values().end());
  }
  for (std::size_t b = 0; b < batch; ++b) {
    oracle::Item it;
    for (std::size_t i = 0; i < L; ++i) it.query.push_back(gauss(rng));
    if (embedding_reference) {
      it.reference = embedding;
      it.reference_is_embedding = true;
    } else {
      for (std::size_t i = 0; i < L; ++i) it.reference.push_back(gauss(rng));
    }
    it.power_z = gauss(rng);
    it.on = static_cast<double>(b % 2);
    f.items.push_back(std::move(it));
  }
  return f;
}

/// First fixture at or after `seed` whose forward pass stays kKinkMargin
/// away from every ReLU and max-pool decision boundary.
inline Fixture make_fixture(std::uint64_t seed, std::size_t batch, bool embedding_reference) {
  for (std::uint64_t s = seed;; s += 1000) {
    Fixture f = draw_fixture(s, batch, embedding_reference);
    oracle::Counter probe;
    oracle::loss(oracle::Net::from(f.net), f.items, f.off, &probe);
    if (probe.relu_margin >= kKinkMargin && probe.pool_margin >= kKinkMargin) return f;
  }
}

inline refquery::Tensor as_tensor(const oracle::Vec& v) {
  return refquery::Tensor::vector(std::vector<float>(v.begin(), v.end()));
}

/// Every network parameter, references passed through the encoder.
inline Report check_network(std::uint64_t seed) {
  using namespace refquery;
  Fixture f = make_fixture(seed, 4, false);
  const std::size_t B = f.items.size();
  const std::size_t E = f.net.arch().embedding;

  nd::Tape tape;
  nd::Gradients grads(f.net.params());
  const auto bound = nd::bind_parameters(tape, f.net.params(), &grads);
  std::vector<nd::Var> eq, er;
  Tensor power(Shape{B}), on(Shape{B});
  for (std::size_t b = 0; b < B; ++b) {
    eq.push_back(model::encode(tape, f.net, bound, tape.constant(as_tensor(f.items[b].query))));
    er.push_back(model::encode(tape, f.net, bound, tape.constant(as_tensor(f.items[b].reference))));
    power[b] = static_cast<float>(f.items[b].power_z);
    on[b] = static_cast<float>(f.items[b].on);
  }
  const auto q = nd::reshape(tape, nd::concat(tape, eq), {B, E});
  const auto r = nd::reshape(tape, nd::concat(tape, er), {B, E});
  const auto out = model::head(tape, f.net, bound, r, q, f.off);
  const auto loss = nd::add(tape, nd::mse_loss(tape, out.power_z, tape.constant(power)),
                            nd::bce_loss(tape, out.state_prob, tape.constant(on)));
  tape.backward(loss);

  oracle::Net on_net = oracle::Net::from(f.net);
  Report report;
  const auto& ps = f.net.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    oracle::Vec& values = on_net.p.at(ps.name(i));
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      values[j] = saved + kStep;
      const double up = oracle::loss(on_net, f.items, f.off);
      values[j] = saved - kStep;
      const double down = oracle::loss(on_net, f.items, f.off);
      values[j] = saved;
      record(report, grads[i][j], (up - down) / (2 * kStep),
             ps.name(i) + "[" + std::to_string(j) + "]");
    }
  }
  return report;
}

/// The reference embedding against a frozen network. Also reports whether
/// any network gradient sink received a nonzero value.
inline Report check_embedding(std::uint64_t seed, bool* frozen_untouched = nullptr) {
  using namespace refquery;
  Fixture f = make_fixture(seed, 6, true);
  const std::size_t B = f.items.size();
  const std::size_t E = f.net.arch().embedding;
  f.net.params().set_all_trainable(false);

  nd::Tape tape;
  nd::Gradients net_grads(f.net.params());
  const auto bound = nd::bind_parameters(tape, f.net.params(), &net_grads);
  Tensor embedding = as_tensor(f.items[0].reference);
  Tensor emb_grad(Shape{E});
  const nd::Var er = tape.parameter(embedding, &emb_grad);
  std::vector<nd::Var> eq;
  Tensor power(Shape{B}), on(Shape{B});
  for (std::size_t b = 0; b < B; ++b) {
    eq.push_back(model::encode(tape, f.net, bound, tape.constant(as_tensor(f.items[b].query))));
    power[b] = static_cast<float>(f.items[b].power_z);
    on[b] = static_cast<float>(f.items[b].on);
  }
  const auto q = nd::reshape(tape, nd::concat(tape, eq), {B, E});
  const auto out = model::head(tape, f.net, bound, er, q, f.off);
  const auto loss = nd::add(tape, nd::mse_loss(tape, out.power_z, tape.constant(power)),
                            nd::bce_loss(tape, out.state_prob, tape.constant(on)));
  tape.backward(loss);

  if (frozen_untouched) {
    *frozen_untouched = true;
    for (std::size_t i = 0; i < net_grads.size(); ++i) {
      for (float g : net_grads[i].values()) {
        if (g != 0.0f) *frozen_untouched = false;
      }
    }
  }

  const oracle::Net on_net = oracle::Net::from(f.net);
  Report report;
  for (std::size_t j = 0; j < E; ++j) {
    auto perturbed = [&](double delta) {
      auto items = f.items;
      for (auto& it : items) it.reference[j] += delta;
      return oracle::loss(on_net, items, f.off);
    };
    record(report, emb_grad[j], (perturbed(kStep) - perturbed(-kStep)) / (2 * kStep),
           "embedding[" + std::to_string(j) + "]");
  }
  return report;
}

}  // namespace gradcheck
