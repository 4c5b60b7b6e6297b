#include "refquery/model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "refquery/error.hpp"
#include "refquery/ops.hpp"

namespace refquery::model {
namespace {

std::string conv_name(std::size_t i, const char* what) {
  return "encoder.conv" + std::to_string(i + 1) + "." + what;
}

}  // namespace

void Architecture::validate() const {
  if (window == 0 || kernel % 2 == 0 || embedding == 0 || hidden == 0) {
    throw InvalidArgumentError(
        "architecture needs a positive window, odd kernel, and positive E, H");
  }
  for (std::size_t c : channels) {
    if (c == 0) throw InvalidArgumentError("channel widths must be positive");
  }
}

std::vector<std::size_t> Architecture::length_schedule() const {
  std::vector<std::size_t> lengths;
  std::size_t len = window;
  for (std::size_t i = 0; i < kConvLayers; ++i) {
    len = nd::conv_output_length(len, i == 0 ? 2 : 1);
    lengths.push_back(len);
    len = nd::pool_output_length(len);
    lengths.push_back(len);
  }
  return lengths;
}

std::size_t Architecture::flattened_size() const {
  return length_schedule().back() * channels.back();
}

std::size_t Architecture::encoder_parameter_count() const {
  std::size_t n = 0;
  std::size_t in = 1;
  for (std::size_t c : channels) {
    n += kernel * in * c + c;
    in = c;
  }
  return n + flattened_size() * embedding + embedding;
}

std::size_t Architecture::head_parameter_count() const {
  return (4 * embedding * hidden + hidden) + (hidden * hidden + hidden) +
         2 * (hidden + 1);
}

Network::Network(Architecture arch, std::uint64_t seed) : arch_(arch) {
  arch_.validate();
  std::mt19937_64 rng(seed);
  auto uniform = [&](Shape shape, std::size_t fan_in) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
    std::uniform_real_distribution<float> dist(-bound, bound);
    Tensor t(std::move(shape));
    for (float& v : t.values()) v = dist(rng);
    return t;
  };
  std::size_t in = 1;
  for (std::size_t i = 0; i < kConvLayers; ++i) {
    const std::size_t out = arch_.channels[i];
    params_.add(conv_name(i, "weight"),
                uniform({arch_.kernel, in, out}, arch_.kernel * in));
    params_.add(conv_name(i, "bias"), Tensor({out}));
    in = out;
  }
  const std::size_t flat = arch_.flattened_size();
  const std::size_t e = arch_.embedding;
  const std::size_t h = arch_.hidden;
  params_.add("encoder.projection.weight", uniform({flat, e}, flat));
  params_.add("encoder.projection.bias", Tensor({e}));
  params_.add("head.fc1.weight", uniform({4 * e, h}, 4 * e));
  params_.add("head.fc1.bias", Tensor({h}));
  params_.add("head.fc2.weight", uniform({h, h}, h));
  params_.add("head.fc2.bias", Tensor({h}));
  params_.add("head.state.weight", uniform({h, 1}, h));
  params_.add("head.state.bias", Tensor({1}));
  params_.add("head.power.weight", uniform({h, 1}, h));
  params_.add("head.power.bias", Tensor({1}));
  index_layers();
}

Network::Network(Architecture arch, nd::ParamSet params)
    : arch_(arch), params_(std::move(params)) {
  arch_.validate();
  index_layers();
  const Network reference(arch_, 0);
  if (params_.size() != reference.params_.size()) {
    throw InvalidShapeError("parameter set does not match the architecture");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_.name(i) != reference.params_.name(i) ||
        params_.value(i).shape() != reference.params_.value(i).shape()) {
      throw InvalidShapeError("parameter " + params_.name(i) +
                              " does not match the architecture");
    }
  }
}

void Network::index_layers() {
  for (std::size_t i = 0; i < kConvLayers; ++i) {
    layers_.conv_weight[i] = params_.index_of(conv_name(i, "weight"));
    layers_.conv_bias[i] = params_.index_of(conv_name(i, "bias"));
  }
  layers_.projection_weight = params_.index_of("encoder.projection.weight");
  layers_.projection_bias = params_.index_of("encoder.projection.bias");
  layers_.fc1_weight = params_.index_of("head.fc1.weight");
  layers_.fc1_bias = params_.index_of("head.fc1.bias");
  layers_.fc2_weight = params_.index_of("head.fc2.weight");
  layers_.fc2_bias = params_.index_of("head.fc2.bias");
  layers_.state_weight = params_.index_of("head.state.weight");
  layers_.state_bias = params_.index_of("head.state.bias");
  layers_.power_weight = params_.index_of("head.power.weight");
  layers_.power_bias = params_.index_of("head.power.bias");
}

void Network::set_encoder_trainable(bool trainable) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_.name(i).starts_with("encoder.")) params_.set_trainable(i, trainable);
  }
}

void Network::set_head_trainable(bool trainable) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_.name(i).starts_with("head.")) params_.set_trainable(i, trainable);
  }
}

nd::Var encode(nd::Tape& tape, const Network& net,
               std::span<const nd::Var> bound, nd::Var window) {
  const Architecture& arch = net.arch();
  const LayerIndex& li = net.layers();
  const Tensor& w = tape.value(window);
  if (w.size() != arch.window) {
    throw InvalidShapeError("encoder expects a window of " +
                            std::to_string(arch.window) + " samples, got " +
                            std::to_string(w.size()));
  }
  nd::Var x = nd::reshape(tape, window, {arch.window, 1});
  for (std::size_t i = 0; i < kConvLayers; ++i) {
    x = nd::conv1d(tape, x, bound[li.conv_weight[i]], bound[li.conv_bias[i]],
                   i == 0 ? 2 : 1);
    x = nd::relu(tape, x);
    x = nd::maxpool1d(tape, x);
  }
  x = nd::reshape(tape, x, {arch.flattened_size()});
  x = nd::dense(tape, x, bound[li.projection_weight], bound[li.projection_bias]);
  return nd::l2_normalize(tape, x);
}

HeadVars head(nd::Tape& tape, const Network& net,
              std::span<const nd::Var> bound, nd::Var reference, nd::Var query,
              float off_bias) {
  const LayerIndex& li = net.layers();
  nd::Var x = nd::interaction_features(tape, reference, query);
  x = nd::relu(tape, nd::dense(tape, x, bound[li.fc1_weight], bound[li.fc1_bias]));
  x = nd::relu(tape, nd::dense(tape, x, bound[li.fc2_weight], bound[li.fc2_bias]));
  const std::size_t rows = tape.value(x).rank() == 2 ? tape.value(x).dim(0) : 1;
  nd::Var logit = nd::dense(tape, x, bound[li.state_weight], bound[li.state_bias]);
  nd::Var prob = nd::reshape(tape, nd::sigmoid(tape, logit), {rows});
  nd::Var mag = nd::relu(
      tape, nd::dense(tape, x, bound[li.power_weight], bound[li.power_bias]));
  mag = nd::reshape(tape, mag, {rows});
  return {prob, mag, nd::gate(tape, mag, prob, off_bias)};
}

Tensor encode(const Network& net, std::span<const float> window_z) {
  nd::Tape tape;
  const auto bound = nd::bind_parameters(tape, net.params(), nullptr);
  const nd::Var in = tape.constant(
      Tensor::vector(std::vector<float>(window_z.begin(), window_z.end())));
  return tape.value(encode(tape, net, bound, in));
}

Tensor interaction_features(const Tensor& reference, const Tensor& query) {
  return nd::interaction_features(reference, query);
}

HeadOutput head_forward(const Network& net, const Tensor& reference,
                        const Tensor& query, float off_bias) {
  nd::Tape tape;
  const auto bound = nd::bind_parameters(tape, net.params(), nullptr);
  const HeadVars out = head(tape, net, bound, tape.constant_ref(reference),
                            tape.constant_ref(query), off_bias);
  const Tensor& p = tape.value(out.state_prob);
  const Tensor& y = tape.value(out.power_z);
  return {{p.values().begin(), p.values().end()},
          {y.values().begin(), y.values().end()}};
}

}  // namespace refquery::model
