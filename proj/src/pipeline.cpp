#include "refquery/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <tuple>

#include "refquery/adam.hpp"
#include "refquery/error.hpp"
#include "refquery/ops.hpp"
#include "refquery/parallel.hpp"
#include "refquery/random.hpp"
#include "refquery/tape.hpp"

namespace refquery::pipeline {
namespace {

constexpr std::size_t kMaxChunks = 8;
constexpr std::size_t kHeadBlock = 4096;

// Splits [0, count) into at most kMaxChunks contiguous ranges. The split
// depends only on `count`, which keeps reductions independent of threads.
std::vector<std::pair<std::size_t, std::size_t>> chunk_ranges(std::size_t count) {
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  const std::size_t chunks = std::min(kMaxChunks, count);
  for (std::size_t c = 0; c < chunks; ++c) {
    ranges.emplace_back(count * c / chunks, count * (c + 1) / chunks);
  }
  return ranges;
}

std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  const bool ok = stage1_learning_rate >= 0.0f && stage2_learning_rate >= 0.0f &&
                  batch_size > 0 && stage1_max_epochs > 0 &&
                  stage2_max_epochs > 0 && embedding > 0 && hidden > 0 &&
                  window > 0 && window % 2 == 1 && split_ratio > 0.0 &&
                  split_ratio < 1.0 && stage1_window_stride > 0 &&
                  stage2_batch_size > 0;
  if (!ok) throw InvalidArgumentError("invalid training configuration");
}

std::size_t TrainConfig::worker_threads() const {
  return threads == 0 ? default_threads() : threads;
}

BuildingSplit split_buildings(std::vector<std::string> ids, double ratio,
                              std::uint64_t seed) {
  if (ids.size() < 2) {
    throw InvalidArgumentError("a train/validation split needs at least 2 buildings");
  }
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw InvalidArgumentError("split ratio must lie in (0, 1)");
  }
  std::sort(ids.begin(), ids.end());
  std::mt19937_64 rng(derive_seed(seed, "building-split"));
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n = static_cast<double>(ids.size());
  const auto train = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(ratio * n)), 1, ids.size() - 1);
  BuildingSplit split;
  split.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(train));
  split.validation.assign(ids.begin() + static_cast<std::ptrdiff_t>(train), ids.end());
  return split;
}

bool EarlyStopping::update(std::size_t epoch, double loss) {
  last_improved_ = !has_best_ || loss < best_loss_;
  if (last_improved_) {
    has_best_ = true;
    best_loss_ = loss;
    best_epoch_ = epoch;
    stale_ = 0;
    return false;
  }
  ++stale_;
  return stale_ >= patience_;
}

// ---- Stage I -------------------------------------------------------------

SourceDataset::SourceDataset(std::vector<win::PreparedBuilding> buildings,
                             win::Normalizers normalizers, std::size_t window)
    : window_(window), normalizers_(normalizers), prepared_(std::move(buildings)) {
  for (const auto& pb : prepared_) {
    Building b;
    b.id = pb.id;
    b.mains_z = win::znorm_apply(normalizers_.query, pb.mains.values,
                                 win::Direction::kForward);
    b.window_starts = pb.window_starts;
    for (const auto& pa : pb.appliances) {
      Appliance a;
      a.name = pa.name;
      for (const auto& w : pa.bank.windows) {
        a.bank_z.push_back(
            win::znorm_apply(normalizers_.reference, w, win::Direction::kForward));
      }
      a.reference_draws = pa.reference_draws;
      a.power_z = win::znorm_apply(normalizers_.power, pa.series.values,
                                   win::Direction::kForward);
      a.on = pa.mask.bits;
      b.appliances.push_back(std::move(a));
    }
    buildings_.push_back(std::move(b));
  }
}

BatchStats stage1_batch(const model::Network& net, float off_bias,
                        const SourceDataset& data,
                        std::span<const SampleRef> samples, nd::Gradients* grads,
                        std::size_t threads) {
  const auto& buildings = data.buildings();
  const std::size_t window = data.window();
  const std::size_t p = win::center_offset(window);
  const std::size_t e = net.arch().embedding;
  const nd::ParamSet& params = net.params();

  // Distinct reference windows, in first-use order.
  std::map<std::tuple<std::size_t, std::size_t, std::uint32_t>, std::size_t> slot_of;
  std::vector<const std::vector<float>*> ref_windows;
  std::vector<std::vector<std::size_t>> sample_slots(samples.size());
  std::size_t quadruples = 0;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto& b = buildings.at(samples[s].building);
    for (std::size_t k = 0; k < b.appliances.size(); ++k) {
      const auto& a = b.appliances[k];
      const std::uint32_t draw = a.reference_draws.at(samples[s].t);
      const auto key = std::make_tuple(samples[s].building, k, draw);
      auto [it, inserted] = slot_of.try_emplace(key, ref_windows.size());
      if (inserted) ref_windows.push_back(&a.bank_z[draw]);
      sample_slots[s].push_back(it->second);
    }
    quadruples += b.appliances.size();
  }
  if (quadruples == 0) throw EmptyBatchError("Stage I batch has no quadruples");
  const float weight_scale = 1.0f / static_cast<float>(quadruples);

  const auto ref_chunks = chunk_ranges(ref_windows.size());
  const auto sample_chunks = chunk_ranges(samples.size());
  std::vector<nd::Gradients> ref_grads;
  std::vector<nd::Gradients> sample_grads;
  if (grads) {
    ref_grads.assign(ref_chunks.size(), nd::Gradients(params));
    sample_grads.assign(sample_chunks.size(), nd::Gradients(params));
  }

  // Reference encoder passes, kept alive for the backward sweep.
  std::vector<nd::Tape> ref_tapes(ref_windows.size());
  std::vector<nd::Var> ref_out(ref_windows.size());
  std::vector<std::vector<nd::Var>> ref_bound(ref_windows.size());
  parallel_for(ref_chunks.size(), threads, [&](std::size_t c) {
    for (std::size_t r = ref_chunks[c].first; r < ref_chunks[c].second; ++r) {
      nd::Tape& tape = ref_tapes[r];
      const auto bound =
          nd::bind_parameters(tape, params, grads ? &ref_grads[c] : nullptr);
      const nd::Var in = tape.constant(Tensor::vector(*ref_windows[r]));
      ref_out[r] = model::encode(tape, net, bound, in);
    }
  });

  // Query passes through encoder and head.
  std::vector<std::vector<Tensor>> ref_upstream(samples.size());
  std::vector<double> sample_loss(samples.size());
  std::vector<std::vector<float>> preds(samples.size()), targets(samples.size()),
      probs(samples.size()), labels(samples.size());
  parallel_for(sample_chunks.size(), threads, [&](std::size_t c) {
    for (std::size_t s = sample_chunks[c].first; s < sample_chunks[c].second; ++s) {
      const auto& b = buildings[samples[s].building];
      const std::size_t t = samples[s].t;
      const std::size_t k_count = b.appliances.size();
      if (k_count == 0) continue;
      nd::Tape tape;
      const auto bound =
          nd::bind_parameters(tape, params, grads ? &sample_grads[c] : nullptr);
      const nd::Var query = tape.constant(Tensor::vector(std::vector<float>(
          b.mains_z.begin() + static_cast<std::ptrdiff_t>(t),
          b.mains_z.begin() + static_cast<std::ptrdiff_t>(t + window))));
      const nd::Var e_q = model::encode(tape, net, bound, query);
      std::vector<nd::Var> refs;
      for (std::size_t k = 0; k < k_count; ++k) {
        const Tensor& e_r = ref_tapes[sample_slots[s][k]].value(ref_out[sample_slots[s][k]]);
        refs.push_back(grads ? tape.variable(e_r) : tape.constant(e_r));
      }
      const nd::Var stacked = nd::reshape(tape, nd::concat(tape, refs), {k_count, e});
      const model::HeadVars out = model::head(tape, net, bound, stacked, e_q, off_bias);

      Tensor power(Shape{k_count});
      Tensor on(Shape{k_count});
      for (std::size_t k = 0; k < k_count; ++k) {
        power[k] = b.appliances[k].power_z[t + p];
        on[k] = b.appliances[k].on[t + p];
      }
      const nd::Var mse = nd::mse_loss(tape, out.power_z, tape.constant(power));
      const nd::Var bce = nd::bce_loss(tape, out.state_prob, tape.constant(on));
      const nd::Var loss = nd::scale(tape, nd::add(tape, mse, bce),
                                     static_cast<float>(k_count) * weight_scale);
      sample_loss[s] = tape.value(loss)[0];
      const Tensor& y = tape.value(out.power_z);
      const Tensor& pr = tape.value(out.state_prob);
      preds[s].assign(y.values().begin(), y.values().end());
      probs[s].assign(pr.values().begin(), pr.values().end());
      targets[s].assign(power.values().begin(), power.values().end());
      labels[s].assign(on.values().begin(), on.values().end());
      if (grads) {
        tape.backward(loss);
        for (nd::Var r : refs) ref_upstream[s].push_back(tape.grad(r));
      }
    }
  });

  if (grads) {
    std::vector<Tensor> seeds(ref_windows.size(), Tensor(Shape{e}));
    for (std::size_t s = 0; s < samples.size(); ++s) {
      for (std::size_t k = 0; k < ref_upstream[s].size(); ++k) {
        Tensor& seed = seeds[sample_slots[s][k]];
        const Tensor& g = ref_upstream[s][k];
        for (std::size_t i = 0; i < e; ++i) seed[i] += g[i];
      }
    }
    parallel_for(ref_chunks.size(), threads, [&](std::size_t c) {
      for (std::size_t r = ref_chunks[c].first; r < ref_chunks[c].second; ++r) {
        ref_tapes[r].backward(ref_out[r], seeds[r]);
      }
    });
    for (const auto& g : sample_grads) grads->add(g);
    for (const auto& g : ref_grads) grads->add(g);
  }

  BatchStats stats;
  stats.quadruples = quadruples;
  for (double l : sample_loss) stats.loss += l;
  std::vector<float> all_pred, all_target, all_prob, all_label;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    all_pred.insert(all_pred.end(), preds[s].begin(), preds[s].end());
    all_target.insert(all_target.end(), targets[s].begin(), targets[s].end());
    all_prob.insert(all_prob.end(), probs[s].begin(), probs[s].end());
    all_label.insert(all_label.end(), labels[s].begin(), labels[s].end());
  }
  stats.mse = nd::mse_loss(Tensor::vector(std::move(all_pred)),
                           Tensor::vector(std::move(all_target)));
  stats.bce = nd::bce_loss(Tensor::vector(std::move(all_prob)),
                           Tensor::vector(std::move(all_label)));
  return stats;
}

namespace {

std::vector<SampleRef> sample_refs(const SourceDataset& data, std::size_t stride) {
  std::vector<SampleRef> refs;
  for (std::size_t b = 0; b < data.buildings().size(); ++b) {
    const auto& building = data.buildings()[b];
    if (building.appliances.empty()) continue;
    for (std::size_t i = 0; i < building.window_starts.size(); i += stride) {
      refs.push_back({b, building.window_starts[i]});
    }
  }
  return refs;
}

// Consecutive runs of samples holding at least `batch_size` quadruples.
std::vector<std::span<const SampleRef>> make_batches(const SourceDataset& data,
                                                     std::span<const SampleRef> refs,
                                                     std::size_t batch_size) {
  std::vector<std::span<const SampleRef>> batches;
  std::size_t begin = 0;
  std::size_t quads = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    quads += data.buildings()[refs[i].building].appliances.size();
    if (quads >= batch_size || i + 1 == refs.size()) {
      batches.push_back(refs.subspan(begin, i + 1 - begin));
      begin = i + 1;
      quads = 0;
    }
  }
  return batches;
}

double dataset_loss(const model::Network& net, float off_bias,
                    const SourceDataset& data, std::span<const SampleRef> refs,
                    std::size_t batch_size, std::size_t threads) {
  double weighted = 0.0;
  std::size_t total = 0;
  for (auto batch : make_batches(data, refs, batch_size)) {
    const BatchStats s = stage1_batch(net, off_bias, data, batch, nullptr, threads);
    weighted += s.loss * static_cast<double>(s.quadruples);
    total += s.quadruples;
  }
  if (total == 0) throw EmptyInputError("no quadruples to evaluate");
  return weighted / static_cast<double>(total);
}

std::vector<win::PreparedBuilding> prepare_all(std::span<const ts::BuildingSeries> buildings,
                                               const TrainConfig& cfg,
                                               std::span<const std::string> appliances,
                                               std::vector<std::string>& warnings) {
  std::vector<win::PreparedBuilding> out;
  for (const auto& b : buildings) {
    auto pb = win::prepare_building(b, cfg.window, derive_seed(cfg.seed, "reference-draws"),
                                    appliances);
    warnings.insert(warnings.end(), pb.warnings.begin(), pb.warnings.end());
    out.push_back(std::move(pb));
  }
  return out;
}

}  // namespace

Stage1Result train_stage1(const TrainConfig& cfg,
                          std::span<const ts::BuildingSeries> train,
                          std::span<const ts::BuildingSeries> validation,
                          std::span<const std::string> appliances,
                          const ProgressFn& progress) {
  cfg.validate();
  if (train.empty() || validation.empty()) {
    throw InvalidArgumentError("Stage I needs training and validation buildings");
  }
  Stage1Result result;
  auto train_prepared = prepare_all(train, cfg, appliances, result.warnings);
  auto val_prepared = prepare_all(validation, cfg, appliances, result.warnings);
  std::vector<win::PreparedBuilding> usable;
  for (const auto& pb : train_prepared) {
    if (!pb.appliances.empty()) usable.push_back(pb);
  }
  if (usable.empty()) {
    throw NoReferenceError("no training building has an appliance with a reference window");
  }
  const win::Normalizers norms = win::fit_normalizers(usable, cfg.window);
  const SourceDataset train_data(std::move(train_prepared), norms, cfg.window);
  const SourceDataset val_data(std::move(val_prepared), norms, cfg.window);

  model::Architecture arch;
  arch.window = cfg.window;
  arch.embedding = cfg.embedding;
  arch.hidden = cfg.hidden;
  model::ModelBundle& bundle = result.bundle;
  bundle.network = model::Network(arch, derive_seed(cfg.seed, "weight-init"));
  bundle.normalizers = norms;
  const float off_bias = bundle.off_bias();
  nd::ParamSet& params = bundle.network.params();
  params.set_all_trainable(true);

  std::vector<SampleRef> items = sample_refs(train_data, cfg.stage1_window_stride);
  const std::vector<SampleRef> val_items = sample_refs(val_data, cfg.stage1_window_stride);
  if (val_items.empty()) {
    throw NoReferenceError("no validation building has an appliance with a reference window");
  }
  const std::size_t threads = cfg.worker_threads();

  auto validate = [&] {
    const double loss = dataset_loss(bundle.network, off_bias, val_data, val_items,
                                     cfg.batch_size, threads);
    if (!std::isfinite(loss)) {
      throw DivergenceError("validation loss became non-finite");
    }
    return loss;
  };

  EarlyStopping stopper(cfg.patience);
  EpochRecord initial;
  initial.validation_loss = validate();
  result.history.push_back(initial);
  stopper.update(0, initial.validation_loss);
  nd::ParamSet best = params;
  if (progress) progress(fmt("epoch 0: validation loss %.5f", initial.validation_loss));

  nd::AdamState adam(params, {.learning_rate = cfg.stage1_learning_rate});
  for (std::size_t epoch = 1; epoch <= cfg.stage1_max_epochs; ++epoch) {
    std::mt19937_64 rng(derive_seed(cfg.seed, "stage1-epoch", epoch));
    std::shuffle(items.begin(), items.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t seen = 0;
    std::size_t batch_index = 0;
    for (auto batch : make_batches(train_data, items, cfg.batch_size)) {
      nd::Gradients grads(params);
      const BatchStats s =
          stage1_batch(bundle.network, off_bias, train_data, batch, &grads, threads);
      if (!std::isfinite(s.loss) || !grads.all_finite()) {
        throw DivergenceError("non-finite Stage I loss at epoch " + std::to_string(epoch) +
                              ", batch " + std::to_string(batch_index) + " (loss " +
                              std::to_string(s.loss) + ", mse " + std::to_string(s.mse) +
                              ", bce " + std::to_string(s.bce) + ")");
      }
      nd::adam_step(adam, params, grads);
      const auto q = static_cast<double>(s.quadruples);
      rec.train_loss += s.loss * q;
      rec.train_mse += s.mse * q;
      rec.train_bce += s.bce * q;
      seen += s.quadruples;
      ++batch_index;
    }
    rec.train_loss /= static_cast<double>(seen);
    rec.train_mse /= static_cast<double>(seen);
    rec.train_bce /= static_cast<double>(seen);
    rec.validation_loss = validate();
    result.history.push_back(rec);
    result.last_epoch = epoch;
    const bool stop = stopper.update(epoch, rec.validation_loss);
    if (stopper.last_improved()) best = params;
    if (progress) {
      progress("epoch " + std::to_string(epoch) +
               fmt(": train %.5f (mse %.5f, bce %.5f)", rec.train_loss, rec.train_mse,
                   rec.train_bce) +
               fmt(", validation %.5f", rec.validation_loss));
    }
    if (stop) break;
  }
  params = best;
  result.best_epoch = stopper.best_epoch();
  return result;
}

Stage1Result train_stage1(const TrainConfig& cfg,
                          std::span<const ts::BuildingSeries> source,
                          std::span<const std::string> appliances,
                          const ProgressFn& progress) {
  std::vector<std::string> ids;
  for (const auto& b : source) ids.push_back(b.id);
  const BuildingSplit split = split_buildings(ids, cfg.split_ratio, cfg.seed);
  std::vector<ts::BuildingSeries> train, validation;
  for (const auto& b : source) {
    const bool is_train =
        std::find(split.train.begin(), split.train.end(), b.id) != split.train.end();
    (is_train ? train : validation).push_back(b);
  }
  return train_stage1(cfg, train, validation, appliances, progress);
}

// ---- Stage II / III ------------------------------------------------------

QueryEmbeddings encode_queries(const model::ModelBundle& bundle,
                               const ts::TimeSeries& mains, std::size_t threads,
                               std::size_t stride) {
  if (stride == 0) throw InvalidArgumentError("inference stride must be positive");
  const model::Network& net = bundle.network;
  const std::size_t window = net.arch().window;
  if (mains.size() < window) {
    throw InvalidArgumentError("mains has " + std::to_string(mains.size()) +
                               " samples, fewer than the window length " +
                               std::to_string(window));
  }
  QueryEmbeddings q;
  q.window = window;
  q.start_time = mains.start;
  q.period = mains.period;
  const auto usable = win::usable_window_starts(mains, window);
  for (std::size_t i = 0; i < usable.size(); i += stride) q.starts.push_back(usable[i]);
  const std::size_t e = net.arch().embedding;
  q.embeddings = Tensor({q.starts.size(), e});
  const std::vector<float> mains_z = win::znorm_apply(
      bundle.normalizers.query, mains.values, win::Direction::kForward);
  const auto ranges = chunk_ranges(q.starts.size());
  parallel_for(ranges.size(), threads == 0 ? default_threads() : threads,
               [&](std::size_t c) {
                 for (std::size_t i = ranges[c].first; i < ranges[c].second; ++i) {
                   const Tensor emb = model::encode(
                       net, std::span<const float>(mains_z).subspan(q.starts[i], window));
                   std::copy(emb.data(), emb.data() + e, q.embeddings.data() + i * e);
                 }
               });
  return q;
}

CenterTargets center_targets(const ts::TimeSeries& appliance,
                             const QueryEmbeddings& queries) {
  const std::size_t p = win::center_offset(queries.window);
  const ts::ActivationMask mask = ts::clean_mask(ts::activation_mask(appliance));
  CenterTargets t;
  for (std::size_t start : queries.starts) {
    if (start + p >= appliance.size()) {
      throw InvalidShapeError("appliance series shorter than the mains windows");
    }
    t.watts.push_back(appliance.values[start + p]);
    t.on.push_back(mask.bits[start + p]);
  }
  return t;
}

Tensor random_embedding(std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  Tensor v(Shape{dim});
  for (float& x : v.values()) x = gauss(rng);
  return nd::l2_normalize(v);
}

namespace {

Tensor rows_of(const Tensor& matrix, std::span<const std::size_t> rows) {
  const std::size_t e = matrix.dim(1);
  Tensor out({rows.size(), e});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(matrix.data() + rows[i] * e, e, out.data() + i * e);
  }
  return out;
}

Tensor row_block(const Tensor& matrix, std::size_t begin, std::size_t count) {
  const std::size_t e = matrix.dim(1);
  Tensor out({count, e});
  std::copy_n(matrix.data() + begin * e, count * e, out.data());
  return out;
}

}  // namespace

double adaptation_loss(const model::ModelBundle& bundle, const Tensor& embedding,
                       const QueryEmbeddings& queries, const CenterTargets& targets) {
  const std::size_t n = queries.starts.size();
  if (n == 0) throw EmptyInputError("no adaptation windows");
  std::vector<float> y_z, probs;
  for (std::size_t begin = 0; begin < n; begin += kHeadBlock) {
    const std::size_t count = std::min(kHeadBlock, n - begin);
    const auto out = model::head_forward(bundle.network, embedding,
                                         row_block(queries.embeddings, begin, count),
                                         bundle.off_bias());
    y_z.insert(y_z.end(), out.power_z.begin(), out.power_z.end());
    probs.insert(probs.end(), out.state_prob.begin(), out.state_prob.end());
  }
  std::vector<float> on(targets.on.begin(), targets.on.end());
  const auto power_z = win::znorm_apply(bundle.normalizers.power, targets.watts,
                                        win::Direction::kForward);
  return static_cast<double>(nd::mse_loss(Tensor::vector(y_z), Tensor::vector(power_z))) +
         static_cast<double>(nd::bce_loss(Tensor::vector(probs), Tensor::vector(on)));
}

Stage2Result adapt_stage2(const model::ModelBundle& bundle,
                          const QueryEmbeddings& queries,
                          const CenterTargets& targets, const TrainConfig& cfg,
                          std::uint64_t seed) {
  cfg.validate();
  const std::size_t n = queries.starts.size();
  if (n == 0) throw EmptyInputError("Stage II needs at least one labeled target window");
  if (targets.watts.size() != n || targets.on.size() != n) {
    throw InvalidShapeError("adaptation targets do not match the query windows");
  }
  const model::Network& net = bundle.network;
  const std::size_t e = net.arch().embedding;
  Stage2Result result;
  result.network_checksum_before = net.params().checksum();

  nd::ParamSet adapt;
  adapt.add("reference_embedding", random_embedding(e, seed), true);
  result.trainable_values = adapt.trainable_count();

  const std::vector<float> power_z = win::znorm_apply(
      bundle.normalizers.power, targets.watts, win::Direction::kForward);
  const std::size_t batch =
      n <= cfg.stage2_full_batch_limit ? n : cfg.stage2_batch_size;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, "stage2-order"));

  nd::AdamState adam(adapt, {.learning_rate = cfg.stage2_learning_rate});
  EarlyStopping stopper(cfg.patience);
  Tensor best = adapt.value(0);
  result.loss_history.push_back(adaptation_loss(bundle, best, queries, targets));
  stopper.update(0, result.loss_history.back());

  for (std::size_t epoch = 1; epoch <= cfg.stage2_max_epochs; ++epoch) {
    if (batch < n) std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < n; begin += batch) {
      const std::size_t count = std::min(batch, n - begin);
      const std::span<const std::size_t> rows(order.data() + begin, count);
      Tensor power(Shape{count});
      Tensor on(Shape{count});
      for (std::size_t i = 0; i < count; ++i) {
        power[i] = power_z[rows[i]];
        on[i] = targets.on[rows[i]];
      }
      const Tensor query_rows = rows_of(queries.embeddings, rows);

      nd::Tape tape;
      nd::Gradients grads(adapt);
      const auto bound = nd::bind_parameters(tape, net.params(), nullptr);
      const nd::Var e_r = tape.parameter(adapt.value(0), &grads[0]);
      const model::HeadVars out =
          model::head(tape, net, bound, e_r, tape.constant_ref(query_rows), bundle.off_bias());
      const nd::Var loss =
          nd::add(tape, nd::mse_loss(tape, out.power_z, tape.constant_ref(power)),
                  nd::bce_loss(tape, out.state_prob, tape.constant_ref(on)));
      tape.backward(loss);
      if (!grads.all_finite()) {
        throw DivergenceError("non-finite Stage II gradient at epoch " + std::to_string(epoch));
      }
      nd::adam_step(adam, adapt, grads);
      if (cfg.project_embedding) adapt.value(0) = nd::l2_normalize(adapt.value(0));
    }
    const double loss = adaptation_loss(bundle, adapt.value(0), queries, targets);
    if (!std::isfinite(loss)) {
      throw DivergenceError("non-finite Stage II loss at epoch " + std::to_string(epoch));
    }
    result.loss_history.push_back(loss);
    const bool stop = stopper.update(epoch, loss);
    if (stopper.last_improved()) best = adapt.value(0);
    if (stop) break;
  }
  result.best_epoch = stopper.best_epoch();
  result.embedding = best;
  result.network_checksum_after = net.params().checksum();
  if (result.network_checksum_after != result.network_checksum_before) {
    throw std::logic_error("Stage II modified frozen network parameters");
  }
  return result;
}

Stage2Result adapt_appliance(model::ModelBundle& bundle, const std::string& appliance,
                             const ts::TimeSeries& mains,
                             const ts::TimeSeries& appliance_series,
                             const TrainConfig& cfg) {
  const QueryEmbeddings q = encode_queries(bundle, mains, cfg.worker_threads());
  const CenterTargets targets = center_targets(appliance_series, q);
  Stage2Result r =
      adapt_stage2(bundle, q, targets, cfg, derive_seed(cfg.seed, "stage2/" + appliance));
  bundle.embeddings[appliance] = r.embedding;
  return r;
}

PredictionSeries predict(const model::ModelBundle& bundle, const Tensor& embedding,
                         const QueryEmbeddings& queries) {
  const std::size_t n = queries.starts.size();
  const std::size_t p = win::center_offset(queries.window);
  PredictionSeries out;
  for (std::size_t begin = 0; begin < n; begin += kHeadBlock) {
    const std::size_t count = std::min(kHeadBlock, n - begin);
    const auto head = model::head_forward(bundle.network, embedding,
                                          row_block(queries.embeddings, begin, count),
                                          bundle.off_bias());
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t center = queries.starts[begin + i] + p;
      out.centers.push_back(center);
      out.timestamps.push_back(queries.start_time +
                               queries.period * static_cast<double>(center));
      out.state_prob.push_back(head.state_prob[i]);
      out.watts.push_back(
          std::max(0.0f, bundle.normalizers.power.inverse(head.power_z[i])));
    }
  }
  return out;
}

PredictionSeries infer_stage3(const model::ModelBundle& bundle, const Tensor& embedding,
                              const ts::TimeSeries& mains, std::size_t threads,
                              std::size_t stride) {
  return predict(bundle, embedding, encode_queries(bundle, mains, threads, stride));
}

metrics::ApplianceScore score_predictions(const std::string& appliance,
                                          const PredictionSeries& predictions,
                                          const ts::TimeSeries& appliance_series) {
  const ts::ActivationMask mask = ts::clean_mask(ts::activation_mask(appliance_series));
  std::vector<float> truth;
  std::vector<std::uint8_t> states;
  for (std::size_t c : predictions.centers) {
    truth.push_back(appliance_series.values.at(c));
    states.push_back(mask.bits.at(c));
  }
  return metrics::score_appliance(appliance, truth, states, predictions.watts,
                                  predictions.state_prob);
}

ts::BuildingSeries slice_building(const ts::BuildingSeries& b, std::size_t begin,
                                  std::size_t length) {
  ts::BuildingSeries out;
  out.id = b.id;
  out.mains = b.mains.slice(begin, length);
  for (const auto& [name, s] : b.appliances) out.appliances[name] = s.slice(begin, length);
  return out;
}

std::pair<ts::BuildingSeries, ts::BuildingSeries> split_days(const ts::BuildingSeries& b,
                                                             double days) {
  const auto head =
      static_cast<std::size_t>(std::llround(days * 86400.0 / b.mains.period));
  if (head == 0 || head >= b.mains.size()) {
    throw InvalidArgumentError("cannot split " + std::to_string(days) +
                               " days off building " + b.id);
  }
  return {slice_building(b, 0, head), slice_building(b, head, b.mains.size() - head)};
}

TransferResult adapt_and_evaluate(model::ModelBundle& bundle,
                                  const ts::BuildingSeries& adapt_part,
                                  const ts::BuildingSeries& eval_part,
                                  const TrainConfig& cfg, const ProgressFn& progress) {
  const std::size_t threads = cfg.worker_threads();
  const QueryEmbeddings adapt_q = encode_queries(bundle, adapt_part.mains, threads);
  const QueryEmbeddings eval_q = encode_queries(bundle, eval_part.mains, threads);
  TransferResult result;
  for (const auto& [name, series] : adapt_part.appliances) {
    const auto eval_series = eval_part.appliances.find(name);
    if (eval_series == eval_part.appliances.end()) continue;
    const Stage2Result r = adapt_stage2(bundle, adapt_q, center_targets(series, adapt_q),
                                        cfg, derive_seed(cfg.seed, "stage2/" + name));
    bundle.embeddings[name] = r.embedding;
    result.adapted.rows.push_back(
        score_predictions(name, predict(bundle, r.embedding, eval_q), eval_series->second));
    const Tensor rnd =
        random_embedding(bundle.network.arch().embedding, derive_seed(cfg.seed, "random/" + name));
    result.random.rows.push_back(
        score_predictions(name, predict(bundle, rnd, eval_q), eval_series->second));
    if (progress) {
      progress("adapted " + name + " in " + std::to_string(r.loss_history.size() - 1) +
               fmt(" epochs: loss %.4f, F1 %.3f (random %.3f)",
                   r.loss_history[r.best_epoch], result.adapted.rows.back().f1.f1,
                   result.random.rows.back().f1.f1));
    }
  }
  return result;
}

std::vector<SweepRow> run_sensitivity(
    std::span<const std::pair<std::size_t, std::size_t>> grid,
    const SweepProtocol& protocol, const ProgressFn& progress) {
  if (grid.empty()) throw InvalidArgumentError("sensitivity grid is empty");
  const auto [adapt_part, eval_part] = split_days(protocol.target, protocol.adapt_days);
  std::vector<SweepRow> rows;
  for (const auto& [e, h] : grid) {
    TrainConfig cfg = protocol.base;
    cfg.embedding = e;
    cfg.hidden = h;
    if (progress) progress("sweep E=" + std::to_string(e) + " H=" + std::to_string(h));
    Stage1Result trained = train_stage1(cfg, protocol.source, {}, progress);
    const TransferResult tr =
        adapt_and_evaluate(trained.bundle, adapt_part, eval_part, cfg, progress);
    SweepRow row;
    row.embedding = e;
    row.hidden = h;
    for (const auto& score : tr.adapted.rows) row.mae[score.appliance] = score.mae;
    row.average_mae = tr.adapted.mean_mae();
    row.average_f1 = tr.adapted.mean_f1();
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    return a.average_mae < b.average_mae;
  });
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].rank = i + 1;
  return rows;
}

std::string format_sweep_table(std::span<const SweepRow> rows) {
  std::set<std::string> names;
  for (const auto& r : rows) {
    for (const auto& [name, v] : r.mae) names.insert(name);
  }
  std::string out;
  char cell[64];
  out += "rank      E      H";
  for (const auto& n : names) {
    std::snprintf(cell, sizeof cell, " %12s", n.c_str());
    out += cell;
  }
  out += "      average\n";
  for (const auto& r : rows) {
    std::snprintf(cell, sizeof cell, "%4zu %6zu %6zu", r.rank, r.embedding, r.hidden);
    out += cell;
    for (const auto& n : names) {
      const auto it = r.mae.find(n);
      if (it == r.mae.end()) {
        std::snprintf(cell, sizeof cell, " %12s", "-");
      } else {
        std::snprintf(cell, sizeof cell, " %12.2f", it->second);
      }
      out += cell;
    }
    std::snprintf(cell, sizeof cell, " %12.2f\n", r.average_mae);
    out += cell;
  }
  return out;
}

}  // namespace refquery::pipeline
