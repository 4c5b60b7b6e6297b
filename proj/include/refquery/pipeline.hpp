#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "refquery/bundle.hpp"
#include "refquery/metrics.hpp"
#include "refquery/timeseries.hpp"
#include "refquery/windowing.hpp"

namespace refquery::pipeline {

struct TrainConfig {
  float stage1_learning_rate = 1e-3f;
  float stage2_learning_rate = 1e-2f;
  std::size_t batch_size = 1024;  // quadruples per Stage I step
  std::size_t patience = 5;
  std::size_t stage1_max_epochs = 100;
  std::size_t stage2_max_epochs = 200;
  std::uint64_t seed = 0;
  std::size_t embedding = 128;
  std::size_t hidden = 128;
  std::size_t window = win::kWindowLength;
  double split_ratio = 0.8;
  /// Stage I uses every n-th window start of each training building.
  std::size_t stage1_window_stride = 1;
  /// Stage II runs full-batch up to this many quadruples, else minibatches.
  std::size_t stage2_full_batch_limit = 4096;
  std::size_t stage2_batch_size = 1024;
  /// Re-project the Stage II embedding onto the unit sphere after each step.
  bool project_embedding = true;
  /// Worker threads; 0 means all available cores.
  std::size_t threads = 0;

  void validate() const;
  std::size_t worker_threads() const;
};

struct BuildingSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
};

/// Seeded shuffle, then round(ratio * n) buildings (clamped to [1, n-1]) go
/// to training.
BuildingSplit split_buildings(std::vector<std::string> ids, double ratio,
                              std::uint64_t seed);

/// Stops once `patience` consecutive epochs fail to improve on the best
/// loss seen so far.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Returns true when training should stop after this epoch.
  bool update(std::size_t epoch, double loss);
  bool last_improved() const { return last_improved_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  std::size_t patience_;
  std::size_t best_epoch_ = 0;
  double best_loss_ = 0.0;
  bool has_best_ = false;
  bool last_improved_ = false;
  std::size_t stale_ = 0;
};

// ---- Stage I -------------------------------------------------------------

/// z-normalized view of prepared buildings used by the training loop.
class SourceDataset {
 public:
  SourceDataset(std::vector<win::PreparedBuilding> buildings,
                win::Normalizers normalizers, std::size_t window);

  struct Appliance {
    std::string name;
    std::vector<std::vector<float>> bank_z;        // reference windows
    std::vector<std::uint32_t> reference_draws;    // per t
    std::vector<float> power_z;                    // per sample
    std::vector<std::uint8_t> on;                  // cleaned mask per sample
  };
  struct Building {
    std::string id;
    std::vector<float> mains_z;
    std::vector<std::size_t> window_starts;
    std::vector<Appliance> appliances;
  };

  std::size_t window() const { return window_; }
  const win::Normalizers& normalizers() const { return normalizers_; }
  const std::vector<Building>& buildings() const { return buildings_; }
  const std::vector<win::PreparedBuilding>& prepared() const { return prepared_; }

 private:
  std::size_t window_;
  win::Normalizers normalizers_;
  std::vector<win::PreparedBuilding> prepared_;
  std::vector<Building> buildings_;
};

/// One Stage I sample unit: window start t of a building, expanded to one
/// quadruple per appliance of that building.
struct SampleRef {
  std::size_t building = 0;
  std::size_t t = 0;
};

struct BatchStats {
  double loss = 0.0;  // value recorded on the tapes
  double mse = 0.0;   // mean MSE over the batch quadruples
  double bce = 0.0;   // mean BCE over the batch quadruples
  std::size_t quadruples = 0;
};

/// Loss = mean MSE(y_z, power_z) + mean BCE(state, on) over all quadruples
/// of `samples`. Gradients are added into `grads` (trainable entries only).
/// Each distinct reference window is encoded once and receives the sum of
/// its upstream gradients. Reduction order is fixed, independent of
/// `threads`.
BatchStats stage1_batch(const model::Network& net, float off_bias,
                        const SourceDataset& data,
                        std::span<const SampleRef> samples,
                        nd::Gradients* grads, std::size_t threads);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_mse = 0.0;
  double train_bce = 0.0;
  double validation_loss = 0.0;
};

struct Stage1Result {
  model::ModelBundle bundle;
  std::vector<EpochRecord> history;  // history[0] is the untrained model
  std::size_t best_epoch = 0;
  std::size_t last_epoch = 0;
  std::vector<std::string> warnings;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Stage I on explicit training and validation buildings. Returns the
/// parameters of the best validation epoch.
Stage1Result train_stage1(const TrainConfig& cfg,
                          std::span<const ts::BuildingSeries> train,
                          std::span<const ts::BuildingSeries> validation,
                          std::span<const std::string> appliances = {},
                          const ProgressFn& progress = {});

/// Splits `source` with cfg.split_ratio first.
Stage1Result train_stage1(const TrainConfig& cfg,
                          std::span<const ts::BuildingSeries> source,
                          std::span<const std::string> appliances = {},
                          const ProgressFn& progress = {});

// ---- Stage II / III ------------------------------------------------------

/// Query embeddings of every usable window of a mains signal.
struct QueryEmbeddings {
  std::vector<std::size_t> starts;  // window start indices into the mains
  Tensor embeddings;                // [starts.size(), E]
  double start_time = 0.0;
  double period = ts::kDefaultPeriod;
  std::size_t window = win::kWindowLength;
};

/// `stride` > 1 keeps every stride-th usable window only.
QueryEmbeddings encode_queries(const model::ModelBundle& bundle,
                               const ts::TimeSeries& mains, std::size_t threads,
                               std::size_t stride = 1);

/// Center labels for each window start.
struct CenterTargets {
  std::vector<float> watts;
  std::vector<std::uint8_t> on;
};

CenterTargets center_targets(const ts::TimeSeries& appliance,
                             const QueryEmbeddings& queries);

struct Stage2Result {
  Tensor embedding;
  std::vector<double> loss_history;  // [0] is the initial embedding
  std::size_t best_epoch = 0;
  std::size_t trainable_values = 0;
  std::uint32_t network_checksum_before = 0;
  std::uint32_t network_checksum_after = 0;
};

/// Uniform on the unit sphere.
Tensor random_embedding(std::size_t dim, std::uint64_t seed);

/// Learns one reference embedding against frozen network parameters.
Stage2Result adapt_stage2(const model::ModelBundle& bundle,
                          const QueryEmbeddings& queries,
                          const CenterTargets& targets, const TrainConfig& cfg,
                          std::uint64_t seed);

/// Mean MSE + BCE of `embedding` over the adaptation set.
double adaptation_loss(const model::ModelBundle& bundle, const Tensor& embedding,
                       const QueryEmbeddings& queries, const CenterTargets& targets);

/// Encodes, adapts and stores the embedding under `appliance`.
Stage2Result adapt_appliance(model::ModelBundle& bundle, const std::string& appliance,
                             const ts::TimeSeries& mains,
                             const ts::TimeSeries& appliance_series,
                             const TrainConfig& cfg);

struct PredictionSeries {
  std::vector<double> timestamps;  // center sample times
  std::vector<std::size_t> centers;  // center sample indices into the mains
  std::vector<float> state_prob;
  std::vector<float> watts;  // max(0, inverse-normalized y_z)
  std::size_t size() const { return watts.size(); }
};

PredictionSeries predict(const model::ModelBundle& bundle, const Tensor& embedding,
                         const QueryEmbeddings& queries);

/// Stride-1 sliding-window disaggregation of raw mains watts.
PredictionSeries infer_stage3(const model::ModelBundle& bundle,
                              const Tensor& embedding, const ts::TimeSeries& mains,
                              std::size_t threads = 0, std::size_t stride = 1);

/// Scores predictions against the appliance signal at the window centers;
/// truth state is the cleaned activation mask.
metrics::ApplianceScore score_predictions(const std::string& appliance,
                                          const PredictionSeries& predictions,
                                          const ts::TimeSeries& appliance_series);

/// Sample range [begin, begin + length) of every channel.
ts::BuildingSeries slice_building(const ts::BuildingSeries& b, std::size_t begin,
                                  std::size_t length);
/// First `days` of a building and the remainder.
std::pair<ts::BuildingSeries, ts::BuildingSeries> split_days(const ts::BuildingSeries& b,
                                                             double days);

// ---- transfer experiment and sensitivity grid ----------------------------

struct TransferResult {
  metrics::EvalReport adapted;
  metrics::EvalReport random;  // same evaluation with random embeddings
};

/// Adapts every appliance of `adapt_part` and evaluates both the adapted and
/// a random embedding on `eval_part`. Adapted embeddings are stored in the
/// bundle.
TransferResult adapt_and_evaluate(model::ModelBundle& bundle,
                                  const ts::BuildingSeries& adapt_part,
                                  const ts::BuildingSeries& eval_part,
                                  const TrainConfig& cfg,
                                  const ProgressFn& progress = {});

struct SweepRow {
  std::size_t rank = 0;
  std::size_t embedding = 0;
  std::size_t hidden = 0;
  std::map<std::string, double> mae;  // per appliance
  double average_mae = 0.0;
  double average_f1 = 0.0;
};

struct SweepProtocol {
  std::vector<ts::BuildingSeries> source;
  ts::BuildingSeries target;
  double adapt_days = 1.0;
  TrainConfig base;
};

/// One Stage I + II + evaluation run per (E, H); rows ranked by average
/// MAE ascending.
std::vector<SweepRow> run_sensitivity(
    std::span<const std::pair<std::size_t, std::size_t>> grid,
    const SweepProtocol& protocol, const ProgressFn& progress = {});

/// rank, E, H, one MAE column per appliance, average.
std::string format_sweep_table(std::span<const SweepRow> rows);

}  // namespace refquery::pipeline
