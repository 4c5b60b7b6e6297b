// refquery: synth, prep, train, adapt, infer, eval, cost, sweep, plot-data.
//
// Exit codes: 0 ok, 1 usage, 2 data error, 3 training divergence.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "refquery/bundle.hpp"
#include "refquery/costmodel.hpp"
#include "refquery/error.hpp"
#include "refquery/metrics.hpp"
#include "refquery/parallel.hpp"
#include "refquery/pipeline.hpp"
#include "refquery/random.hpp"
#include "refquery/synth.hpp"
#include "refquery/timeseries.hpp"
#include "refquery/windowing.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace refquery;

namespace {

constexpr const char* kVersion = "1.0.0";
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitDivergence = 3;

struct Global {
  std::size_t threads = 0;
  std::string manifest;
  bool quiet = false;
};

std::size_t resolve_threads(const Global& g) {
  return g.threads == 0 ? default_threads() : g.threads;
}

void log(const Global& g, const std::string& line) {
  if (!g.quiet) std::cerr << line << '\n';
}

void require_file(const fs::path& p, const std::string& what) {
  if (p.empty()) throw InvalidArgumentError(what + " path is empty");
  if (!fs::exists(p)) throw InvalidArgumentError(what + " not found: " + p.string());
}

// ---- manifest --------------------------------------------------------------

json resolved_options(const CLI::App& app) {
  json cfg = json::object();
  for (const CLI::Option* opt : app.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string name = opt->get_lnames().front();
    if (name == "help" || name == "config") continue;
    if (opt->count() > 0) {
      const auto& r = opt->results();
      cfg[name] = r.size() == 1 ? json(r.front()) : json(r);
    } else {
      cfg[name] = opt->get_default_str();
    }
  }
  return cfg;
}

struct Run {
  const CLI::App* root = nullptr;
  const CLI::App* command = nullptr;
  Global* global = nullptr;
  json seeds = json::object();
  json results = json::object();

  void write(const fs::path& default_path) const {
    const fs::path path = global->manifest.empty() ? default_path : fs::path(global->manifest);
    json m;
    m["command"] = command->get_name();
    m["config"] = resolved_options(*command);
    json g = resolved_options(*root);
    g["threads_resolved"] = resolve_threads(*global);
    if (const CLI::Option* c = root->get_config_ptr(); c && c->count() > 0) {
      g["config_file"] = c->as<std::string>();
    }
    m["global"] = g;
    m["seeds"] = seeds;
    m["versions"] = {{"refquery", kVersion},
                     {"bundle_format", model::kBundleVersion},
                     {"compiler", __VERSION__},
                     {"cplusplus", __cplusplus}};
    m["results"] = results;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw InvalidArgumentError("cannot write manifest " + path.string());
    out << m.dump(2) << '\n';
  }
};

// <file>.<tag>.manifest.json, so runs sharing an output keep separate manifests.
fs::path beside(const fs::path& file, const std::string& tag) {
  return fs::path(file.string() + "." + tag + ".manifest.json");
}

// ---- shared data helpers ---------------------------------------------------

ts::BuildingSeries load_one(const fs::path& channels, std::string& building) {
  require_file(channels, "channel map");
  const ts::ChannelMap map = ts::load_channel_map(channels);
  if (map.buildings.empty()) throw EmptyInputError("channel map lists no buildings");
  if (building.empty()) building = map.buildings.front().id;
  return ts::load_building(map, building);
}

std::vector<ts::BuildingSeries> load_many(const fs::path& channels,
                                          const std::vector<std::string>& only) {
  require_file(channels, "channel map");
  const ts::ChannelMap map = ts::load_channel_map(channels);
  std::vector<ts::BuildingSeries> out;
  for (const auto& b : map.buildings) {
    if (!only.empty() && std::find(only.begin(), only.end(), b.id) == only.end()) continue;
    out.push_back(ts::load_building(map, b.id));
  }
  if (out.empty()) throw EmptyInputError("no buildings selected from " + channels.string());
  return out;
}

std::size_t day_samples(double days, double period) {
  return static_cast<std::size_t>(std::llround(days * 86400.0 / period));
}

// [skip_days, skip_days + days) of a building; days <= 0 means to the end.
ts::BuildingSeries day_range(const ts::BuildingSeries& b, double skip_days, double days) {
  const std::size_t n = b.mains.size();
  const std::size_t begin = day_samples(skip_days, b.mains.period);
  if (begin >= n) throw InvalidArgumentError("--skip-days is beyond the end of the data");
  std::size_t length = n - begin;
  if (days > 0) length = std::min(length, day_samples(days, b.mains.period));
  if (begin == 0 && length == n) return b;
  return pipeline::slice_building(b, begin, length);
}

std::vector<std::string> bundle_appliances(const model::ModelBundle& bundle,
                                           const std::vector<std::string>& requested) {
  std::vector<std::string> names = requested;
  if (names.empty()) {
    for (const auto& [name, e] : bundle.embeddings) names.push_back(name);
  }
  if (names.empty()) throw InvalidArgumentError("the bundle holds no appliance embeddings");
  for (const auto& n : names) {
    if (!bundle.embeddings.contains(n)) {
      throw InvalidArgumentError("the bundle has no embedding for appliance '" + n + "'");
    }
  }
  return names;
}

const ts::TimeSeries& appliance_of(const ts::BuildingSeries& b, const std::string& name) {
  const auto it = b.appliances.find(name);
  if (it == b.appliances.end()) {
    throw InvalidArgumentError("building " + b.id + " has no channel for appliance '" + name + "'");
  }
  return it->second;
}

json history_json(const std::vector<pipeline::EpochRecord>& h) {
  json out = json::array();
  for (const auto& r : h) {
    out.push_back({{"epoch", r.epoch},
                   {"train_loss", r.train_loss},
                   {"train_mse", r.train_mse},
                   {"train_bce", r.train_bce},
                   {"validation_loss", r.validation_loss}});
  }
  return out;
}

struct TrainFlags {
  pipeline::TrainConfig cfg;
  void add_stage1(CLI::App* sc) {
    sc->add_option("--embedding", cfg.embedding, "Embedding size E")->check(CLI::PositiveNumber);
    sc->add_option("--hidden", cfg.hidden, "Head hidden size H")->check(CLI::PositiveNumber);
    sc->add_option("--lr", cfg.stage1_learning_rate, "Stage I Adam learning rate")
        ->check(CLI::NonNegativeNumber);
    sc->add_option("--batch-size", cfg.batch_size, "Quadruples per Stage I step")
        ->check(CLI::PositiveNumber);
    sc->add_option("--max-epochs", cfg.stage1_max_epochs, "Stage I epoch cap")
        ->check(CLI::PositiveNumber);
    sc->add_option("--window-stride", cfg.stage1_window_stride,
                   "Use every n-th window start for Stage I")
        ->check(CLI::PositiveNumber);
    sc->add_option("--split", cfg.split_ratio, "Training share of source buildings")
        ->check(CLI::Range(0.0, 1.0));
    add_common(sc);
  }
  void add_stage2(CLI::App* sc, bool prefixed) {
    sc->add_option(prefixed ? "--adapt-lr" : "--lr", cfg.stage2_learning_rate,
                   "Stage II Adam learning rate")
        ->check(CLI::NonNegativeNumber);
    sc->add_option(prefixed ? "--adapt-max-epochs" : "--max-epochs", cfg.stage2_max_epochs,
                   "Stage II epoch cap")
        ->check(CLI::PositiveNumber);
    sc->add_option("--full-batch-limit", cfg.stage2_full_batch_limit,
                   "Stage II runs full-batch up to this many windows");
    if (!prefixed) add_common(sc);
  }
  void add_common(CLI::App* sc) {
    sc->add_option("--patience", cfg.patience, "Early-stopping patience (epochs)")
        ->check(CLI::PositiveNumber);
    sc->add_option("--seed", cfg.seed, "Master seed");
  }
};

json seeds_of(const pipeline::TrainConfig& cfg) {
  return {{"master", cfg.seed},
          {"weight_init", derive_seed(cfg.seed, "weight-init")},
          {"reference_draws", derive_seed(cfg.seed, "reference-draws")},
          {"building_split", derive_seed(cfg.seed, "building-split")}};
}

// ---- prediction CSV --------------------------------------------------------

struct PredictionFile {
  std::vector<double> timestamps;
  std::vector<float> watts;
  std::vector<float> probs;
};

void write_predictions(const fs::path& path, const pipeline::PredictionSeries& p) {
  std::ofstream out(path);
  if (!out) throw InvalidArgumentError("cannot write " + path.string());
  out << "unix_timestamp,watts,state_prob\n";
  char line[96];
  for (std::size_t i = 0; i < p.size(); ++i) {
    std::snprintf(line, sizeof line, "%.0f,%.3f,%.6f\n", p.timestamps[i], p.watts[i],
                  p.state_prob[i]);
    out << line;
  }
}

PredictionFile read_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgumentError("cannot read " + path.string());
  PredictionFile f;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (n == 1 && line.rfind("unix_timestamp", 0) == 0) continue;
    if (line.empty()) continue;
    double v[3];
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (int c = 0; c < 3; ++c) {
      auto [next, ec] = std::from_chars(p, end, v[c]);
      if (ec != std::errc() || (c < 2 && (next == end || *next != ','))) {
        throw ParseError("malformed prediction row in " + path.string(), n);
      }
      p = next + 1;
    }
    f.timestamps.push_back(v[0]);
    f.watts.push_back(static_cast<float>(v[1]));
    f.probs.push_back(static_cast<float>(v[2]));
  }
  if (f.timestamps.empty()) throw EmptyInputError("no predictions in " + path.string());
  return f;
}

// ---- subcommands -----------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::size_t homes = 4;
  double days = 3.0;
  std::uint64_t seed = 0;
  bool jitter = false;
  std::vector<std::string> appliances;
  std::string prefix = "home";
};

int run_synth(const SynthArgs& a, Run& run) {
  std::vector<synth::Archetype> archetypes;
  for (const auto& n : a.appliances) archetypes.push_back(synth::parse_archetype(n));
  const fs::path out(a.out);
  fs::create_directories(out);
  ts::ChannelMap map;
  json homes = json::array();
  for (std::size_t i = 0; i < a.homes; ++i) {
    const std::string id = a.prefix + std::to_string(i + 1);
    const std::uint64_t seed = derive_seed(a.seed, "synth-home", i);
    const synth::HomeSpec spec = synth::make_home(seed, a.days, a.jitter, archetypes);
    const synth::SynthHome home = synth::synth_home(spec);
    map.buildings.push_back(synth::write_home(out / id, id, home));
    json activations = json::object();
    for (const auto& [name, s] : home.schedule) activations[name] = s.size();
    homes.push_back({{"id", id}, {"seed", seed}, {"samples", home.mains.size()},
                     {"base_load", spec.base_load}, {"activations", activations}});
    log(*run.global, "wrote " + (out / id).string());
  }
  ts::save_channel_map(out / "channels.json", map);
  std::cout << "wrote " << a.homes << " homes and " << (out / "channels.json").string() << '\n';
  run.seeds = {{"master", a.seed}};
  run.results["homes"] = homes;
  run.write(out / "manifest.json");
  return 0;
}

struct PrepArgs {
  std::string channels, out;
  std::size_t window = win::kWindowLength;
  std::uint64_t seed = 0;
  std::vector<std::string> buildings, appliances;
};

int run_prep(const PrepArgs& a, Run& run) {
  const auto buildings = load_many(a.channels, a.buildings);
  std::vector<win::PreparedBuilding> prepared;
  json summary = json::array();
  const std::uint64_t seed = derive_seed(a.seed, "reference-draws");
  for (const auto& b : buildings) {
    win::PreparedBuilding pb = win::prepare_building(b, a.window, seed, a.appliances);
    json apps = json::object();
    for (const auto& pa : pb.appliances) {
      apps[pa.name] = {{"intervals", pa.intervals.size()}, {"references", pa.bank.size()}};
      std::cout << b.id << '/' << pa.name << ": " << pa.intervals.size()
                << " ON intervals, " << pa.bank.size() << " reference windows\n";
    }
    for (const auto& w : pb.warnings) log(*run.global, "warning: " + w);
    summary.push_back({{"building", b.id}, {"windows", pb.window_starts.size()},
                       {"appliances", apps}, {"warnings", pb.warnings}});
    prepared.push_back(std::move(pb));
  }
  std::vector<win::PreparedBuilding> usable;
  for (const auto& pb : prepared) {
    if (!pb.appliances.empty()) usable.push_back(pb);
  }
  if (usable.empty()) throw NoReferenceError("no appliance produced a reference window");
  const win::Normalizers n = win::fit_normalizers(usable, a.window);
  win::write_dataset_cache(a.out, prepared, n, a.window);
  std::cout << "wrote " << a.out << '\n';
  run.seeds = {{"master", a.seed}, {"reference_draws", seed}};
  run.results = {{"buildings", summary},
                 {"normalizers",
                  {{"query", {n.query.mean(), n.query.std()}},
                   {"reference", {n.reference.mean(), n.reference.std()}},
                   {"power", {n.power.mean(), n.power.std()}}}}};
  run.write(beside(a.out, "prep"));
  return 0;
}

struct TrainArgs {
  std::string channels, out;
  std::vector<std::string> buildings, appliances;
  TrainFlags flags;
};

int run_train(TrainArgs& a, Run& run) {
  pipeline::TrainConfig cfg = a.flags.cfg;
  cfg.threads = resolve_threads(*run.global);
  const auto buildings = load_many(a.channels, a.buildings);
  run.seeds = seeds_of(cfg);
  pipeline::Stage1Result r;
  try {
    r = pipeline::train_stage1(cfg, buildings, a.appliances,
                               [&](const std::string& s) { log(*run.global, s); });
  } catch (const DivergenceError&) {
    run.results["status"] = "diverged";
    run.write(beside(a.out, "train"));
    throw;
  }
  for (const auto& w : r.warnings) log(*run.global, "warning: " + w);
  model::save_bundle(r.bundle, a.out);
  std::cout << "best epoch " << r.best_epoch << " of " << r.last_epoch
            << ", validation loss " << r.history[r.best_epoch].validation_loss << '\n'
            << "wrote " << a.out << '\n';
  run.results = {{"history", history_json(r.history)},
                 {"best_epoch", r.best_epoch},
                 {"last_epoch", r.last_epoch},
                 {"warnings", r.warnings},
                 {"network_checksum", r.bundle.network.params().checksum()}};
  run.write(beside(a.out, "train"));
  return 0;
}

struct AdaptArgs {
  std::string bundle, channels, building, out;
  std::vector<std::string> appliances;
  double days = 1.0;
  TrainFlags flags;
};

int run_adapt(AdaptArgs& a, Run& run) {
  require_file(a.bundle, "bundle");
  model::ModelBundle bundle = model::load_bundle(a.bundle);
  const ts::BuildingSeries b = day_range(load_one(a.channels, a.building), 0.0, a.days);
  pipeline::TrainConfig cfg = a.flags.cfg;
  cfg.threads = resolve_threads(*run.global);
  const std::uint32_t checksum = bundle.network.params().checksum();
  const pipeline::QueryEmbeddings q = pipeline::encode_queries(bundle, b.mains, cfg.threads);
  json results = json::object();
  json seeds = {{"master", cfg.seed}};
  for (const auto& name : a.appliances) {
    const std::uint64_t seed = derive_seed(cfg.seed, "stage2/" + name);
    const pipeline::Stage2Result r = pipeline::adapt_stage2(
        bundle, q, pipeline::center_targets(appliance_of(b, name), q), cfg, seed);
    bundle.embeddings[name] = r.embedding;
    seeds[name] = seed;
    results[name] = {{"loss_history", r.loss_history},
                     {"best_epoch", r.best_epoch},
                     {"trainable_values", r.trainable_values},
                     {"network_checksum_before", r.network_checksum_before},
                     {"network_checksum_after", r.network_checksum_after}};
    std::cout << name << ": " << r.loss_history.size() - 1 << " epochs, loss "
              << r.loss_history.front() << " -> " << r.loss_history[r.best_epoch] << '\n';
  }
  if (bundle.network.params().checksum() != checksum) {
    throw std::logic_error("adaptation modified network parameters");
  }
  const std::string out = a.out.empty() ? a.bundle : a.out;
  model::save_bundle(bundle, out);
  std::cout << "wrote " << out << '\n';
  run.seeds = seeds;
  run.results = {{"building", a.building}, {"windows", q.starts.size()},
                 {"appliances", results}};
  std::string tag = "adapt";
  for (const auto& name : a.appliances) tag += "-" + name;
  run.write(beside(out, tag));
  return 0;
}

struct InferArgs {
  std::string bundle, channels, building, out;
  std::vector<std::string> appliances;
  double skip_days = 0.0, days = 0.0;
  std::size_t stride = 1;
};

int run_infer(InferArgs& a, Run& run) {
  require_file(a.bundle, "bundle");
  const model::ModelBundle bundle = model::load_bundle(a.bundle);
  const auto names = bundle_appliances(bundle, a.appliances);
  const ts::BuildingSeries b = day_range(load_one(a.channels, a.building), a.skip_days, a.days);
  const auto q = pipeline::encode_queries(bundle, b.mains, resolve_threads(*run.global), a.stride);
  fs::create_directories(a.out);
  json written = json::object();
  for (const auto& name : names) {
    const auto p = pipeline::predict(bundle, bundle.embeddings.at(name), q);
    const fs::path path = fs::path(a.out) / (name + ".csv");
    write_predictions(path, p);
    written[name] = {{"file", path.string()}, {"predictions", p.size()}};
    std::cout << "wrote " << path.string() << " (" << p.size() << " predictions)\n";
  }
  run.results = {{"building", a.building}, {"appliances", written}};
  run.write(fs::path(a.out) / "manifest.json");
  return 0;
}

struct EvalArgs {
  std::string predictions, channels, building, out;
  std::vector<std::string> appliances;
};

int run_eval(EvalArgs& a, Run& run) {
  if (!fs::is_directory(a.predictions)) {
    throw InvalidArgumentError("predictions directory not found: " + a.predictions);
  }
  const ts::BuildingSeries b = load_one(a.channels, a.building);
  std::vector<std::string> names = a.appliances;
  if (names.empty()) {
    for (const auto& e : fs::directory_iterator(a.predictions)) {
      if (e.path().extension() == ".csv") names.push_back(e.path().stem().string());
    }
    std::sort(names.begin(), names.end());
  }
  if (names.empty()) throw EmptyInputError("no prediction files in " + a.predictions);
  metrics::EvalReport report;
  for (const auto& name : names) {
    const ts::TimeSeries& truth = appliance_of(b, name);
    const PredictionFile p = read_predictions(fs::path(a.predictions) / (name + ".csv"));
    const ts::ActivationMask mask = ts::clean_mask(ts::activation_mask(truth));
    std::vector<float> watts;
    std::vector<std::uint8_t> states;
    for (double t : p.timestamps) {
      const double k = std::round((t - truth.start) / truth.period);
      if (k < 0 || k >= static_cast<double>(truth.size())) {
        throw InvalidArgumentError("prediction at t=" + std::to_string(t) +
                                   " lies outside the " + name + " ground truth");
      }
      watts.push_back(truth.values[static_cast<std::size_t>(k)]);
      states.push_back(mask.bits[static_cast<std::size_t>(k)]);
    }
    report.rows.push_back(metrics::score_appliance(name, watts, states, p.watts, p.probs));
  }
  std::cout << metrics::format_table(report);
  const json j = json::parse(metrics::format_json(report));
  if (!a.out.empty()) {
    std::ofstream(a.out) << j.dump(2) << '\n';
  }
  run.results = j;
  run.write(a.out.empty() ? fs::path("refquery-eval.manifest.json") : beside(a.out, "eval"));
  return 0;
}

struct CostArgs {
  std::string bundle;
  std::vector<std::size_t> counts{1, 5, 10, 20};
  bool json_output = false;
};

int run_cost(const CostArgs& a, Run& run) {
  require_file(a.bundle, "bundle");
  const model::ModelBundle bundle = model::load_bundle(a.bundle);
  const cost::CostReport r = cost::cost_report(bundle, a.counts);
  std::cout << (a.json_output ? cost::format_cost_json(r) + "\n" : cost::format_cost_report(r));
  run.results = json::parse(cost::format_cost_json(r));
  run.write(beside(a.bundle, "cost"));
  return 0;
}

struct SweepArgs {
  std::string source, target, target_building, out;
  std::vector<std::size_t> embeddings{32, 64, 128, 256};
  std::vector<std::size_t> hiddens{32, 64, 128, 256};
  double adapt_days = 1.0;
  TrainFlags flags;
};

int run_sweep(SweepArgs& a, Run& run) {
  pipeline::SweepProtocol protocol;
  protocol.source = load_many(a.source, {});
  protocol.target = load_one(a.target, a.target_building);
  protocol.adapt_days = a.adapt_days;
  protocol.base = a.flags.cfg;
  protocol.base.threads = resolve_threads(*run.global);
  std::vector<std::pair<std::size_t, std::size_t>> grid;
  for (std::size_t e : a.embeddings) {
    for (std::size_t h : a.hiddens) grid.emplace_back(e, h);
  }
  const auto rows = pipeline::run_sensitivity(
      grid, protocol, [&](const std::string& s) { log(*run.global, s); });
  const std::string table = pipeline::format_sweep_table(rows);
  std::cout << table;
  json jrows = json::array();
  for (const auto& r : rows) {
    jrows.push_back({{"rank", r.rank}, {"E", r.embedding}, {"H", r.hidden},
                     {"mae", r.mae}, {"average_mae", r.average_mae},
                     {"average_f1", r.average_f1}});
  }
  if (!a.out.empty()) std::ofstream(a.out) << table;
  run.seeds = seeds_of(protocol.base);
  run.results = {{"rows", jrows}};
  run.write(a.out.empty() ? fs::path("refquery-sweep.manifest.json") : beside(a.out, "sweep"));
  return 0;
}

struct PlotArgs {
  std::string bundle, channels, building, out;
  std::vector<std::string> appliances;
  double skip_days = 0.0, days = 0.0;
  std::size_t stride = 1;
};

int run_plot(PlotArgs& a, Run& run) {
  require_file(a.bundle, "bundle");
  const model::ModelBundle bundle = model::load_bundle(a.bundle);
  const auto names = bundle_appliances(bundle, a.appliances);
  const ts::BuildingSeries b = day_range(load_one(a.channels, a.building), a.skip_days, a.days);
  const auto q = pipeline::encode_queries(bundle, b.mains, resolve_threads(*run.global), a.stride);
  fs::create_directories(a.out);
  json written = json::object();
  for (const auto& name : names) {
    const ts::TimeSeries& truth = appliance_of(b, name);
    const ts::ActivationMask mask = ts::clean_mask(ts::activation_mask(truth));
    const auto p = pipeline::predict(bundle, bundle.embeddings.at(name), q);
    const fs::path path = fs::path(a.out) / (name + ".csv");
    std::ofstream out(path);
    out << "unix_timestamp,mains_watts,truth_watts,truth_state,predicted_watts,state_prob\n";
    char line[160];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const std::size_t c = p.centers[i];
      std::snprintf(line, sizeof line, "%.0f,%.3f,%.3f,%d,%.3f,%.6f\n", p.timestamps[i],
                    b.mains.values[c], truth.values[c], mask.bits[c], p.watts[i],
                    p.state_prob[i]);
      out << line;
    }
    written[name] = path.string();
    std::cout << "wrote " << path.string() << '\n';
  }
  run.results = {{"building", a.building}, {"files", written}};
  run.write(fs::path(a.out) / "manifest.json");
  return 0;
}

// Path options read REFQUERY_<NAME> from the environment when not given.
CLI::Option* path_option(CLI::App* sc, const std::string& flag, std::string& target,
                         const std::string& help, const std::string& env) {
  return sc->add_option(flag, target, help)->envname(env);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"refquery: appliance-conditioned load disaggregation"};
  app.set_version_flag("--version", kVersion);
  app.set_config("--config", "", "TOML/INI config file; command-line flags take precedence");
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough();

  Global global;
  app.add_option("--threads", global.threads, "Worker threads (0 = all cores)")
      ->capture_default_str();
  path_option(&app, "--manifest", global.manifest,
              "Run manifest path (default: next to the main output)", "REFQUERY_MANIFEST");
  app.add_flag("-q,--quiet", global.quiet, "Suppress progress output");

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "Generate synthetic homes");
  path_option(synth, "--out", synth_args.out, "Output directory", "REFQUERY_OUT")->required();
  synth->add_option("--homes", synth_args.homes, "Number of homes")->check(CLI::PositiveNumber);
  synth->add_option("--days", synth_args.days, "Days per home")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_args.seed, "Master seed");
  synth->add_flag("--jitter", synth_args.jitter, "Jitter appliance power and durations per home");
  synth->add_option("--appliances", synth_args.appliances,
                    "Archetypes: fridge, washer, kettle, microwave, dishwasher (default all)")
      ->delimiter(',');
  synth->add_option("--prefix", synth_args.prefix, "Home id prefix");

  PrepArgs prep_args;
  CLI::App* prep = app.add_subcommand(
      "prep", "Masks, intervals, reference banks, quadruples and normalizers");
  path_option(prep, "--channels", prep_args.channels, "Channel map JSON", "REFQUERY_CHANNELS")
      ->required();
  path_option(prep, "--out", prep_args.out, "Dataset cache file", "REFQUERY_OUT")->required();
  prep->add_option("--window", prep_args.window, "Window length L (odd)");
  prep->add_option("--seed", prep_args.seed, "Master seed");
  prep->add_option("--buildings", prep_args.buildings, "Building ids (default all)")->delimiter(',');
  prep->add_option("--appliances", prep_args.appliances, "Appliances (default all)")->delimiter(',');

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "Stage I: train the shared network");
  path_option(train, "--channels", train_args.channels, "Source channel map JSON",
              "REFQUERY_CHANNELS")
      ->required();
  path_option(train, "--out", train_args.out, "Output bundle", "REFQUERY_BUNDLE")->required();
  train->add_option("--buildings", train_args.buildings, "Building ids (default all)")
      ->delimiter(',');
  train->add_option("--appliances", train_args.appliances, "Appliances (default all)")
      ->delimiter(',');
  train_args.flags.add_stage1(train);

  AdaptArgs adapt_args;
  CLI::App* adapt = app.add_subcommand(
      "adapt", "Stage II: learn appliance embeddings on target data, network frozen");
  path_option(adapt, "--bundle", adapt_args.bundle, "Model bundle", "REFQUERY_BUNDLE")->required();
  path_option(adapt, "--channels", adapt_args.channels, "Target channel map JSON",
              "REFQUERY_CHANNELS")
      ->required();
  adapt->add_option("--building", adapt_args.building, "Target building id (default first)");
  adapt->add_option("--appliance", adapt_args.appliances, "Appliance(s) to adapt")
      ->required()
      ->delimiter(',');
  adapt->add_option("--days", adapt_args.days, "Days of target data to adapt on")
      ->check(CLI::PositiveNumber);
  path_option(adapt, "--out", adapt_args.out, "Output bundle (default: update in place)",
              "REFQUERY_OUT");
  adapt_args.flags.add_stage2(adapt, false);

  InferArgs infer_args;
  CLI::App* infer = app.add_subcommand("infer", "Stage III: sliding-window disaggregation");
  path_option(infer, "--bundle", infer_args.bundle, "Model bundle", "REFQUERY_BUNDLE")->required();
  path_option(infer, "--channels", infer_args.channels, "Channel map JSON", "REFQUERY_CHANNELS")
      ->required();
  infer->add_option("--building", infer_args.building, "Building id (default first)");
  infer->add_option("--appliance", infer_args.appliances, "Appliances (default all embedded)")
      ->delimiter(',');
  infer->add_option("--skip-days", infer_args.skip_days, "Skip this many leading days")
      ->check(CLI::NonNegativeNumber);
  infer->add_option("--days", infer_args.days, "Days to process (0 = to the end)")
      ->check(CLI::NonNegativeNumber);
  infer->add_option("--stride", infer_args.stride, "Keep every n-th window")
      ->check(CLI::PositiveNumber);
  path_option(infer, "--out", infer_args.out, "Output directory, one CSV per appliance",
              "REFQUERY_OUT")
      ->required();

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "MAE / F1 report for predictions");
  path_option(eval, "--predictions", eval_args.predictions, "Directory written by infer",
              "REFQUERY_PREDICTIONS")
      ->required();
  path_option(eval, "--channels", eval_args.channels, "Channel map JSON", "REFQUERY_CHANNELS")
      ->required();
  eval->add_option("--building", eval_args.building, "Building id (default first)");
  eval->add_option("--appliance", eval_args.appliances, "Appliances (default all files)")
      ->delimiter(',');
  path_option(eval, "--out", eval_args.out, "JSON report path", "REFQUERY_OUT");

  CostArgs cost_args;
  CLI::App* cost_cmd = app.add_subcommand("cost", "FLOPs and storage report");
  path_option(cost_cmd, "--bundle", cost_args.bundle, "Model bundle", "REFQUERY_BUNDLE")
      ->required();
  cost_cmd->add_option("--counts", cost_args.counts, "Appliance counts K for the scaling table")
      ->delimiter(',');
  cost_cmd->add_flag("--json", cost_args.json_output, "Emit JSON");

  SweepArgs sweep_args;
  CLI::App* sweep = app.add_subcommand("sweep", "(E, H) sensitivity grid");
  path_option(sweep, "--source", sweep_args.source, "Source channel map JSON",
              "REFQUERY_CHANNELS")
      ->required();
  path_option(sweep, "--target", sweep_args.target, "Target channel map JSON",
              "REFQUERY_TARGET")
      ->required();
  sweep->add_option("--target-building", sweep_args.target_building,
                    "Target building id (default first)");
  sweep->add_option("--embeddings", sweep_args.embeddings, "Embedding sizes")->delimiter(',');
  sweep->add_option("--hiddens", sweep_args.hiddens, "Hidden sizes")->delimiter(',');
  sweep->add_option("--adapt-days", sweep_args.adapt_days, "Target days used for adaptation")
      ->check(CLI::PositiveNumber);
  path_option(sweep, "--out", sweep_args.out, "Table output file", "REFQUERY_OUT");
  sweep_args.flags.add_stage1(sweep);
  sweep_args.flags.add_stage2(sweep, true);

  PlotArgs plot_args;
  CLI::App* plot = app.add_subcommand("plot-data", "Truth-vs-prediction CSVs for plotting");
  path_option(plot, "--bundle", plot_args.bundle, "Model bundle", "REFQUERY_BUNDLE")->required();
  path_option(plot, "--channels", plot_args.channels, "Channel map JSON", "REFQUERY_CHANNELS")
      ->required();
  plot->add_option("--building", plot_args.building, "Building id (default first)");
  plot->add_option("--appliance", plot_args.appliances, "Appliances (default all embedded)")
      ->delimiter(',');
  plot->add_option("--skip-days", plot_args.skip_days, "Skip this many leading days")
      ->check(CLI::NonNegativeNumber);
  plot->add_option("--days", plot_args.days, "Days to process (0 = to the end)")
      ->check(CLI::NonNegativeNumber);
  plot->add_option("--stride", plot_args.stride, "Keep every n-th window")
      ->check(CLI::PositiveNumber);
  path_option(plot, "--out", plot_args.out, "Output directory", "REFQUERY_OUT")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  Run run;
  run.root = &app;
  run.global = &global;
  run.command = app.get_subcommands().front();
  try {
    if (synth->parsed()) return run_synth(synth_args, run);
    if (prep->parsed()) return run_prep(prep_args, run);
    if (train->parsed()) return run_train(train_args, run);
    if (adapt->parsed()) return run_adapt(adapt_args, run);
    if (infer->parsed()) return run_infer(infer_args, run);
    if (eval->parsed()) return run_eval(eval_args, run);
    if (cost_cmd->parsed()) return run_cost(cost_args, run);
    if (sweep->parsed()) return run_sweep(sweep_args, run);
    if (plot->parsed()) return run_plot(plot_args, run);
  } catch (const DivergenceError& e) {
    std::cerr << "error: training diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
