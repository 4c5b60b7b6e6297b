// Acceptance criteria 1-10. Prints one PASS/FAIL line per criterion;
// `--only N` runs a single one. Exit status is nonzero if any fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gradcheck.hpp"
#include "json.hpp"
#include "oracle.hpp"
#include "refquery/bundle.hpp"
#include "refquery/costmodel.hpp"
#include "refquery/error.hpp"
#include "refquery/metrics.hpp"
#include "refquery/ops.hpp"
#include "refquery/pipeline.hpp"
#include "refquery/random.hpp"
#include "refquery/synth.hpp"
#include "refquery/timeseries.hpp"
#include "refquery/windowing.hpp"
#include "test_util.hpp"

using namespace refquery;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  // Records a sub-check; only failing sub-checks are listed.
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string num(double v, int digits = 4) {
  char b[64];
  std::snprintf(b, sizeof b, "%.*g", digits, v);
  return b;
}

ts::TimeSeries series(std::vector<float> v, double period = 8.0) {
  ts::TimeSeries s;
  s.period = period;
  s.values = std::move(v);
  return s;
}

model::ModelBundle deployed_bundle(const ts::BuildingSeries& home, std::uint64_t seed) {
  model::ModelBundle b;
  b.network = model::Network(model::Architecture{}, seed);
  const std::vector<win::PreparedBuilding> pb{
      win::prepare_building(home, win::kWindowLength, seed)};
  b.normalizers = win::fit_normalizers(pb, win::kWindowLength);
  return b;
}

std::vector<std::uint8_t> network_bytes(const model::ModelBundle& b) {
  model::ModelBundle bare;
  bare.network = b.network;
  bare.normalizers = b.normalizers;
  return model::serialize_bundle(bare);
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

// ---- 1 ---------------------------------------------------------------------

Outcome gradient_correctness() {
  Outcome o;
  std::size_t expected_params = 0;
  {
    model::Network n(gradcheck::tiny_arch(), 1);
    expected_params = n.params().parameter_count();
  }
  double worst = 0.0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const gradcheck::Report net = gradcheck::check_network(seed);
    bool frozen_untouched = false;
    const gradcheck::Report emb = gradcheck::check_embedding(seed, &frozen_untouched);
    worst = std::max({worst, net.max_rel_error, emb.max_rel_error});
    o.require(net.max_rel_error <= gradcheck::kTolerance,
              "parameter gradient off: " + net.worst);
    o.require(emb.max_rel_error <= gradcheck::kTolerance,
              "embedding gradient off: " + emb.worst);
    o.require(net.checked == expected_params, "not every parameter was checked");
    o.require(emb.checked == 4, "not every embedding coordinate was checked");
    o.require(net.nonzero > net.checked / 3, "too few nonzero gradients to be meaningful");
    o.require(frozen_untouched, "frozen network received gradient");
  }
  o.note(std::to_string(expected_params) + " parameters + 4 embedding values x 3 seeds, max rel error " +
         num(worst));
  return o;
}

// ---- 2 ---------------------------------------------------------------------

Outcome architecture_calibration() {
  Outcome o;
  const model::Architecture arch;
  const model::Network net(arch, 1);
  const std::size_t params = net.params().parameter_count();
  o.require(params == 292898, "parameter count " + std::to_string(params));

  model::ModelBundle b;
  b.network = net;
  const double mb = static_cast<double>(model::serialize_bundle(b).size()) * 1e-6;
  o.require(mb >= 1.10 && mb <= 1.25, "payload " + num(mb) + " MB");

  const cost::FlopBreakdown f = cost::count_flops(arch);
  const double m = f.per_appliance_mflops();
  const double bb = f.shared_mflops();
  o.require(m >= 0.162 && m <= 0.168, "per-appliance " + num(m) + " MFLOPs");
  o.require(bb >= 4.0 && bb <= 4.3, "shared " + num(bb) + " MFLOPs");

  // Independent tally from the reference forward pass.
  const oracle::Net on = oracle::Net::from(net);
  oracle::Counter enc, head;
  const oracle::Vec eq = oracle::encode(on, oracle::Vec(arch.window, 0.5), &enc);
  oracle::head(on, eq, eq, -0.2, &head);
  o.require(enc.flops == f.shared_flops() && head.flops == f.per_appliance_flops(),
            "cost model disagrees with the reference tally");
  o.note("params " + std::to_string(params) + ", payload " + num(mb) + " MB, b = " + num(bb) +
         ", m = " + num(m));
  return o;
}

// ---- 3 ---------------------------------------------------------------------

Outcome stage2_contract() {
  Outcome o;
  const ts::BuildingSeries home =
      synth::to_building("t", synth::synth_home(synth::make_home(31, 1.0, true)));
  model::ModelBundle bundle = deployed_bundle(home, 3);
  const std::uint32_t checksum = bundle.network.params().checksum();
  const auto bytes_before = network_bytes(bundle);
  const std::size_t size_before = model::serialize_bundle(bundle).size();

  pipeline::TrainConfig cfg;
  cfg.threads = 0;
  const pipeline::QueryEmbeddings q =
      pipeline::encode_queries(bundle, home.mains, cfg.worker_threads(), 4);
  const pipeline::CenterTargets t = pipeline::center_targets(home.appliances.at("kettle"), q);
  const pipeline::Stage2Result r = pipeline::adapt_stage2(bundle, q, t, cfg, 5);
  bundle.embeddings["kettle"] = r.embedding;

  o.require(r.trainable_values == 128, "trainable values " + std::to_string(r.trainable_values));
  o.require(r.network_checksum_before == checksum && r.network_checksum_after == checksum,
            "checksum changed");
  o.require(bundle.network.params().checksum() == checksum, "network checksum changed");
  o.require(network_bytes(bundle) == bytes_before, "network bytes changed");
  const std::size_t delta = model::serialize_bundle(bundle).size() - size_before;
  o.require(delta <= 1024, "delta " + std::to_string(delta) + " bytes");
  o.require(!same_bits(r.embedding, pipeline::random_embedding(128, 5)) ||
                r.best_epoch == 0,
            "embedding did not move");
  o.note("128 trainable values, checksum " + std::to_string(checksum) + " unchanged, delta " +
         std::to_string(delta) + " bytes, " + std::to_string(r.loss_history.size() - 1) +
         " epochs");
  return o;
}

// ---- 4 ---------------------------------------------------------------------

Outcome interval_oracle() {
  Outcome o;
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> len(0, 500);
  std::uniform_int_distribution<int> wide(1, 60);
  const int boundary[] = {7, 8, 37, 38};  // 56/64 s and 296/304 s at 8 s
  const float on_levels[] = {20.001f, 21.0f, 150.0f, 2600.0f};
  const float off_levels[] = {0.0f, 5.0f, 20.0f};  // exactly 20 W is OFF
  std::size_t mismatches = 0, at_20w = 0, short_on = 0, short_gap = 0, masks = 0;

  auto check = [&](const std::vector<float>& watts, double period) {
    ++masks;
    const auto cleaned = ts::clean_mask(ts::activation_mask(series(watts, period)));
    const auto expected = oracle::clean(watts, period);
    std::vector<ts::OnInterval> want;
    for (auto [s, e] : oracle::intervals(expected)) want.push_back({s, e});
    if (cleaned.bits != expected || ts::extract_on_intervals(cleaned).intervals != want) {
      ++mismatches;
    }
  };

  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = len(rng);
    std::vector<float> w;
    bool on = (rng() & 1) != 0;
    while (w.size() < n) {
      const int r = (rng() % 3 != 0) ? boundary[rng() % 4] : wide(rng);
      const float level = on ? on_levels[rng() % 4] : off_levels[rng() % 3];
      if (!on && level == 20.0f) ++at_20w;
      if (on && (r == 7 || r == 8)) ++short_on;
      if (!on && (r == 37 || r == 38)) ++short_gap;
      for (int i = 0; i < r && w.size() < n; ++i) w.push_back(level);
      on = !on;
    }
    check(w, 8.0);
  }

  // Durations landing exactly on 60 s and 300 s need other periods.
  for (double period : {10.0, 12.0, 20.0, 60.0}) {
    const auto on60 = static_cast<std::size_t>(60.0 / period);
    const auto gap300 = static_cast<std::size_t>(300.0 / period);
    for (std::size_t a : {on60 - 1, on60, on60 + 1}) {
      for (std::size_t g : {gap300 - 1, gap300, gap300 + 1}) {
        std::vector<float> w(3, 0.0f);
        w.insert(w.end(), a, 100.0f);
        w.insert(w.end(), g, 0.0f);
        w.insert(w.end(), on60 + 1, 100.0f);
        w.insert(w.end(), 3, 0.0f);
        check(w, period);
      }
    }
  }
  o.require(mismatches == 0, std::to_string(mismatches) + " mismatching masks");
  o.require(at_20w > 0 && short_on > 0 && short_gap > 0, "boundary cases not exercised");
  o.note(std::to_string(masks) + " masks (1000 at 8 s), " + std::to_string(short_on) +
         " ON runs of 7/8 samples, " + std::to_string(short_gap) + " gaps of 37/38, " +
         std::to_string(at_20w) + " runs at exactly 20 W");
  return o;
}

// ---- 5 ---------------------------------------------------------------------

Outcome training_set_equivalence() {
  Outcome o;
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<std::size_t> len(1, 2000);
  std::uniform_int_distribution<std::size_t> half(1, 60);
  std::size_t trials = 0, with_bank = 0, guard_skips = 0, empty_bank_throws = 0, quads = 0;
  std::size_t bad = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t L = trial % 5 == 0 ? win::kWindowLength : 2 * half(rng) + 1;
    const std::size_t n = std::max(L, len(rng));
    const auto app = testutil::random_appliance(rng, n);
    std::vector<float> mains(n);
    std::normal_distribution<float> noise(0.0f, 10.0f);
    for (std::size_t i = 0; i < n; ++i) mains[i] = app[i] + 150.0f + noise(rng);
    ++trials;

    const auto cleaned = oracle::clean(app, 8.0);
    const auto iv = oracle::intervals(cleaned);
    const auto bank_oracle = oracle::bank(app, iv, L);
    guard_skips += iv.size() - bank_oracle.size();

    const auto mask = ts::clean_mask(ts::activation_mask(series(app)));
    const auto bank = win::build_reference_bank(series(app), ts::extract_on_intervals(mask), L);
    if (bank.windows != bank_oracle) ++bad;
    if (bank.empty()) {
      try {
        win::generate_quadruples(series(mains), series(app), mask, bank, L, trial);
      } catch (const NoReferenceError&) {
        ++empty_bank_throws;
      }
      continue;
    }
    ++with_bank;
    const auto expected = oracle::training_set(mains, app, L);
    const auto got = win::generate_quadruples(series(mains), series(app), mask, bank, L, trial);
    if (got.size() != n - L + 1 || got.size() != expected.size()) {
      ++bad;
      continue;
    }
    for (std::size_t i = 0; i < got.size(); ++i) {
      const auto& g = got[i];
      const auto& e = expected[i];
      const bool member = g.reference_index < bank_oracle.size() &&
                          bank_oracle[g.reference_index] == g.reference;
      if (g.t != e.t || g.t + L / 2 != e.label_index || g.query != e.query ||
          g.power_label != e.power || g.on_label != e.on || !member) {
        ++bad;
        break;
      }
    }
    quads += got.size();
  }
  o.require(bad == 0, std::to_string(bad) + " series disagree with the reference generator");
  o.require(with_bank > 100 && guard_skips > 0 && empty_bank_throws > 0,
            "coverage too thin");
  o.note(std::to_string(trials) + " series, " + std::to_string(quads) + " quadruples, " +
         std::to_string(guard_skips) + " guard skips, " + std::to_string(empty_bank_throws) +
         " empty banks rejected");
  return o;
}

// ---- 6 ---------------------------------------------------------------------

// Stage I settings for the transfer run. Window stride trades training-set
// size for time on small machines; everything else is the default schedule.
constexpr std::size_t kTransferStride = 4;
constexpr std::size_t kTransferMaxEpochs = 45;

Outcome synthetic_transfer() {
  Outcome o;
  std::vector<ts::BuildingSeries> source;
  for (std::uint64_t i = 0; i < 4; ++i) {
    source.push_back(synth::to_building(
        "source" + std::to_string(i), synth::synth_home(synth::make_home(100 + i, 3.0, true))));
  }
  const ts::BuildingSeries target =
      synth::to_building("target", synth::synth_home(synth::make_home(777, 3.0, true)));

  pipeline::TrainConfig cfg;
  cfg.seed = 1;
  cfg.stage1_window_stride = kTransferStride;
  cfg.stage1_max_epochs = kTransferMaxEpochs;
  pipeline::Stage1Result trained = pipeline::train_stage1(cfg, source);
  const auto [adapt_part, eval_part] = pipeline::split_days(target, 1.0);
  const pipeline::TransferResult r =
      pipeline::adapt_and_evaluate(trained.bundle, adapt_part, eval_part, cfg);

  std::string f1s;
  double kettle = -1.0;
  for (std::size_t i = 0; i < r.adapted.rows.size(); ++i) {
    const auto& a = r.adapted.rows[i];
    const auto& rnd = r.random.rows[i];
    if (a.appliance == "kettle") kettle = a.f1.f1;
    o.require(a.f1.f1 > rnd.f1.f1, a.appliance + " adapted F1 " + num(a.f1.f1, 3) +
                                      " <= random " + num(rnd.f1.f1, 3));
    o.require(a.off_mean_watts <= 5.0,
              a.appliance + " OFF mean " + num(a.off_mean_watts, 3) + " W");
    f1s += a.appliance + " " + num(a.f1.f1, 3) + "/" + num(rnd.f1.f1, 3) + " (OFF " +
           num(a.off_mean_watts, 2) + " W) ";
  }
  o.require(r.adapted.rows.size() == 5, "expected 5 archetypes");
  o.require(kettle >= 0.80, "kettle F1 " + num(kettle, 3));
  o.require(r.adapted.mean_f1() >= 0.60, "mean F1 " + num(r.adapted.mean_f1(), 3));
  o.note("adapted/random F1: " + f1s + "; mean " + num(r.adapted.mean_f1(), 3) +
         "; Stage I best epoch " + std::to_string(trained.best_epoch) + " of " +
         std::to_string(trained.last_epoch));
  return o;
}

// ---- 7 ---------------------------------------------------------------------

Outcome off_anchoring() {
  Outcome o;
  model::ModelBundle b;
  b.network = model::Network(model::Architecture{}, 7);
  b.normalizers = {win::ZNormalizer(300.0f, 250.0f), win::ZNormalizer(400.0f, 600.0f),
                   win::ZNormalizer(37.3f, 211.9f)};
  const float off = b.off_bias();
  o.require(off == -37.3f / 211.9f, "b_off is not -mu/sigma");

  // y_z >= b_off for random unit embedding pairs, several networks.
  std::mt19937_64 rng(11);
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::size_t violations = 0, pairs = 0;
  for (std::uint64_t seed : {7u, 8u}) {
    const model::Network net(model::Architecture{}, seed);
    for (int block = 0; block < 5; ++block) {
      Tensor ref(Shape{1000, 128});
      Tensor q(Shape{1000, 128});
      for (float& v : ref.values()) v = g(rng);
      for (float& v : q.values()) v = g(rng);
      for (std::size_t i = 0; i < 1000; ++i) {
        Tensor r1 = nd::l2_normalize(Tensor::vector({ref.data() + i * 128, ref.data() + i * 128 + 128}));
        Tensor q1 = nd::l2_normalize(Tensor::vector({q.data() + i * 128, q.data() + i * 128 + 128}));
        std::copy_n(r1.data(), 128, ref.data() + i * 128);
        std::copy_n(q1.data(), 128, q.data() + i * 128);
      }
      for (std::size_t i = 0; i < 1000; ++i) {
        const Tensor r1 = Tensor::vector({ref.data() + i * 128, ref.data() + i * 128 + 128});
        const Tensor q1 = Tensor::vector({q.data() + i * 128, q.data() + i * 128 + 128});
        const auto out = model::head_forward(net, r1, q1, off);
        ++pairs;
        if (!(out.power_z[0] >= off)) ++violations;
      }
    }
  }
  o.require(pairs == 10000 && violations == 0, std::to_string(violations) + " pairs below b_off");

  // State probability driven to 0.
  auto& ps = b.network.params();
  ps.value("head.state.weight").fill(0.0f);
  ps.value("head.state.bias")[0] = -1e4f;
  const Tensor e = pipeline::random_embedding(128, 1);
  pipeline::QueryEmbeddings qe;
  qe.starts = {0, 1, 2};
  qe.embeddings = Tensor(Shape{3, 128});
  for (std::size_t i = 0; i < 3; ++i) {
    const Tensor r = pipeline::random_embedding(128, 100 + i);
    std::copy_n(r.data(), 128, qe.embeddings.data() + i * 128);
  }
  const auto head = model::head_forward(b.network, e, qe.embeddings, off);
  const auto pred = pipeline::predict(b, e, qe);
  for (std::size_t i = 0; i < 3; ++i) {
    o.require(head.state_prob[i] == 0.0f, "state probability not 0");
    o.require(head.power_z[i] == off, "y_z != b_off");
    o.require(b.normalizers.power.inverse(head.power_z[i]) == 0.0f, "denormalized OFF != 0 W");
    o.require(pred.watts[i] == 0.0f, "predicted watts != 0");
  }
  o.note("10000 pairs >= b_off; p = 0 gives exactly 0 W");
  return o;
}

// ---- 8 ---------------------------------------------------------------------

Outcome metric_fixtures() {
  Outcome o;
  using F = std::vector<float>;
  using S = std::vector<std::uint8_t>;
  o.require(metrics::mae(F{1, 2, 3}, F{1, 2, 3}) == 0.0, "mae identical");
  o.require(metrics::mae(F{0, 10}, F{5, 5}) == 5.0, "mae [0,10] vs [5,5]");
  o.require(metrics::mae(F{0, 30}, F{15, 15}) == 15.0, "mae homogeneity");
  o.require(metrics::mae(F{2, 7, 1}, F{5, 10, 4}) == 3.0, "mae constant offset");

  const auto perfect = metrics::f1(S{0, 1, 1, 0}, F{0.1f, 0.9f, 0.5f, 0.49f});
  o.require(perfect.f1 == 1.0, "perfect F1");
  const auto r = metrics::f1(S{1, 1, 1, 0, 0}, F{0.9f, 0.5f, 0.1f, 0.7f, 0.2f});
  o.require(r.tp == 2 && r.fp == 1 && r.fn == 1 && r.tn == 1, "counts");
  o.require(std::abs(r.f1 - 4.0 / 6.0) < 1e-12, "F1 " + num(r.f1, 17) + " != 4/6");
  const auto none = metrics::f1(S{0, 0, 0}, F{0.1f, 0.2f, 0.3f});
  o.require(none.f1 == 0.0 && none.tp == 0 && none.fp == 0 && none.fn == 0,
            "zero-denominator F1");
  bool threw = false;
  try {
    metrics::mae(F{}, F{});
  } catch (const EmptyInputError&) {
    threw = true;
  }
  o.require(threw, "empty mae accepted");
  o.note("MAE fixtures, F1 = 4/6, zero denominator -> 0");
  return o;
}

// ---- 9 ---------------------------------------------------------------------

Outcome incremental_extension() {
  Outcome o;
  synth::HomeSpec spec = synth::make_home(55, 1.0, true);
  synth::ApplianceSpec freezer;
  freezer.name = "freezer";
  freezer.archetype = synth::Archetype::kCyclingFridge;
  freezer.power_scale = 1.6f;
  freezer.duration_scale = 1.3f;
  spec.appliances.push_back(freezer);
  const ts::BuildingSeries home = synth::to_building("t", synth::synth_home(spec));
  model::ModelBundle bundle = deployed_bundle(home, 9);

  pipeline::TrainConfig cfg;
  const auto q = pipeline::encode_queries(bundle, home.mains, cfg.worker_threads(), 4);
  for (const char* name : {"fridge", "washer", "kettle", "microwave", "dishwasher"}) {
    const auto r = pipeline::adapt_stage2(bundle, q, pipeline::center_targets(home.appliances.at(name), q),
                                          cfg, derive_seed(1, name));
    bundle.embeddings[name] = r.embedding;
  }
  const model::ModelBundle before = bundle;
  const auto net_before = network_bytes(bundle);

  testutil::TempDir dir("acceptance");
  model::save_bundle(bundle, dir / "five.rq");
  model::ModelBundle extended = model::load_bundle(dir / "five.rq");
  pipeline::adapt_appliance(extended, "freezer", home.mains, home.appliances.at("freezer"), cfg);
  model::save_bundle(extended, dir / "six.rq");
  const model::ModelBundle reloaded = model::load_bundle(dir / "six.rq");

  o.require(reloaded.embeddings.size() == 6, "expected 6 embeddings");
  for (const auto& [name, e] : before.embeddings) {
    o.require(same_bits(reloaded.embeddings.at(name), e), name + " embedding changed");
  }
  o.require(network_bytes(reloaded) == net_before, "network bytes changed");
  o.require(reloaded.network.params().checksum() == before.network.params().checksum(),
            "network checksum changed");
  o.note("5 embeddings and " + std::to_string(net_before.size()) +
         " network bytes bit-identical after adding freezer");
  return o;
}

// ---- 10 --------------------------------------------------------------------

int run_cli(const std::string& args, const std::filesystem::path& cwd) {
  const std::string cmd = "cd '" + cwd.string() + "' && '" REFQUERY_CLI_PATH "' " + args +
                          " > cli.log 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome sensitivity_harness() {
  Outcome o;
  testutil::TempDir dir("acceptance");
  o.require(run_cli("synth --out source --homes 3 --days 1 --seed 1", dir.path()) == 0,
            "synth source failed");
  o.require(run_cli("synth --out target --homes 1 --days 2 --seed 9 --jitter", dir.path()) == 0,
            "synth target failed");
  if (!o.pass) return o;
  const int code = run_cli(
      "sweep --source source/channels.json --target target/channels.json --embeddings 8,16 "
      "--hiddens 8,16 --window-stride 8 --max-epochs 8 --out table.txt -q",
      dir.path());
  o.require(code == 0, "sweep exited " + std::to_string(code) + ": " +
                           testutil::read_text(dir / "cli.log"));
  if (!o.pass) return o;

  std::istringstream table(testutil::read_text(dir / "table.txt"));
  std::string header;
  std::getline(table, header);
  o.require(header.find("rank") != std::string::npos && header.find("average") != std::string::npos &&
                header.find("kettle") != std::string::npos,
            "header: " + header);
  std::vector<double> averages;
  std::set<std::pair<int, int>> grid;
  std::string line;
  int expected_rank = 1;
  while (std::getline(table, line)) {
    std::istringstream row(line);
    int rank = 0, e = 0, h = 0;
    row >> rank >> e >> h;
    std::vector<double> cells;
    double v;
    while (row >> v) cells.push_back(v);
    o.require(rank == expected_rank++, "rank column out of order");
    o.require(cells.size() == 6, "expected 5 appliance columns and an average");
    if (!cells.empty()) averages.push_back(cells.back());
    grid.insert({e, h});
  }
  o.require(averages.size() == 4, std::to_string(averages.size()) + " rows");
  o.require(std::is_sorted(averages.begin(), averages.end()), "rows not sorted by average MAE");
  o.require(grid == std::set<std::pair<int, int>>{{8, 8}, {8, 16}, {16, 8}, {16, 16}},
            "grid rows differ from {8,16}x{8,16}");
  const auto m = nlohmann::json::parse(testutil::read_text(dir / "table.txt.sweep.manifest.json"));
  o.require(m["results"]["rows"].size() == 4, "manifest rows");
  std::string avg;
  for (double a : averages) avg += num(a, 4) + " ";
  o.note("4 ranked rows, average MAE " + avg);
  return o;
}

struct Criterion {
  int id;
  const char* name;
  double limit_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  int only = 0;
  app.add_option("--only", only, "Run one criterion (1-10)")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", 10, gradient_correctness},
      {2, "architecture calibration", 5, architecture_calibration},
      {3, "Stage II contract", 60, stage2_contract},
      {4, "ON-interval oracle equivalence", 5, interval_oracle},
      {5, "training-set generation equivalence", 10, training_set_equivalence},
      {6, "end-to-end synthetic transfer", 1800, synthetic_transfer},
      {7, "OFF anchoring", 5, off_anchoring},
      {8, "metric fixtures", 5, metric_fixtures},
      {9, "incremental extension", 300, incremental_extension},
      {10, "sensitivity harness", 3600, sensitivity_harness},
  };

  bool all = true;
  for (const Criterion& c : criteria) {
    if (only != 0 && c.id != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (seconds > c.limit_seconds) {
      o.pass = false;
      o.note("runtime " + num(seconds, 3) + " s exceeds " + num(c.limit_seconds, 4) + " s");
    }
    all = all && o.pass;
    std::printf("criterion %d %s: %s (%.2f s) %s\n", c.id, o.pass ? "PASS" : "FAIL", c.name,
                seconds, o.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
