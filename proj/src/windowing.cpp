#include "refquery/windowing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "refquery/error.hpp"
#include "refquery/random.hpp"

namespace refquery::win {

ReferenceBank build_reference_bank(const ts::TimeSeries& appliance,
                                   const ts::OnIntervalSet& intervals,
                                   std::size_t window,
                                   std::string appliance_name) {
  if (window % 2 == 0) throw InvalidArgumentError("window length must be odd");
  ReferenceBank bank;
  bank.appliance = std::move(appliance_name);
  bank.window = window;
  const auto n = static_cast<std::ptrdiff_t>(appliance.size());
  const auto length = static_cast<std::ptrdiff_t>(window);
  for (const auto& iv : intervals.intervals) {
    const auto c = static_cast<std::ptrdiff_t>((iv.begin + iv.end) / 2);
    const std::ptrdiff_t t0 = c - length / 2;
    if (t0 < 0 || t0 + length > n) continue;
    bank.starts.push_back(static_cast<std::size_t>(t0));
    bank.windows.emplace_back(appliance.values.begin() + t0,
                              appliance.values.begin() + t0 + length);
  }
  return bank;
}

std::vector<std::uint32_t> draw_reference_indices(std::size_t count,
                                                  std::size_t bank_size,
                                                  std::uint64_t seed) {
  if (bank_size == 0) throw NoReferenceError("reference bank is empty");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint32_t> pick(
      0, static_cast<std::uint32_t>(bank_size - 1));
  std::vector<std::uint32_t> draws(count);
  for (auto& d : draws) d = pick(rng);
  return draws;
}

std::vector<std::size_t> usable_window_starts(const ts::TimeSeries& mains,
                                              std::size_t window) {
  std::vector<std::size_t> starts;
  if (mains.size() < window) return starts;
  const std::size_t last = mains.size() - window;
  if (mains.usable.empty()) {
    starts.resize(last + 1);
    for (std::size_t t = 0; t <= last; ++t) starts[t] = t;
    return starts;
  }
  // Sliding count of unusable samples inside the window.
  std::size_t bad = 0;
  for (std::size_t i = 0; i < window; ++i) bad += mains.usable[i] ? 0 : 1;
  for (std::size_t t = 0;; ++t) {
    if (bad == 0) starts.push_back(t);
    if (t == last) break;
    bad -= mains.usable[t] ? 0 : 1;
    bad += mains.usable[t + window] ? 0 : 1;
  }
  return starts;
}

std::vector<TrainingQuadruple> generate_quadruples(
    const ts::TimeSeries& mains, const ts::TimeSeries& appliance,
    const ts::ActivationMask& mask, const ReferenceBank& bank,
    std::size_t window, std::uint64_t seed) {
  if (bank.empty()) {
    throw NoReferenceError("reference bank for '" + bank.appliance +
                           "' is empty; appliance excluded from training");
  }
  if (mains.size() != appliance.size() || mask.size() != appliance.size()) {
    throw InvalidShapeError("mains, appliance and mask must be aligned");
  }
  if (mains.size() < window) {
    throw InvalidArgumentError("series shorter than the window length");
  }
  const std::size_t p = center_offset(window);
  const auto draws = draw_reference_indices(mains.size() - window + 1,
                                            bank.size(), seed);
  std::vector<TrainingQuadruple> out;
  for (std::size_t t : usable_window_starts(mains, window)) {
    TrainingQuadruple q;
    q.t = t;
    q.query.assign(mains.values.begin() + static_cast<std::ptrdiff_t>(t),
                   mains.values.begin() + static_cast<std::ptrdiff_t>(t + window));
    q.reference_index = draws[t];
    q.reference = bank.windows[q.reference_index];
    q.power_label = appliance.values[t + p];
    q.on_label = mask.bits[t + p];
    out.push_back(std::move(q));
  }
  return out;
}

ZNormalizer::ZNormalizer(float mean, float std) : mean_(mean), std_(std) {
  if (!(std >= kStdEpsilon)) {
    throw InvalidArgumentError("normalizer std below the epsilon guard");
  }
}

ZNormalizer ZNormalizer::fit(std::span<const float> values) {
  if (values.empty()) throw EmptyInputError("cannot fit a normalizer to no data");
  double sum = 0.0;
  for (float v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (float v : values) sq += (v - mean) * (v - mean);
  const double std = std::sqrt(sq / static_cast<double>(values.size()));
  return ZNormalizer(static_cast<float>(mean),
                     std::max(static_cast<float>(std), kStdEpsilon));
}

Tensor znorm_apply(const ZNormalizer& z, const Tensor& x, Direction direction) {
  Tensor out = x;
  for (float& v : out.values()) {
    v = direction == Direction::kForward ? z.forward(v) : z.inverse(v);
  }
  return out;
}

std::vector<float> znorm_apply(const ZNormalizer& z, std::span<const float> x,
                               Direction direction) {
  std::vector<float> out(x.begin(), x.end());
  for (float& v : out) {
    v = direction == Direction::kForward ? z.forward(v) : z.inverse(v);
  }
  return out;
}

PreparedBuilding prepare_building(const ts::BuildingSeries& building,
                                  std::size_t window, std::uint64_t seed,
                                  std::span<const std::string> appliances) {
  PreparedBuilding out;
  out.id = building.id;
  out.mains = building.mains;
  if (building.mains.size() < window) {
    throw InvalidArgumentError("building " + building.id +
                               " is shorter than one window");
  }
  out.window_starts = usable_window_starts(building.mains, window);
  const std::size_t draws = building.mains.size() - window + 1;
  for (const auto& [name, series] : building.appliances) {
    if (!appliances.empty() &&
        std::find(appliances.begin(), appliances.end(), name) == appliances.end()) {
      continue;
    }
    if (series.size() != building.mains.size()) {
      throw InvalidShapeError("appliance " + name + " is not aligned with mains");
    }
    PreparedAppliance a;
    a.name = name;
    a.series = series;
    a.mask = ts::clean_mask(ts::activation_mask(series));
    a.intervals = ts::extract_on_intervals(a.mask);
    a.bank = build_reference_bank(series, a.intervals, window, name);
    if (a.bank.empty()) {
      out.warnings.push_back("building " + building.id + ": appliance " + name +
                             " has no complete reference window; excluded");
      continue;
    }
    a.reference_draws = draw_reference_indices(
        draws, a.bank.size(), derive_seed(seed, building.id + "/" + name));
    out.appliances.push_back(std::move(a));
  }
  return out;
}

Normalizers fit_normalizers(std::span<const PreparedBuilding> buildings,
                            std::size_t window) {
  std::vector<float> mains;
  std::vector<float> refs;
  std::vector<float> power;
  const std::size_t p = center_offset(window);
  for (const auto& b : buildings) {
    mains.insert(mains.end(), b.mains.values.begin(), b.mains.values.end());
    for (const auto& a : b.appliances) {
      for (const auto& w : a.bank.windows) refs.insert(refs.end(), w.begin(), w.end());
      for (std::size_t t : b.window_starts) power.push_back(a.series.values[t + p]);
    }
  }
  return {ZNormalizer::fit(mains), ZNormalizer::fit(refs), ZNormalizer::fit(power)};
}

namespace {

void check_token(const std::string& s) {
  if (s.empty() || s.find_first_of(" \t\r\n") != std::string::npos) {
    throw InvalidArgumentError("name '" + s + "' must be non-empty without whitespace");
  }
}

}  // namespace

void write_dataset_cache(const std::filesystem::path& path,
                         std::span<const PreparedBuilding> buildings,
                         const Normalizers& normalizers, std::size_t window) {
  std::ofstream out(path);
  if (!out) throw InvalidArgumentError("cannot write " + path.string());
  out << std::setprecision(9);
  out << "refquery-dataset 1\n";
  out << "window " << window << '\n';
  auto norm = [&](const char* role, const ZNormalizer& z) {
    out << "normalizer " << role << ' ' << z.mean() << ' ' << z.std() << '\n';
  };
  norm("query", normalizers.query);
  norm("reference", normalizers.reference);
  norm("power", normalizers.power);
  const std::size_t p = center_offset(window);
  for (const auto& b : buildings) {
    check_token(b.id);
    for (const auto& a : b.appliances) {
      check_token(a.name);
      out << "bank " << b.id << ' ' << a.name << ' ' << a.bank.size();
      for (std::size_t s : a.bank.starts) out << ' ' << s;
      out << '\n';
    }
  }
  for (const auto& b : buildings) {
    for (const auto& a : b.appliances) {
      for (std::size_t t : b.window_starts) {
        out << "q " << b.id << ' ' << a.name << ' ' << t << ' '
            << a.reference_draws[t] << ' ' << a.series.values[t + p] << ' '
            << static_cast<int>(a.mask.bits[t + p]) << '\n';
      }
    }
  }
}

DatasetCache read_dataset_cache(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw EmptyInputError("cannot open " + path.string());
  DatasetCache cache;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream row(line);
    std::string tag;
    row >> tag;
    if (tag.empty()) continue;
    bool ok = true;
    if (tag == "refquery-dataset") {
      int version = 0;
      row >> version;
      if (version != 1) throw VersionMismatchError("unsupported dataset cache version");
      header = true;
    } else if (tag == "window") {
      ok = static_cast<bool>(row >> cache.window);
    } else if (tag == "normalizer") {
      std::string role;
      float mean = 0.0f;
      float std = 0.0f;
      ok = static_cast<bool>(row >> role >> mean >> std);
      if (ok) {
        const ZNormalizer z(mean, std);
        if (role == "query") cache.normalizers.query = z;
        else if (role == "reference") cache.normalizers.reference = z;
        else if (role == "power") cache.normalizers.power = z;
        else ok = false;
      }
    } else if (tag == "bank") {
      // bank metadata is informational for readers of the cache
    } else if (tag == "q") {
      CachedQuadruple q;
      int on = 0;
      ok = static_cast<bool>(row >> q.building >> q.appliance >> q.t >>
                             q.reference_index >> q.power_label >> on);
      q.on_label = static_cast<std::uint8_t>(on != 0);
      if (ok) cache.quadruples.push_back(std::move(q));
    } else {
      ok = false;
    }
    if (!ok || !header) throw ParseError("malformed dataset cache row", line_no);
  }
  if (!header) throw EmptyInputError("empty dataset cache " + path.string());
  return cache;
}

}  // namespace refquery::win
