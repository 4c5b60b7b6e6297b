#include "refquery/timeseries.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "refquery/error.hpp"

namespace refquery::ts {
namespace {

constexpr double kGridTolerance = 1e-6;

bool parse_double(std::string_view text, double& out) {
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) {
    text.remove_prefix(1);
  }
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) {
    text.remove_suffix(1);
  }
  if (text.empty()) return false;
  if (text == "nan" || text == "NaN" || text == "NAN") {
    out = std::numeric_limits<double>::quiet_NaN();
    return true;
  }
  if (text.front() == '+') text.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

std::vector<std::string_view> split(std::string_view line, char delimiter) {
  std::vector<std::string_view> fields;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = line.find(delimiter, pos);
    fields.push_back(line.substr(pos, next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return fields;
}

// Places (time, value) samples onto `count` buckets of `period` seconds
// starting at `origin`. NaN values are treated as missing.
TimeSeries to_grid(const std::vector<double>& times,
                   const std::vector<float>& values, double origin,
                   std::size_t count, double period, double max_fill) {
  std::vector<double> sums(count, 0.0);
  std::vector<std::uint32_t> hits(count, 0);
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (std::isnan(values[i])) continue;
    const double pos = (times[i] - origin) / period + kGridTolerance;
    if (pos < 0.0) continue;
    const auto bucket = static_cast<std::size_t>(std::floor(pos));
    if (bucket >= count) continue;
    sums[bucket] += values[i];
    ++hits[bucket];
  }
  TimeSeries out;
  out.start = origin;
  out.period = period;
  out.values.assign(count, 0.0f);
  std::vector<std::uint8_t> usable(count, 1);
  bool any_unusable = false;
  std::size_t i = 0;
  while (i < count) {
    if (hits[i]) {
      out.values[i] = static_cast<float>(sums[i] / hits[i]);
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < count && !hits[j]) ++j;
    const double gap = static_cast<double>(j - i) * period;
    const bool fill = i > 0 && gap <= max_fill + kGridTolerance;
    for (std::size_t k = i; k < j; ++k) {
      out.values[k] = fill ? out.values[i - 1] : 0.0f;
      usable[k] = fill ? 1 : 0;
    }
    any_unusable = any_unusable || !fill;
    i = j;
  }
  if (any_unusable) out.usable = std::move(usable);
  return out;
}

double grid_origin(double first_time, double period) {
  return std::floor(first_time / period + kGridTolerance) * period;
}

}  // namespace

bool TimeSeries::range_usable(std::size_t begin, std::size_t length) const {
  if (begin + length > values.size()) return false;
  if (usable.empty()) return true;
  return std::all_of(usable.begin() + static_cast<std::ptrdiff_t>(begin),
                     usable.begin() + static_cast<std::ptrdiff_t>(begin + length),
                     [](std::uint8_t u) { return u != 0; });
}

TimeSeries TimeSeries::slice(std::size_t begin, std::size_t length) const {
  if (begin + length > values.size()) {
    throw InvalidArgumentError("slice outside series");
  }
  TimeSeries out;
  out.start = time_at(begin);
  out.period = period;
  out.values.assign(values.begin() + static_cast<std::ptrdiff_t>(begin),
                    values.begin() + static_cast<std::ptrdiff_t>(begin + length));
  if (!usable.empty()) {
    out.usable.assign(usable.begin() + static_cast<std::ptrdiff_t>(begin),
                      usable.begin() + static_cast<std::ptrdiff_t>(begin + length));
  }
  return out;
}

TimeSeries load_series(const std::filesystem::path& path,
                       const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw EmptyInputError("cannot open " + path.string());
  struct Row {
    double time;
    float watts;
  };
  std::vector<Row> rows;
  std::string line;
  std::size_t line_no = 0;
  const std::size_t needed =
      std::max(options.columns.timestamp, options.columns.watts) + 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto fields = split(line, options.columns.delimiter);
    double t = 0.0;
    double w = 0.0;
    const bool ok = fields.size() >= needed &&
                    parse_double(fields[options.columns.timestamp], t) &&
                    !std::isnan(t) &&
                    parse_double(fields[options.columns.watts], w);
    if (!ok) {
      if (rows.empty() && line_no == 1) continue;  // header
      throw ParseError("unparseable row '" + line + "' in " + path.string(),
                       line_no);
    }
    if (!std::isnan(w) && w < 0.0) w = 0.0;
    rows.push_back({t, static_cast<float>(w)});
  }
  if (rows.empty()) throw EmptyInputError("no samples in " + path.string());

  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) { return a.time < b.time; });
  std::vector<double> times;
  std::vector<float> values;
  for (const Row& r : rows) {
    if (!times.empty() && times.back() == r.time) {
      values.back() = r.watts;
      continue;
    }
    times.push_back(r.time);
    values.push_back(r.watts);
  }

  double period = options.period;
  if (period <= 0.0) {
    if (times.size() < 2) {
      throw EmptyInputError("cannot infer a sampling period from one sample");
    }
    std::vector<double> diffs(times.size() - 1);
    for (std::size_t i = 1; i < times.size(); ++i) diffs[i - 1] = times[i] - times[i - 1];
    std::nth_element(diffs.begin(), diffs.begin() + diffs.size() / 2, diffs.end());
    period = diffs[diffs.size() / 2];
  }
  const double origin = grid_origin(times.front(), period);
  const auto count = static_cast<std::size_t>(
                         std::floor((times.back() - origin) / period + kGridTolerance)) + 1;
  return to_grid(times, values, origin, count, period, options.max_fill);
}

void write_series(const std::filesystem::path& path, const TimeSeries& series) {
  std::ofstream out(path);
  if (!out) throw InvalidArgumentError("cannot write " + path.string());
  out << "unix_timestamp,watts\n";
  out << std::setprecision(9);
  for (std::size_t i = 0; i < series.size(); ++i) {
    out << static_cast<long long>(std::llround(series.time_at(i))) << ','
        << series.values[i] << '\n';
  }
}

TimeSeries resample(const TimeSeries& series, double period, double max_fill) {
  if (!(period > 0.0)) throw InvalidArgumentError("target period must be positive");
  if (series.period <= 0.0) throw InvalidArgumentError("source period must be positive");
  const double duration = series.end() - series.start;
  if (series.values.empty() || duration + kGridTolerance < period) {
    throw EmptyInputError("series shorter than one target period");
  }
  if (std::abs(series.period - period) < kGridTolerance) return series;

  std::vector<double> times(series.size());
  std::vector<float> values = series.values;
  for (std::size_t i = 0; i < series.size(); ++i) {
    times[i] = series.time_at(i);
    if (!series.is_usable(i)) values[i] = std::numeric_limits<float>::quiet_NaN();
  }
  const double origin = grid_origin(series.start, period);
  const auto count = static_cast<std::size_t>(
      std::floor((series.end() - origin) / period + kGridTolerance));
  return to_grid(times, values, origin, std::max<std::size_t>(count, 1), period,
                 max_fill);
}

std::pair<TimeSeries, TimeSeries> align(const TimeSeries& mains,
                                        const TimeSeries& appliance) {
  if (std::abs(mains.period - appliance.period) > kGridTolerance) {
    throw InvalidArgumentError("align requires equal periods");
  }
  const double period = mains.period;
  const double phase = (appliance.start - mains.start) / period;
  if (std::abs(phase - std::round(phase)) > 1e-3) {
    throw InvalidArgumentError("series are sampled on offset grids");
  }
  const double begin = std::max(mains.start, appliance.start);
  const double end = std::min(mains.end(), appliance.end());
  if (end - begin < period - kGridTolerance) {
    throw NoOverlapError("series do not overlap in time");
  }
  const auto length =
      static_cast<std::size_t>(std::llround((end - begin) / period));
  auto cut = [&](const TimeSeries& s) {
    const auto offset = static_cast<std::size_t>(std::llround((begin - s.start) / period));
    return s.slice(offset, length);
  };
  return {cut(mains), cut(appliance)};
}

ActivationMask activation_mask(const TimeSeries& appliance, float threshold) {
  ActivationMask mask;
  mask.period = appliance.period;
  mask.bits.resize(appliance.size());
  for (std::size_t i = 0; i < appliance.size(); ++i) {
    mask.bits[i] = appliance.values[i] > threshold ? 1 : 0;
  }
  return mask;
}

ActivationMask clean_mask(const ActivationMask& mask, double min_on,
                          double max_gap) {
  ActivationMask out = mask;
  auto& bits = out.bits;
  const std::size_t n = bits.size();
  auto duration = [&](std::size_t run) {
    return static_cast<double>(run) * mask.period;
  };

  // (i) drop short ON runs
  for (std::size_t i = 0; i < n;) {
    if (!bits[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && bits[j]) ++j;
    if (duration(j - i) < min_on) std::fill(bits.begin() + i, bits.begin() + j, 0);
    i = j;
  }
  // (ii) bridge short OFF gaps enclosed by ON samples
  for (std::size_t i = 0; i < n;) {
    if (bits[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && !bits[j]) ++j;
    const bool enclosed = i > 0 && j < n;
    if (enclosed && duration(j - i) < max_gap) {
      std::fill(bits.begin() + i, bits.begin() + j, 1);
    }
    i = j;
  }
  return out;
}

OnIntervalSet extract_on_intervals(const ActivationMask& mask) {
  OnIntervalSet set;
  const std::size_t n = mask.size();
  for (std::size_t i = 0; i < n;) {
    if (!mask.bits[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && mask.bits[j]) ++j;
    set.intervals.push_back({i, j});
    i = j;
  }
  return set;
}

ActivationMask mask_from_intervals(const OnIntervalSet& intervals,
                                   std::size_t size, double period) {
  ActivationMask mask;
  mask.period = period;
  mask.bits.assign(size, 0);
  for (const auto& iv : intervals.intervals) {
    if (iv.begin >= iv.end || iv.end > size) {
      throw InvalidArgumentError("interval outside mask");
    }
    std::fill(mask.bits.begin() + iv.begin, mask.bits.begin() + iv.end, 1);
  }
  return mask;
}

OnIntervalSet on_intervals(const TimeSeries& appliance) {
  return extract_on_intervals(clean_mask(activation_mask(appliance)));
}

const BuildingChannels& ChannelMap::building(const std::string& id) const {
  for (const auto& b : buildings) {
    if (b.id == id) return b;
  }
  throw InvalidArgumentError("unknown building: " + id);
}

ChannelMap load_channel_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw EmptyInputError("cannot open channel map " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgumentError("malformed channel map " + path.string() + ": " + e.what());
  }
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  ChannelMap map;
  map.period = doc.value("period", kDefaultPeriod);
  for (const auto& b : doc.at("buildings")) {
    BuildingChannels ch;
    ch.id = b.at("id").get<std::string>();
    ch.mains = resolve(b.at("mains").get<std::string>());
    for (const auto& [name, p] : b.at("appliances").items()) {
      ch.appliances[name] = resolve(p.get<std::string>());
    }
    map.buildings.push_back(std::move(ch));
  }
  if (map.buildings.empty()) throw EmptyInputError("channel map lists no buildings");
  return map;
}

void save_channel_map(const std::filesystem::path& path, const ChannelMap& map) {
  const auto base = path.parent_path();
  auto rel = [&](const std::filesystem::path& p) {
    return std::filesystem::relative(p, base.empty() ? "." : base).generic_string();
  };
  nlohmann::json doc;
  doc["period"] = map.period;
  doc["buildings"] = nlohmann::json::array();
  for (const auto& b : map.buildings) {
    nlohmann::json jb;
    jb["id"] = b.id;
    jb["mains"] = rel(b.mains);
    jb["appliances"] = nlohmann::json::object();
    for (const auto& [name, p] : b.appliances) jb["appliances"][name] = rel(p);
    doc["buildings"].push_back(std::move(jb));
  }
  std::ofstream out(path);
  if (!out) throw InvalidArgumentError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

BuildingSeries align_building(BuildingSeries b) {
  double begin = b.mains.start;
  double end = b.mains.end();
  for (const auto& [name, s] : b.appliances) {
    begin = std::max(begin, s.start);
    end = std::min(end, s.end());
  }
  if (end - begin < b.mains.period - kGridTolerance) {
    throw NoOverlapError("channels of building " + b.id + " do not overlap");
  }
  const auto length =
      static_cast<std::size_t>(std::llround((end - begin) / b.mains.period));
  auto cut = [&](const TimeSeries& s) {
    if (std::abs(s.period - b.mains.period) > kGridTolerance) {
      throw InvalidArgumentError("channels of building " + b.id +
                                 " use different periods");
    }
    const auto offset =
        static_cast<std::size_t>(std::llround((begin - s.start) / s.period));
    return s.slice(offset, length);
  };
  b.mains = cut(b.mains);
  for (auto& [name, s] : b.appliances) s = cut(s);
  return b;
}

BuildingSeries load_building(const ChannelMap& map, const std::string& id) {
  const BuildingChannels& ch = map.building(id);
  LoadOptions options;
  options.period = map.period;
  BuildingSeries b;
  b.id = id;
  b.mains = load_series(ch.mains, options);
  for (const auto& [name, p] : ch.appliances) b.appliances[name] = load_series(p, options);
  return align_building(std::move(b));
}

}  // namespace refquery::ts
