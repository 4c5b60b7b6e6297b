#include "refquery/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "refquery/error.hpp"
#include "refquery/random.hpp"
#include "refquery/windowing.hpp"

namespace refquery::synth {
namespace {

constexpr double kDay = 86400.0;
// Separation between activations of one appliance, in seconds. Longer than
// the 300 s gap-bridging rule.
constexpr double kMinSeparation = 400.0;

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Number of samples for `seconds`, at least `min_samples`.
std::size_t samples_for(double seconds, double period, std::size_t min_samples = 10) {
  return std::max(min_samples, static_cast<std::size_t>(std::lround(seconds / period)));
}

void append(std::vector<float>& profile, std::size_t n, float watts) {
  profile.insert(profile.end(), n, watts);
}

std::vector<float> kettle_profile(Rng& rng, const ApplianceSpec& a, double period) {
  const std::size_t n = samples_for(a.duration_scale * uniform(rng, 150, 240), period);
  const double p = a.power_scale * uniform(rng, 2600, 2900);
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<float>(p * (1.0 - 0.02 * static_cast<double>(i) / n));
  }
  return out;
}

std::vector<float> microwave_profile(Rng& rng, const ApplianceSpec& a, double period) {
  const std::size_t n = samples_for(a.duration_scale * uniform(rng, 120, 360), period);
  const double high = a.power_scale * uniform(rng, 1150, 1300);
  const double low = a.power_scale * 90.0;
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<float>(i % 5 < 3 ? high : low);
  }
  return out;
}

std::vector<float> washer_profile(Rng& rng, const ApplianceSpec& a, double period) {
  const double s = a.power_scale;
  const double d = a.duration_scale;
  std::vector<float> out;
  append(out, samples_for(d * 240, period), static_cast<float>(s * 60));  // fill
  append(out, samples_for(d * uniform(rng, 600, 840), period),
         static_cast<float>(s * 2000));  // heat
  const std::size_t tumble = samples_for(d * 1500, period);
  for (std::size_t i = 0; i < tumble; ++i) {
    out.push_back(static_cast<float>(s * ((i / 4) % 2 ? 160 : 260)));
  }
  const std::size_t rinse = samples_for(d * 600, period);
  for (std::size_t i = 0; i < rinse; ++i) {
    out.push_back(static_cast<float>(s * ((i / 3) % 2 ? 110 : 180)));
  }
  append(out, samples_for(d * 480, period), static_cast<float>(s * 480));  // spin
  return out;
}

std::vector<float> dishwasher_profile(Rng& rng, const ApplianceSpec& a, double period) {
  const double s = a.power_scale;
  const double d = a.duration_scale;
  std::vector<float> out;
  append(out, samples_for(d * 300, period), static_cast<float>(s * 70));
  append(out, samples_for(d * uniform(rng, 840, 960), period),
         static_cast<float>(s * 1800));
  append(out, samples_for(d * 1200, period), static_cast<float>(s * 130));
  append(out, samples_for(d * 600, period), static_cast<float>(s * 1800));
  append(out, samples_for(d * 900, period), static_cast<float>(s * 45));
  return out;
}

struct Activation {
  std::size_t start;
  std::vector<float> profile;
};

// Daytime uses of an intermittent appliance.
std::vector<Activation> schedule_uses(Rng& rng, const ApplianceSpec& a,
                                      std::size_t samples, double period,
                                      double uses_lo, double uses_hi,
                                      std::vector<float> (*profile)(Rng&, const ApplianceSpec&, double)) {
  std::vector<Activation> acts;
  const auto days = static_cast<std::size_t>(std::ceil(samples * period / kDay));
  const auto gap = static_cast<std::size_t>(std::ceil(kMinSeparation / period));
  for (std::size_t day = 0; day < days; ++day) {
    const auto uses = static_cast<std::size_t>(std::lround(uniform(rng, uses_lo, uses_hi)));
    std::vector<Activation> today;
    for (std::size_t u = 0; u < uses; ++u) {
      const double t = static_cast<double>(day) * kDay + uniform(rng, 7 * 3600.0, 22 * 3600.0);
      today.push_back({static_cast<std::size_t>(t / period), profile(rng, a, period)});
    }
    std::sort(today.begin(), today.end(),
              [](const Activation& x, const Activation& y) { return x.start < y.start; });
    for (auto& act : today) {
      const std::size_t end = act.start + act.profile.size();
      if (end > samples) continue;
      if (!acts.empty()) {
        const Activation& prev = acts.back();
        if (act.start < prev.start + prev.profile.size() + gap) continue;
      }
      acts.push_back(std::move(act));
    }
  }
  return acts;
}

std::vector<Activation> fridge_cycles(Rng& rng, const ApplianceSpec& a,
                                      std::size_t samples, double period) {
  std::vector<Activation> acts;
  const double p = a.power_scale * uniform(rng, 80, 100);
  double t = uniform(rng, 0, 1800);
  while (true) {
    const std::size_t start = static_cast<std::size_t>(t / period);
    const std::size_t n = samples_for(a.duration_scale * uniform(rng, 900, 1320), period);
    if (start + n > samples) break;
    std::vector<float> profile(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double decay = 1.0 + 1.5 * std::exp(-static_cast<double>(i) / 2.0);
      profile[i] = static_cast<float>(p * decay * (1.0 - 0.1 * i / n));
    }
    acts.push_back({start, std::move(profile)});
    const double off = std::max(kMinSeparation, a.duration_scale * uniform(rng, 1500, 2700));
    t = static_cast<double>(start + n) * period + off;
  }
  return acts;
}

}  // namespace

std::string_view archetype_name(Archetype a) {
  switch (a) {
    case Archetype::kCyclingFridge: return "fridge";
    case Archetype::kMultiStateWasher: return "washer";
    case Archetype::kSpikeKettle: return "kettle";
    case Archetype::kPulseMicrowave: return "microwave";
    case Archetype::kMultiPhaseDishwasher: return "dishwasher";
  }
  return "unknown";
}

Archetype parse_archetype(std::string_view name) {
  for (Archetype a : kAllArchetypes) {
    if (archetype_name(a) == name) return a;
  }
  throw InvalidArgumentError("unknown archetype: " + std::string(name));
}

SynthHome synth_home(const HomeSpec& spec) {
  const double period = spec.period;
  const auto samples = static_cast<std::size_t>(std::floor(spec.duration / period));
  if (samples < win::kWindowLength) {
    throw InvalidArgumentError("home duration is shorter than one 599-sample window");
  }
  SynthHome home;
  home.base_load = spec.base_load;
  std::vector<double> total(samples, 0.0);
  for (const ApplianceSpec& a : spec.appliances) {
    if (home.appliances.contains(a.name)) {
      throw InvalidArgumentError("duplicate appliance name: " + a.name);
    }
    Rng rng(derive_seed(spec.seed, a.name));
    std::vector<Activation> acts;
    switch (a.archetype) {
      case Archetype::kCyclingFridge:
        acts = fridge_cycles(rng, a, samples, period);
        break;
      case Archetype::kSpikeKettle:
        acts = schedule_uses(rng, a, samples, period, 4, 7, kettle_profile);
        break;
      case Archetype::kPulseMicrowave:
        acts = schedule_uses(rng, a, samples, period, 3, 5, microwave_profile);
        break;
      case Archetype::kMultiStateWasher:
        acts = schedule_uses(rng, a, samples, period, 1, 1, washer_profile);
        break;
      case Archetype::kMultiPhaseDishwasher:
        acts = schedule_uses(rng, a, samples, period, 1, 1, dishwasher_profile);
        break;
    }
    ts::TimeSeries series;
    series.start = spec.start;
    series.period = period;
    series.values.assign(samples, 0.0f);
    ts::OnIntervalSet schedule;
    for (const auto& act : acts) {
      std::copy(act.profile.begin(), act.profile.end(),
                series.values.begin() + static_cast<std::ptrdiff_t>(act.start));
      schedule.intervals.push_back({act.start, act.start + act.profile.size()});
    }
    for (std::size_t i = 0; i < samples; ++i) total[i] += series.values[i];
    home.appliances[a.name] = std::move(series);
    home.schedule[a.name] = std::move(schedule);
  }

  Rng noise_rng(derive_seed(spec.seed, "mains-noise"));
  std::normal_distribution<double> gauss(0.0, spec.noise_std);
  home.mains.start = home.noise.start = spec.start;
  home.mains.period = home.noise.period = period;
  home.mains.values.resize(samples);
  home.noise.values.resize(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    const double n = spec.noise_std > 0.0f ? gauss(noise_rng) : 0.0;
    const auto noise = static_cast<float>(std::max(n, -static_cast<double>(spec.base_load)));
    home.noise.values[i] = noise;
    home.mains.values[i] = static_cast<float>(total[i] + spec.base_load + noise);
  }
  return home;
}

HomeSpec make_home(std::uint64_t seed, double days, bool jitter,
                   std::span<const Archetype> archetypes) {
  if (archetypes.empty()) archetypes = kAllArchetypes;
  Rng rng(derive_seed(seed, "home-spec"));
  HomeSpec spec;
  spec.seed = seed;
  spec.duration = days * kDay;
  spec.base_load = static_cast<float>(jitter ? uniform(rng, 100, 200) : 150.0);
  spec.noise_std = static_cast<float>(jitter ? uniform(rng, 5, 12) : 8.0);
  for (Archetype a : archetypes) {
    ApplianceSpec app;
    app.name = std::string(archetype_name(a));
    app.archetype = a;
    if (jitter) {
      app.power_scale = static_cast<float>(uniform(rng, 0.85, 1.15));
      app.duration_scale = static_cast<float>(uniform(rng, 0.8, 1.2));
    }
    spec.appliances.push_back(std::move(app));
  }
  return spec;
}

ts::BuildingChannels write_home(const std::filesystem::path& dir,
                                const std::string& id, const SynthHome& home) {
  std::filesystem::create_directories(dir);
  ts::BuildingChannels ch;
  ch.id = id;
  ch.mains = dir / "mains.csv";
  ts::write_series(ch.mains, home.mains);
  for (const auto& [name, series] : home.appliances) {
    ch.appliances[name] = dir / (name + ".csv");
    ts::write_series(ch.appliances[name], series);
  }
  return ch;
}

ts::BuildingSeries to_building(const std::string& id, const SynthHome& home) {
  ts::BuildingSeries b;
  b.id = id;
  b.mains = home.mains;
  b.appliances = home.appliances;
  return b;
}

}  // namespace refquery::synth
