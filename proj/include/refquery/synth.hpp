#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "refquery/timeseries.hpp"

namespace refquery::synth {

enum class Archetype {
  kCyclingFridge,
  kMultiStateWasher,
  kSpikeKettle,
  kPulseMicrowave,
  kMultiPhaseDishwasher,
};

inline constexpr Archetype kAllArchetypes[] = {
    Archetype::kCyclingFridge, Archetype::kMultiStateWasher,
    Archetype::kSpikeKettle, Archetype::kPulseMicrowave,
    Archetype::kMultiPhaseDishwasher};

/// "fridge", "washer", "kettle", "microwave", "dishwasher"
std::string_view archetype_name(Archetype a);
Archetype parse_archetype(std::string_view name);

struct ApplianceSpec {
  std::string name;
  Archetype archetype = Archetype::kSpikeKettle;
  /// Per-home jitter multipliers.
  float power_scale = 1.0f;
  float duration_scale = 1.0f;
};

struct HomeSpec {
  std::vector<ApplianceSpec> appliances;
  float base_load = 150.0f;  // watts
  float noise_std = 8.0f;    // watts
  double duration = 3 * 86400.0;
  double start = 1401580800.0;  // seconds, multiple of the period
  double period = ts::kDefaultPeriod;
  std::uint64_t seed = 0;
};

struct SynthHome {
  ts::TimeSeries mains;
  /// The noise actually added (after clipping at -base_load).
  ts::TimeSeries noise;
  float base_load = 0.0f;
  std::map<std::string, ts::TimeSeries> appliances;
  /// Activations as scheduled by the generator, in sample indices.
  std::map<std::string, ts::OnIntervalSet> schedule;
};

/// Deterministic per seed. Every activation draws more than 20 W for at
/// least 80 s and consecutive activations of one appliance are separated by
/// more than 300 s, so the cleaned activation mask reproduces the schedule.
SynthHome synth_home(const HomeSpec& spec);

/// A home with one appliance per archetype in `archetypes` (all five when
/// empty). With `jitter`, power scales are drawn from [0.85, 1.15] and
/// duration scales from [0.8, 1.2] per appliance; base load and noise vary
/// per home as well.
HomeSpec make_home(std::uint64_t seed, double days, bool jitter,
                   std::span<const Archetype> archetypes = {});

/// Writes mains.csv and one <appliance>.csv under `dir`, returning the
/// channel entry for the building.
ts::BuildingChannels write_home(const std::filesystem::path& dir,
                                const std::string& id, const SynthHome& home);

/// Converts a generated home into an aligned in-memory building.
ts::BuildingSeries to_building(const std::string& id, const SynthHome& home);

}  // namespace refquery::synth
