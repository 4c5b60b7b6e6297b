#include <gtest/gtest.h>

#include <cmath>

#include "refquery/error.hpp"
#include "refquery/synth.hpp"
#include "test_util.hpp"

using namespace refquery;
using namespace refquery::synth;

namespace {

HomeSpec one_day(std::uint64_t seed, bool jitter = false) { return make_home(seed, 1.0, jitter); }

}  // namespace

TEST(Synth, DeterministicPerSeed) {
  const SynthHome a = synth_home(one_day(4));
  const SynthHome b = synth_home(one_day(4));
  const SynthHome c = synth_home(one_day(5));
  EXPECT_EQ(a.mains.values, b.mains.values);
  EXPECT_EQ(a.schedule, b.schedule);
  EXPECT_NE(a.mains.values, c.mains.values);
}

TEST(Synth, ShapeAndTiming) {
  const SynthHome h = synth_home(one_day(1));
  EXPECT_EQ(h.mains.size(), 86400u / 8);
  EXPECT_EQ(h.mains.period, 8.0);
  EXPECT_EQ(h.appliances.size(), 5u);
  for (const auto& [name, s] : h.appliances) {
    EXPECT_EQ(s.size(), h.mains.size()) << name;
    EXPECT_EQ(s.start, h.mains.start) << name;
  }
}

TEST(Synth, NoAppliancesNoNoiseIsBaseLoad) {
  HomeSpec spec;
  spec.duration = 86400.0;
  spec.noise_std = 0.0f;
  spec.base_load = 123.0f;
  const SynthHome h = synth_home(spec);
  for (float v : h.mains.values) ASSERT_EQ(v, 123.0f);
}

TEST(Synth, MainsIsSumOfParts) {
  const SynthHome h = synth_home(make_home(7, 2.0, true));
  double mains_energy = 0.0, parts_energy = 0.0;
  for (std::size_t i = 0; i < h.mains.size(); ++i) {
    double parts = h.base_load + h.noise.values[i];
    for (const auto& [name, s] : h.appliances) parts += s.values[i];
    ASSERT_NEAR(h.mains.values[i], parts, 1e-3 * std::max(1.0, parts));
    ASSERT_GE(h.mains.values[i], 0.0f);
    mains_energy += h.mains.values[i];
    parts_energy += parts;
  }
  EXPECT_NEAR(mains_energy, parts_energy, 1e-3 * parts_energy);
}

TEST(Synth, CleanedMaskReproducesSchedule) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const SynthHome h = synth_home(make_home(seed, 2.0, true));
    for (const auto& [name, s] : h.appliances) {
      const auto iv = ts::extract_on_intervals(ts::clean_mask(ts::activation_mask(s)));
      EXPECT_EQ(iv, h.schedule.at(name)) << name << " seed " << seed;
      EXPECT_FALSE(iv.empty()) << name;
    }
  }
}

TEST(Synth, KettleIsShortAndHighPower) {
  const SynthHome h = synth_home(one_day(11));
  const auto& k = h.appliances.at("kettle");
  const auto& sched = h.schedule.at("kettle");
  ASSERT_FALSE(sched.empty());
  std::vector<std::uint8_t> inside(k.size(), 0);
  for (const auto& iv : sched.intervals) {
    const double seconds = static_cast<double>(iv.end - iv.begin) * 8.0;
    EXPECT_GE(seconds, 140.0);
    EXPECT_LE(seconds, 250.0);
    for (std::size_t i = iv.begin; i < iv.end; ++i) {
      inside[i] = 1;
      EXPECT_GT(k.values[i], 2000.0f);
    }
  }
  for (std::size_t i = 0; i < k.size(); ++i) {
    if (!inside[i]) ASSERT_EQ(k.values[i], 0.0f);
  }
}

TEST(Synth, JitterRanges) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const HomeSpec s = make_home(seed, 1.0, true);
    EXPECT_GE(s.base_load, 100.0f);
    EXPECT_LE(s.base_load, 200.0f);
    for (const auto& a : s.appliances) {
      EXPECT_GE(a.power_scale, 0.85f);
      EXPECT_LE(a.power_scale, 1.15f);
      EXPECT_GE(a.duration_scale, 0.8f);
      EXPECT_LE(a.duration_scale, 1.2f);
    }
  }
  const HomeSpec plain = make_home(3, 1.0, false);
  for (const auto& a : plain.appliances) EXPECT_EQ(a.power_scale, 1.0f);
}

TEST(Synth, ArchetypeSubsetAndNames) {
  const Archetype only[] = {Archetype::kSpikeKettle, Archetype::kCyclingFridge};
  const HomeSpec s = make_home(1, 1.0, false, only);
  ASSERT_EQ(s.appliances.size(), 2u);
  EXPECT_EQ(s.appliances[0].name, "kettle");
  EXPECT_EQ(s.appliances[1].name, "fridge");
  for (Archetype a : kAllArchetypes) EXPECT_EQ(parse_archetype(archetype_name(a)), a);
  EXPECT_THROW(parse_archetype("toaster"), InvalidArgumentError);
}

TEST(Synth, Errors) {
  HomeSpec short_home = one_day(1);
  short_home.duration = 598 * 8.0;
  EXPECT_THROW(synth_home(short_home), InvalidArgumentError);
  short_home.duration = 599 * 8.0;
  EXPECT_NO_THROW(synth_home(short_home));

  HomeSpec dup = one_day(1);
  dup.appliances.push_back(dup.appliances.front());
  EXPECT_THROW(synth_home(dup), InvalidArgumentError);
}

TEST(Synth, WriteHomeRoundTrip) {
  testutil::TempDir dir("synth");
  const SynthHome h = synth_home(one_day(2));
  const ts::BuildingChannels ch = write_home(dir / "h1", "h1", h);
  EXPECT_EQ(ch.appliances.size(), 5u);
  const ts::TimeSeries mains = ts::load_series(ch.mains, {.period = 8});
  EXPECT_EQ(mains.start, h.mains.start);
  ASSERT_EQ(mains.size(), h.mains.size());
  for (std::size_t i = 0; i < mains.size(); ++i) {
    ASSERT_NEAR(mains.values[i], h.mains.values[i], 1e-3 * std::max(1.0f, h.mains.values[i]));
  }
  const ts::BuildingSeries b = to_building("h1", h);
  EXPECT_EQ(b.appliances.at("fridge").values, h.appliances.at("fridge").values);
}
