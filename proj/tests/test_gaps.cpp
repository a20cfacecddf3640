#include <gtest/gtest.h>

#include <random>
#include <set>

#include "loracampus/gaps.hpp"
#include "loracampus/simnet.hpp"

namespace lc = loracampus;

namespace {

const lc::DeviceId kDev = lc::DeviceId::parse("a1b2c3d4e5f60718");
const lc::Timestamp kMidnight = lc::parse_timestamp("2020.02.01", "00.00.00.000");

lc::SensorReading reading_at(lc::Timestamp ts, double co2) {
  lc::SensorReading r;
  r.ts = ts;
  r.device = kDev;
  r.set(lc::Field::Co2, co2);
  return r;
}

lc::Millis minutes(std::int64_t m) { return lc::Millis{m * 60'000}; }

lc::LoraPacketMeta packet(lc::Timestamp ts, std::int64_t fcnt, lc::DeviceId dev = kDev) {
  lc::LoraFields f;
  f.ts = ts;
  f.device = dev;
  f.fcnt = fcnt;
  return lc::LoraPacketMeta::make(f);
}

lc::GriddedSeries series_from_mask(const std::string& mask) {
  lc::GriddedSeries s;
  s.device = kDev;
  s.t0 = kMidnight;
  for (char c : mask) s.values.push_back(c == 'P' ? std::optional<double>(1.0) : std::nullopt);
  return s;
}

}  // namespace

TEST(AlignToGrid, OneAbsentSlot) {
  const auto s = lc::align_to_grid({reading_at(kMidnight, 1), reading_at(kMidnight + minutes(15), 2),
                                    reading_at(kMidnight + minutes(45), 4)},
                                   lc::Field::Co2);
  ASSERT_EQ(s.size(), 4u);
  EXPECT_EQ(s.t0, kMidnight);
  EXPECT_TRUE(s.values[0] && s.values[1] && s.values[3]);
  EXPECT_FALSE(s.values[2]);
}

TEST(AlignToGrid, SnapsToNearestSlot) {
  const auto ts = kMidnight + lc::Millis{(7 * 60 + 40) * 1000};
  const auto s = lc::align_to_grid({reading_at(ts, 5)}, lc::Field::Co2);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s.t0, kMidnight + minutes(15));
  EXPECT_TRUE(lc::detect_gaps_cadence(s).empty());
  // 7:20 before the hour snaps back to it
  const auto early = lc::align_to_grid({reading_at(kMidnight + lc::Millis{(7 * 60 + 20) * 1000}, 5)}, lc::Field::Co2);
  EXPECT_EQ(early.t0, kMidnight);
}

TEST(AlignToGrid, CollisionKeepsLaterAndWarns) {
  std::vector<lc::Warning> warnings;
  const auto s = lc::align_to_grid({reading_at(kMidnight, 1), reading_at(kMidnight + minutes(2), 9)}, lc::Field::Co2,
                                   lc::kDefaultCadence, &warnings);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(*s.values[0], 9.0);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_EQ(warnings[0].kind, "SlotCollision");
}

TEST(AlignToGrid, Errors) {
  try {
    lc::align_to_grid({}, lc::Field::Co2);
    FAIL();
  } catch (const lc::Error& e) {
    EXPECT_EQ(e.code(), lc::Errc::EmptyInput);
  }
  auto other = reading_at(kMidnight + minutes(15), 1);
  other.device = lc::DeviceId::parse("ffffffffffffffff");
  try {
    lc::align_to_grid({reading_at(kMidnight, 1), other}, lc::Field::Co2);
    FAIL();
  } catch (const lc::Error& e) {
    EXPECT_EQ(e.code(), lc::Errc::MixedDevices);
  }
}

TEST(CadenceGaps, Examples) {
  const auto g = lc::detect_gaps_cadence(series_from_mask("PMMP"));
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0].missing_count, 2);
  EXPECT_EQ(g[0].slot_start, kMidnight + minutes(15));
  EXPECT_EQ(g[0].slot_end - g[0].slot_start, minutes(30));
  EXPECT_EQ(g[0].source, lc::GapSource::Cadence);

  EXPECT_TRUE(lc::detect_gaps_cadence(series_from_mask("PPPP")).empty());

  const auto lead = lc::detect_gaps_cadence(series_from_mask("MPM"));
  ASSERT_EQ(lead.size(), 2u);
  EXPECT_EQ(lead[0].missing_count, 1);
  EXPECT_EQ(lead[0].slot_start, kMidnight);
  EXPECT_EQ(lead[1].missing_count, 1);
}

TEST(CadenceGaps, ConservationProperty) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    std::string mask;
    const auto len = 1 + rng() % 80;
    for (std::size_t i = 0; i < len; ++i) mask += (rng() % 3 == 0) ? 'M' : 'P';
    const auto s = series_from_mask(mask);
    const auto gaps = lc::detect_gaps_cadence(s);
    std::int64_t total = 0;
    for (std::size_t i = 0; i < gaps.size(); ++i) {
      total += gaps[i].missing_count;
      EXPECT_EQ(gaps[i].slot_end - gaps[i].slot_start, s.cadence * gaps[i].missing_count);
      if (i > 0) {
        EXPECT_LT(gaps[i - 1].slot_end, gaps[i].slot_start);  // separated by a present slot
      }
    }
    EXPECT_EQ(static_cast<std::size_t>(total), s.missing());
  }
}

TEST(FcntGaps, SingleSkippedCounter) {
  const auto g = lc::detect_gaps_fcnt(
      {packet(kMidnight, 5), packet(kMidnight + minutes(15), 6), packet(kMidnight + minutes(45), 8)});
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0].missing_count, 1);
  EXPECT_EQ(g[0].slot_start, kMidnight + minutes(30));
  EXPECT_EQ(g[0].source, lc::GapSource::Fcnt);
}

TEST(FcntGaps, WraparoundIsContiguous) {
  EXPECT_TRUE(lc::detect_gaps_fcnt({packet(kMidnight, 65534), packet(kMidnight + minutes(15), 65535),
                                    packet(kMidnight + minutes(30), 0), packet(kMidnight + minutes(45), 1)})
                  .empty());
}

TEST(FcntGaps, DuplicateCounterWarns) {
  std::vector<lc::Warning> warnings;
  const auto g = lc::detect_gaps_fcnt({packet(kMidnight, 10), packet(kMidnight + minutes(15), 10)},
                                      lc::kDefaultCadence, &warnings);
  EXPECT_TRUE(g.empty());
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_EQ(warnings[0].kind, "DuplicateCounter");
}

TEST(FcntGaps, CounterArithmeticOracle) {
  // Independent formula for the number of lost frames between counters a, b.
  auto expected_missing = [](std::int64_t a, std::int64_t b) { return b > a ? b - a - 1 : b + 65536 - a - 1; };
  EXPECT_EQ(expected_missing(10, 10), 65535);  // duplicates exceed any plausibility cap

  std::mt19937_64 rng(99);
  std::vector<std::int64_t> firsts{0, 1, 65534, 65535};
  for (int i = 0; i < 8; ++i) firsts.push_back(static_cast<std::int64_t>(rng() % 65536));
  for (auto a : firsts) {
    for (std::int64_t b = 0; b < 65536; ++b) {
      const auto m = expected_missing(a, b);
      const auto later = kMidnight + lc::kDefaultCadence * (m + 1);
      std::vector<lc::Warning> warnings;
      const auto g = lc::detect_gaps_fcnt({packet(kMidnight, a), packet(later, b)}, lc::kDefaultCadence, &warnings);
      if (m == 0) {
        ASSERT_TRUE(g.empty());
      } else if (m <= lc::kFcntPlausibilityCap) {
        ASSERT_EQ(g.size(), 1u);
        ASSERT_EQ(g[0].missing_count, m);
        ASSERT_EQ(g[0].slot_start, kMidnight + lc::kDefaultCadence);
      } else {
        ASSERT_TRUE(g.empty());
        ASSERT_EQ(warnings.size(), 1u);
        ASSERT_EQ(warnings[0].kind, a == b ? "DuplicateCounter" : "CounterAnomaly");
      }
    }
  }
}

TEST(FcntGaps, Errors) {
  try {
    lc::detect_gaps_fcnt({packet(kMidnight, 1), packet(kMidnight + minutes(15), 2, lc::DeviceId::parse("ffffffffffffffff"))});
    FAIL();
  } catch (const lc::Error& e) {
    EXPECT_EQ(e.code(), lc::Errc::MixedDevices);
  }
  try {
    lc::detect_gaps_fcnt({packet(kMidnight + minutes(15), 1), packet(kMidnight, 2)});
    FAIL();
  } catch (const lc::Error& e) {
    EXPECT_EQ(e.code(), lc::Errc::NonMonotonicTime);
  }
}

TEST(Detectors, RecoverSimnetTruthAndAgree) {
  lc::SimConfig cfg;
  cfg.n_devices = 6;
  cfg.kind_mix = {1, 1, 1};
  cfg.drop_prob = 0.25;
  cfg.seed = 3;
  cfg.start = lc::parse_timestamp("2020.02.01", "00.00.00.000");
  cfg.end = lc::parse_timestamp("2020.02.04", "00.00.00.000");
  const auto ds = lc::generate(cfg);
  const auto packets = lc::group_packets(ds.packets);
  const auto readings = lc::group_readings(ds.readings);
  for (const auto& d : ds.devices) {
    std::set<lc::Timestamp> fcnt_slots, cadence_slots;
    for (const auto& g : lc::detect_gaps_fcnt(packets.at(d.id), cfg.cadence())) {
      for (auto ts : lc::gap_slots(g)) fcnt_slots.insert(ts);
    }
    const auto series = lc::align_to_grid(readings.at(d.id), lc::Field::Temperature, cfg.cadence());
    for (const auto& g : lc::detect_gaps_cadence(series)) {
      for (auto ts : lc::gap_slots(g)) cadence_slots.insert(ts);
    }
    const auto& truth = ds.truth_mask.at(d.id);
    const std::set<lc::Timestamp> truth_set(truth.begin(), truth.end());
    EXPECT_FALSE(truth_set.empty());
    EXPECT_EQ(fcnt_slots, truth_set);
    EXPECT_EQ(cadence_slots, fcnt_slots);
  }
}
