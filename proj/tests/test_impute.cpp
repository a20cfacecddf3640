#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "loracampus/impute.hpp"
#include "loracampus/simnet.hpp"

namespace lc = loracampus;

namespace {

lc::GriddedSeries make_series(const std::vector<std::optional<double>>& values, lc::Field field = lc::Field::Co2) {
  lc::GriddedSeries s;
  s.device = lc::DeviceId::parse("0000000000000001");
  s.field = field;
  s.t0 = lc::parse_timestamp("2020.02.01", "00.00.00.000");
  s.values = values;
  return s;
}

// Exact solution of the 3x3 Vandermonde system by Cramer's rule.
std::array<double, 3> vandermonde3(const std::array<double, 3>& x, const std::array<double, 3>& y) {
  auto det3 = [](const std::array<std::array<double, 3>, 3>& m) {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  };
  std::array<std::array<double, 3>, 3> v{};
  for (int i = 0; i < 3; ++i) v[i] = {1.0, x[i], x[i] * x[i]};
  const double d = det3(v);
  std::array<double, 3> a{};
  for (int c = 0; c < 3; ++c) {
    auto m = v;
    for (int i = 0; i < 3; ++i) m[i][c] = y[i];
    a[c] = det3(m) / d;
  }
  return a;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

template <typename Fn>
lc::Errc error_of(Fn fn) {
  try {
    fn();
  } catch (const lc::Error& e) {
    return e.code();
  }
  return lc::Errc::FormatError;  // sentinel: nothing thrown
}

// One simnet room with companions, all on a common grid.
struct Room {
  lc::GriddedSeries co2;
  std::vector<lc::GriddedSeries> companions;
};

Room simnet_room(std::uint64_t seed, double sigma, int days = 7) {
  lc::SimConfig cfg;
  cfg.n_devices = 1;
  cfg.kind_mix = {1, 0, 0};
  cfg.occupancy_rooms = 1;
  cfg.co2_noise_sigma = sigma;
  cfg.seed = seed;
  cfg.start = lc::parse_timestamp("2020.02.01", "00.00.00.000");
  cfg.end = cfg.start + lc::Millis{std::int64_t{days} * 86'400'000};
  const auto ds = lc::generate(cfg);
  Room room;
  room.co2 = lc::align_to_grid(ds.readings, lc::Field::Co2);
  for (auto f : {lc::Field::Temperature, lc::Field::Humidity, lc::Field::Light, lc::Field::Motion}) {
    room.companions.push_back(lc::align_to_grid(ds.readings, f));
  }
  return room;
}

double masked_rmse(const lc::GriddedSeries& truth, const lc::GriddedSeries& filled,
                   const std::vector<std::size_t>& masked) {
  double sse = 0.0;
  for (auto i : masked) sse += std::pow(*filled.values[i] - *truth.values[i], 2);
  return std::sqrt(sse / static_cast<double>(masked.size()));
}

}  // namespace

TEST(PolyFit, ExactThroughThreePoints) {
  const auto a = lc::poly_fit({0, 1, 2}, {0, 1, 4}, 2);
  ASSERT_EQ(a.size(), 3u);
  EXPECT_NEAR(a[0], 0.0, 1e-12);
  EXPECT_NEAR(a[1], 0.0, 1e-12);
  EXPECT_NEAR(a[2], 1.0, 1e-12);
}

TEST(PolyFit, ConstantData) {
  const auto a = lc::poly_fit({0, 1, 2}, {3, 3, 3}, 1);
  EXPECT_NEAR(a[0], 3.0, 1e-12);
  EXPECT_NEAR(a[1], 0.0, 1e-12);
}

TEST(PolyFit, MatchesClosedFormRegression) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::vector<double> xs, ys;
  for (int i = 0; i < 10; ++i) {
    xs.push_back(i * 0.7 + 0.1);
    ys.push_back(2.0 * xs.back() + 1.0 + noise(rng));
  }
  double mx = 0, my = 0;
  for (int i = 0; i < 10; ++i) {
    mx += xs[i] / 10;
    my += ys[i] / 10;
  }
  double sxy = 0, sxx = 0;
  for (int i = 0; i < 10; ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  const double slope = sxy / sxx;
  const double intercept = my - slope * mx;
  const auto a = lc::poly_fit(xs, ys, 1);
  EXPECT_NEAR(a[0], intercept, 1e-9);
  EXPECT_NEAR(a[1], slope, 1e-9);
}

TEST(PolyFit, RepeatedXIsDegenerate) {
  EXPECT_EQ(error_of([] { lc::poly_fit({1, 1, 1, 2}, {0, 1, 2, 3}, 2); }), lc::Errc::DegenerateDesign);
}

TEST(Impute, LinearMidpoint) {
  const auto out = lc::impute(make_series({0.0, std::nullopt, 4.0}), lc::ImputeStrategy::linear());
  EXPECT_DOUBLE_EQ(*out.values[1], 2.0);
}

TEST(Impute, PolyMatchesVandermondeOracle) {
  const auto a = vandermonde3({0, 1, 2}, {0, 1, 4});
  const double oracle = a[0] + a[1] * 3 + a[2] * 9;
  EXPECT_NEAR(oracle, 9.0, 1e-12);
  // interior query: the fitted curve is used as is
  const auto out = lc::impute(make_series({0.0, 1.0, 4.0, std::nullopt, 16.0}), lc::ImputeStrategy::poly(2));
  EXPECT_NEAR(*out.values[3], oracle, 1e-9);
  // trailing query: the same curve, clamped to the observed range
  const auto tail = lc::impute(make_series({0.0, 1.0, 4.0, std::nullopt}), lc::ImputeStrategy::poly(2));
  EXPECT_DOUBLE_EQ(*tail.values[3], 4.0);
}

TEST(Impute, LinearEdgesAreClamped) {
  const auto out =
      lc::impute(make_series({std::nullopt, 1.0, 2.0, 3.0, std::nullopt, std::nullopt}), lc::ImputeStrategy::linear());
  EXPECT_DOUBLE_EQ(*out.values[0], 1.0);  // line gives 0, clamped to min
  EXPECT_DOUBLE_EQ(*out.values[4], 3.0);
  EXPECT_DOUBLE_EQ(*out.values[5], 3.0);
}

TEST(Impute, ZeroAndDrop) {
  const auto s = make_series({5.0, std::nullopt, 7.0, std::nullopt});
  const auto z = lc::impute(s, lc::ImputeStrategy::zero());
  EXPECT_EQ(*z.values[1], 0.0);
  EXPECT_EQ(*z.values[3], 0.0);
  const auto d = lc::impute(s, lc::ImputeStrategy::drop());
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.slot_map, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(d.slot_time(1), s.slot_time(2));
}

TEST(Impute, KnnMeanOfNearestTargets) {
  // target rows 10, 14 sit next to the query in feature space, 100 far away
  auto target = make_series({10.0, 14.0, 100.0, std::nullopt});
  auto feature = make_series({1.0, 1.2, 9.0, 1.1}, lc::Field::Temperature);
  lc::KnnConfig cfg;
  cfg.k = 2;
  cfg.time_features = false;
  const std::vector<lc::GriddedSeries> companions{feature};
  const auto out = lc::impute(target, lc::ImputeStrategy::knn_with(cfg), &companions);
  EXPECT_DOUBLE_EQ(*out.values[3], 12.0);
}

TEST(Impute, KnnErrors) {
  auto target = make_series({10.0, 14.0, std::nullopt});
  EXPECT_EQ(error_of([&] { lc::impute(target, lc::ImputeStrategy::knn(1)); }), lc::Errc::MissingCompanions);
  const std::vector<lc::GriddedSeries> companions{make_series({1.0, 2.0, 3.0}, lc::Field::Temperature)};
  EXPECT_EQ(error_of([&] { lc::impute(target, lc::ImputeStrategy::knn(3), &companions); }),
            lc::Errc::InsufficientSupport);
  EXPECT_EQ(error_of([&] { lc::impute(make_series({1.0, std::nullopt}), lc::ImputeStrategy::linear()); }),
            lc::Errc::InsufficientSupport);
  EXPECT_EQ(error_of([&] { lc::impute(make_series({1.0, 2.0, std::nullopt}), lc::ImputeStrategy::poly(2)); }),
            lc::Errc::InsufficientSupport);
}

TEST(Impute, CompleteSeriesUnchanged) {
  const auto s = make_series({1.0, 2.5, -3.0});
  const std::vector<lc::GriddedSeries> companions{make_series({1.0, 2.0, 3.0}, lc::Field::Temperature)};
  for (const auto& strat : {lc::ImputeStrategy::drop(), lc::ImputeStrategy::zero(), lc::ImputeStrategy::linear(),
                            lc::ImputeStrategy::poly(2), lc::ImputeStrategy::knn(5)}) {
    const auto out = lc::impute(s, strat, &companions);
    EXPECT_EQ(out.values, s.values);
    EXPECT_EQ(out.slot_map, s.slot_map);
  }
}

TEST(ImputeProperty, PolynomialsReproducedAtInteriorSlots) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> coef(-3.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    for (int order : {1, 2, 3}) {
      std::array<double, 4> a{};
      for (int j = 0; j <= order; ++j) a[static_cast<std::size_t>(j)] = coef(rng);
      const std::size_t len = 20 + rng() % 200;
      std::vector<std::optional<double>> values(len), truth(len);
      for (std::size_t i = 0; i < len; ++i) {
        const double x = static_cast<double>(i);
        truth[i] = a[0] + a[1] * x + a[2] * x * x + a[3] * x * x * x;
        values[i] = (i == 0 || i + 1 == len || rng() % 4 != 0) ? truth[i] : std::nullopt;
      }
      const auto s = make_series(values);
      const auto out = lc::impute(s, order == 1 ? lc::ImputeStrategy::linear() : lc::ImputeStrategy::poly(order));
      for (std::size_t i = 0; i < len; ++i) {
        if (values[i]) continue;
        const double rel = std::abs(*out.values[i] - *truth[i]) / std::max(1.0, std::abs(*truth[i]));
        ASSERT_LT(rel, 1e-9) << "order " << order << " slot " << i;
      }
    }
  }
}

TEST(ImputeProperty, PresentCellsAreBitIdentical) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> val(400.0, 50.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t len = 30 + rng() % 50;
    std::vector<std::optional<double>> v(len), c(len);
    for (std::size_t i = 0; i < len; ++i) {
      v[i] = (rng() % 3 == 0) ? std::nullopt : std::optional<double>(val(rng));
      c[i] = val(rng);
    }
    const auto s = make_series(v);
    const std::vector<lc::GriddedSeries> companions{make_series(c, lc::Field::Temperature)};
    for (const auto& strat : {lc::ImputeStrategy::zero(), lc::ImputeStrategy::linear(), lc::ImputeStrategy::poly(2),
                              lc::ImputeStrategy::poly(3), lc::ImputeStrategy::knn(3)}) {
      const auto out = lc::impute(s, strat, &companions);
      ASSERT_TRUE(out.complete());
      for (std::size_t i = 0; i < len; ++i) {
        if (v[i]) {
          ASSERT_TRUE(same_bits(*out.values[i], *v[i]));
        }
      }
    }
    const auto dropped = lc::impute(s, lc::ImputeStrategy::drop());
    for (std::size_t i = 0; i < dropped.size(); ++i) ASSERT_TRUE(same_bits(*dropped.values[i], *v[dropped.slot_of(i)]));
  }
}

TEST(ImputeProperty, KnnWithinNeighbourRange) {
  const auto room = simnet_room(4, 10.0, 3);
  auto holed = room.co2;
  std::mt19937_64 rng(2);
  for (auto& v : holed.values) {
    if (rng() % 5 == 0) v.reset();
  }
  double lo = 1e300, hi = -1e300;
  for (const auto& v : holed.values) {
    if (v) {
      lo = std::min(lo, *v);
      hi = std::max(hi, *v);
    }
  }
  for (std::size_t k : {1, 4, 13}) {
    const auto out = lc::impute(holed, lc::ImputeStrategy::knn(k), &room.companions);
    for (const auto& v : out.values) {
      EXPECT_GE(*v, lo);
      EXPECT_LE(*v, hi);
    }
  }
}

TEST(SelectK, ExactFeatureGivesKOne) {
  // target = 3 * feature, every feature value appears twice
  std::vector<std::optional<double>> target, feature;
  for (int i = 0; i < 60; ++i) {
    const double f = static_cast<double>(i / 2);
    feature.push_back(f);
    target.push_back(3.0 * f);
  }
  const std::vector<lc::GriddedSeries> companions{make_series(feature, lc::Field::Temperature)};
  lc::KnnConfig cfg;
  cfg.time_features = false;
  // mask a fraction that leaves each masked cell's twin visible
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto sel = lc::select_k(make_series(target), companions, 0.05, {1, 3, 5}, seed, cfg);
    bool twins_visible = true;
    for (auto i : sel.masked) {
      const auto twin = i ^ 1u;
      if (std::find(sel.masked.begin(), sel.masked.end(), twin) != sel.masked.end()) twins_visible = false;
    }
    if (!twins_visible) continue;
    EXPECT_EQ(sel.k_star, 1u);
    EXPECT_EQ(sel.mse_per_k[0].second, 0.0);
    EXPECT_EQ(sel.masked.size(), 3u);
    return;
  }
  FAIL() << "no seed kept every twin visible";
}

TEST(SelectK, ZeroMaskedCellsIsAnError) {
  const auto s = make_series({1.0, 2.0, 3.0, 4.0});
  const std::vector<lc::GriddedSeries> companions{make_series({1.0, 2.0, 3.0, 4.0}, lc::Field::Temperature)};
  EXPECT_EQ(error_of([&] { lc::select_k(s, companions, 1e-12, {1}, 0); }), lc::Errc::InsufficientSupport);
  EXPECT_EQ(error_of([&] { lc::select_k(s, companions, 0.0, {1}, 0); }), lc::Errc::InsufficientSupport);
}

TEST(SelectK, SimnetCurveAndIndependentRerun) {
  const auto room = simnet_room(42, 10.0);
  const std::vector<std::size_t> candidates{1, 3, 5, 9, 13, 21};
  const auto sel = lc::select_k(room.co2, room.companions, 0.2, candidates, 7);
  ASSERT_EQ(sel.mse_per_k.size(), candidates.size());
  double at_star = 0, at_1 = 0, at_21 = 0;
  for (auto [k, mse] : sel.mse_per_k) {
    if (k == sel.k_star) at_star = mse;
    if (k == 1) at_1 = mse;
    if (k == 21) at_21 = mse;
  }
  EXPECT_LE(at_star, at_1);
  EXPECT_LE(at_star, at_21);
  // rerun the masking + imputation by hand from the reported mask
  auto holed = room.co2;
  for (auto i : sel.masked) holed.values[i].reset();
  const auto filled = lc::impute(holed, lc::ImputeStrategy::knn(sel.k_star), &room.companions);
  EXPECT_NEAR(std::pow(masked_rmse(room.co2, filled, sel.masked), 2), at_star, 1e-9 * std::max(1.0, at_star));
  // deterministic in the seed
  const auto again = lc::select_k(room.co2, room.companions, 0.2, candidates, 7);
  EXPECT_EQ(again.mse_per_k, sel.mse_per_k);
}

TEST(ImputeProperty, SimnetRmseOrdering) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto room = simnet_room(seed, 10.0);
    const auto sel = lc::select_k(room.co2, room.companions, 0.2, {1, 3, 5, 9, 13, 21}, seed + 100);
    auto holed = room.co2;
    lc::Rng rng(seed);
    std::vector<std::size_t> masked;
    for (std::size_t i = 0; i < holed.size(); ++i) {
      if (rng.bernoulli(0.2)) {
        holed.values[i].reset();
        masked.push_back(i);
      }
    }
    const double knn = masked_rmse(room.co2, lc::impute(holed, lc::ImputeStrategy::knn(sel.k_star), &room.companions), masked);
    const double lin = masked_rmse(room.co2, lc::impute(holed, lc::ImputeStrategy::linear()), masked);
    const double zero = masked_rmse(room.co2, lc::impute(holed, lc::ImputeStrategy::zero()), masked);
    std::cout << "seed " << seed << " k*=" << sel.k_star << " knn " << knn << " linear " << lin << " zero " << zero
              << "\n";
    EXPECT_LE(knn, lin);
    EXPECT_LE(lin, zero);
  }
}
