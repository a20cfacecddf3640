#pragma once

// The two experiments end to end.
//
// Forecasting: hide part of a clean series' training region, repair it with
// each imputation strategy, train an LSTM on the repaired data and score its
// forecasts of the untouched test region. Counting: build (device readings,
// head count) rows, balance classes by duplication, split without leaking
// duplicates, train the MLP and report on the test split.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "loracampus/core_model.hpp"
#include "loracampus/error.hpp"
#include "loracampus/gaps.hpp"
#include "loracampus/impute.hpp"
#include "loracampus/metrics.hpp"
#include "loracampus/neural.hpp"
#include "loracampus/rng.hpp"
#include "loracampus/text.hpp"

namespace loracampus {

// ---------------------------------------------------------------- scaling

enum class Normalization { ZScore, MinMax };

inline std::string_view to_string(Normalization n) { return n == Normalization::ZScore ? "zscore" : "minmax"; }

/// x -> (x - offset) / scale. A constant input gets scale 1.
struct Scaler {
  double offset = 0.0;
  double scale = 1.0;

  static Scaler fit(const std::vector<double>& values, Normalization kind) {
    if (values.empty()) throw Error(Errc::EmptyInput, "cannot fit a scaler to nothing");
    Scaler s;
    if (kind == Normalization::ZScore) {
      double m = 0.0;
      for (double v : values) m += v;
      m /= static_cast<double>(values.size());
      double var = 0.0;
      for (double v : values) var += (v - m) * (v - m);
      var /= static_cast<double>(values.size());
      s.offset = m;
      s.scale = var > 0.0 ? std::sqrt(var) : 1.0;
    } else {
      const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
      s.offset = *lo;
      s.scale = *hi > *lo ? *hi - *lo : 1.0;
    }
    return s;
  }

  double apply(double x) const { return (x - offset) / scale; }
  double invert(double y) const { return y * scale + offset; }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double train_acc = std::numeric_limits<double>::quiet_NaN();
  double val_acc = std::numeric_limits<double>::quiet_NaN();
};

// ---------------------------------------------------------------- forecasting

struct ForecastConfig {
  std::size_t window = 96;  // 24 h of 15-minute slots
  std::size_t horizon = 1;
  std::vector<std::size_t> dims{128, 64, 64, 32};
  std::size_t epochs = 100;
  std::size_t batch = 32;
  nn::OptKind optimizer = nn::OptKind::RmsProp;
  nn::OptConfig opt;
  Normalization normalization = Normalization::ZScore;
  std::size_t patience = 20;
  double val_fraction = 0.1;  // trailing share of training windows
  std::uint64_t seed = 42;

  void validate() const {
    auto fail = [](const std::string& why) { throw Error(Errc::InvalidConfig, why); };
    if (window == 0) fail("forecast window must be >= 1");
    if (horizon == 0) fail("forecast horizon must be >= 1");
    if (dims.empty() || std::find(dims.begin(), dims.end(), 0u) != dims.end()) fail("lstm dims must be positive");
    if (epochs == 0) fail("epochs must be >= 1");
    if (batch == 0) fail("batch size must be >= 1");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) fail("val_fraction must lie in [0,1)");
    if (!(opt.lr > 0.0)) fail("learning rate must be positive");
  }
};

struct Window {
  std::vector<double> input;
  std::vector<double> target;
};

/// Stride-1 windows: input values[i, i+window), target the next `horizon`
/// values.
inline std::vector<Window> make_windows(const std::vector<double>& values, std::size_t window, std::size_t horizon) {
  if (window == 0 || horizon == 0) throw Error(Errc::InvalidConfig, "window and horizon must be positive");
  if (values.size() < window + horizon) {
    throw Error(Errc::SeriesTooShort, "series of " + std::to_string(values.size()) + " cells cannot hold window " +
                                          std::to_string(window) + " + horizon " + std::to_string(horizon));
  }
  std::vector<Window> out;
  for (std::size_t i = 0; i + window + horizon <= values.size(); ++i) {
    out.push_back({{values.begin() + static_cast<std::ptrdiff_t>(i),
                    values.begin() + static_cast<std::ptrdiff_t>(i + window)},
                   {values.begin() + static_cast<std::ptrdiff_t>(i + window),
                    values.begin() + static_cast<std::ptrdiff_t>(i + window + horizon)}});
  }
  return out;
}

inline std::vector<Window> make_windows(const GriddedSeries& series, std::size_t window, std::size_t horizon) {
  return make_windows(series.dense(), window, horizon);
}

struct Forecaster {
  nn::LstmModel model;
  Scaler scaler;
  std::size_t window = 0;
  std::size_t horizon = 0;
};

namespace detail {

// Windows [begin, end) as a normalised sequence batch.
inline nn::SequenceBatch window_batch(const std::vector<Window>& windows, const std::vector<std::size_t>& order,
                                      std::size_t begin, std::size_t end, const Scaler& scaler) {
  nn::SequenceBatch b;
  const auto bsz = end - begin;
  const auto w = windows[order[begin]].input.size();
  const auto h = windows[order[begin]].target.size();
  b.steps.assign(w, nn::Matrix(bsz, 1));
  b.targets = nn::Matrix(bsz, h);
  for (std::size_t r = 0; r < bsz; ++r) {
    const auto& win = windows[order[begin + r]];
    for (std::size_t t = 0; t < w; ++t) b.steps[t](r, 0) = scaler.apply(win.input[t]);
    for (std::size_t j = 0; j < h; ++j) b.targets(r, j) = scaler.apply(win.target[j]);
  }
  return b;
}

inline std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace detail

/// Trains an LSTM on a complete series (values in physical units). The
/// trailing `val_fraction` of windows drives early stopping; the best
/// validation weights are kept. `init_seed` fixes the initial weights.
inline std::pair<Forecaster, std::vector<EpochRecord>> train_forecaster(const std::vector<double>& values,
                                                                        const ForecastConfig& fc,
                                                                        std::uint64_t init_seed) {
  fc.validate();
  Forecaster f;
  f.window = fc.window;
  f.horizon = fc.horizon;
  f.scaler = Scaler::fit(values, fc.normalization);
  f.model = nn::make_lstm(1, fc.dims, fc.horizon, init_seed);
  const auto windows = make_windows(values, fc.window, fc.horizon);
  auto n_val = static_cast<std::size_t>(std::floor(fc.val_fraction * static_cast<double>(windows.size())));
  if (fc.val_fraction > 0.0 && n_val == 0 && windows.size() >= 2) n_val = 1;
  const auto n_train = windows.size() - n_val;
  const auto val_order = detail::iota(windows.size());

  std::optional<nn::SequenceBatch> val;
  if (n_val > 0) val = detail::window_batch(windows, val_order, n_train, windows.size(), f.scaler);

  nn::Optimizer opt(fc.optimizer, fc.opt);
  std::vector<EpochRecord> history;
  double best = std::numeric_limits<double>::infinity();
  nn::LstmModel best_model = f.model;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= fc.epochs; ++epoch) {
    auto order = detail::iota(n_train);
    Rng rng(derive_seed(fc.seed, 0x10000 + epoch));
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < n_train; b += fc.batch) {
      const auto e = std::min(n_train, b + fc.batch);
      auto r = nn::loss_and_gradients(f.model, detail::window_batch(windows, order, b, e, f.scaler));
      loss_sum += r.loss * static_cast<double>(e - b);
      opt.step(f.model, r.grad);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n_train);
    if (val) {
      const auto pred = nn::lstm_predict(f.model, val->steps);
      rec.val_loss = mse(val->targets.data(), pred.data());
    }
    history.push_back(rec);
    if (!val) continue;
    if (rec.val_loss < best) {
      best = rec.val_loss;
      best_model = f.model;
      since_best = 0;
    } else if (++since_best >= fc.patience) {
      break;
    }
  }
  if (val) f.model = std::move(best_model);
  return {std::move(f), std::move(history)};
}

/// Autoregressive roll-out from the last `window` readings (physical units):
/// each next-slot prediction is appended to the input for the following step.
inline std::vector<double> forecast(const Forecaster& f, const std::vector<double>& recent, std::size_t steps) {
  if (recent.size() != f.window) {
    throw Error(Errc::DimMismatch, "forecast needs " + std::to_string(f.window) + " recent values, got " +
                                       std::to_string(recent.size()));
  }
  if (steps == 0) throw Error(Errc::InvalidConfig, "forecast steps must be >= 1");
  std::vector<std::vector<double>> seq;
  for (double v : recent) seq.push_back({f.scaler.apply(v)});
  std::vector<double> out;
  for (std::size_t s = 0; s < steps; ++s) {
    const auto y = nn::lstm_forward(seq, f.model);
    out.push_back(f.scaler.invert(y[0]));
    seq.erase(seq.begin());
    seq.push_back({y[0]});
  }
  return out;
}

/// Physical-unit predictions for a set of windows (first horizon step per
/// window when `first_only`, otherwise every step, window-major).
inline std::vector<double> predict_windows(const Forecaster& f, const std::vector<Window>& windows,
                                           bool first_only = false) {
  if (windows.empty()) return {};
  const auto batch = detail::window_batch(windows, detail::iota(windows.size()), 0, windows.size(), f.scaler);
  const auto pred = nn::lstm_predict(f.model, batch.steps);
  std::vector<double> out;
  for (std::size_t r = 0; r < pred.rows(); ++r) {
    for (std::size_t j = 0; j < (first_only ? 1 : pred.cols()); ++j) out.push_back(f.scaler.invert(pred(r, j)));
  }
  return out;
}

// ---------------------------------------------------------------- imputation evaluation

/// An imputation strategy as named on the command line; `knn:auto` picks k
/// with select_k before imputing.
struct StrategySpec {
  std::string name;
  ImputeStrategy strategy;
  bool auto_k = false;
};

inline StrategySpec parse_strategy(std::string_view text) {
  const auto s = text::to_lower(text::trim(text));
  auto bad = [&] { return Error(Errc::ConfigInvalid, "unknown imputation strategy '" + std::string(text) + "'"); };
  if (s == "drop") return {s, ImputeStrategy::drop()};
  if (s == "zero") return {s, ImputeStrategy::zero()};
  if (s == "linear") return {s, ImputeStrategy::linear()};
  if (s.rfind("poly:", 0) == 0) {
    const auto order = text::parse_int(std::string_view(s).substr(5));
    if (!order || *order < 2 || *order > 3) {
      throw Error(Errc::ConfigInvalid, "poly order must be 2 or 3, got '" + s.substr(5) + "'");
    }
    return {s, ImputeStrategy::poly(static_cast<int>(*order))};
  }
  if (s == "knn:auto") return {s, ImputeStrategy::knn(1), true};
  if (s.rfind("knn:", 0) == 0) {
    const auto k = text::parse_int(std::string_view(s).substr(4));
    if (!k || *k < 1) throw Error(Errc::ConfigInvalid, "knn k must be a positive integer or 'auto'");
    return {s, ImputeStrategy::knn(static_cast<std::size_t>(*k))};
  }
  throw bad();
}

struct KSelectConfig {
  std::vector<std::size_t> candidates{1, 3, 5, 9, 13, 21};
  double mask_fraction = 0.2;
};

/// Cells [begin, end) of a series as their own grid.
inline GriddedSeries slice(const GriddedSeries& s, std::size_t begin, std::size_t end) {
  if (!s.slot_map.empty()) throw Error(Errc::InvalidConfig, "cannot slice an excised series");
  GriddedSeries out = s;
  out.t0 = s.slot_time(begin);
  out.values.assign(s.values.begin() + static_cast<std::ptrdiff_t>(begin),
                    s.values.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

/// Imputes `holed` with one strategy; knn:auto first runs select_k over the
/// present cells. Returns the repaired series and the k used (0 if none).
inline std::pair<GriddedSeries, std::size_t> impute_with(const GriddedSeries& holed, const StrategySpec& spec,
                                                         const std::vector<GriddedSeries>* companions,
                                                         const KnnConfig& knn_base, const KSelectConfig& ksel,
                                                         std::uint64_t seed) {
  auto strategy = spec.strategy;
  if (strategy.kind == ImputeStrategy::Kind::Knn) {
    auto cfg = knn_base;
    cfg.k = strategy.knn_cfg.k;
    if (spec.auto_k && !holed.complete()) {
      if (!companions) throw Error(Errc::MissingCompanions, "knn:auto needs companion series");
      const auto present = present_indices(holed);
      std::vector<GriddedSeries> comp;
      for (const auto& c : *companions) comp.push_back(select_cells(c, present));
      // Candidates larger than the neighbour rows left after masking cannot
      // be scored on short series; they are skipped rather than fatal.
      std::size_t rows = 0;
      for (std::size_t i = 0; i < present.size(); ++i) {
        rows += std::all_of(comp.begin(), comp.end(), [&](const GriddedSeries& c) { return c.values[i].has_value(); });
      }
      const auto hidden = mask_count(ksel.mask_fraction, present.size());
      std::vector<std::size_t> usable;
      for (auto k : ksel.candidates) {
        if (k + hidden <= rows) usable.push_back(k);
      }
      if (usable.empty()) {
        throw Error(Errc::InsufficientSupport, "no k candidate fits " + std::to_string(rows) + " neighbour rows");
      }
      cfg.k = select_k(select_cells(holed, present), comp, ksel.mask_fraction, usable, seed, cfg).k_star;
    }
    strategy = ImputeStrategy::knn_with(cfg);
  }
  const std::size_t k_used = strategy.kind == ImputeStrategy::Kind::Knn ? strategy.knn_cfg.k : 0;
  return {impute(holed, strategy, companions), k_used};
}

struct OverlayPoint {
  std::size_t slot = 0;  // index in the clean series
  double truth = 0.0;
  double predicted = 0.0;
};

struct StrategyOutcome {
  std::string name;
  double rmse = 0.0;
  std::size_t k_used = 0;
  std::vector<EpochRecord> history;
  std::vector<OverlayPoint> overlay;  // one-step forecasts over the test region
};

struct ImputationEval {
  std::size_t train_len = 0;
  std::vector<std::size_t> masked;  // shared across strategies
  std::vector<StrategyOutcome> outcomes;
};

/// Hides `mask_fraction` of the training region (the first 80% of the
/// series; the last 20% is the test region), repairs it with each strategy,
/// trains one LSTM per strategy from identical initial weights and scores
/// forecasts of the test region against the clean values.
inline ImputationEval evaluate_imputation(const GriddedSeries& clean, const std::vector<StrategySpec>& strategies,
                                          double mask_fraction, const ForecastConfig& fc, std::uint64_t seed,
                                          const std::vector<GriddedSeries>* companions = nullptr,
                                          const KnnConfig& knn_base = {}, const KSelectConfig& ksel = {}) {
  fc.validate();
  if (!clean.complete()) throw Error(Errc::InsufficientSupport, "evaluate_imputation needs a complete series");
  if (!(mask_fraction >= 0.0 && mask_fraction < 1.0)) throw Error(Errc::InvalidConfig, "mask fraction must lie in [0,1)");
  if (companions) detail::check_cogridded(clean, *companions);
  const auto n = clean.size();
  ImputationEval ev;
  ev.train_len = n - static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(n) - 1e-9));
  if (ev.train_len < fc.window + fc.horizon || ev.train_len < fc.window || n - ev.train_len < fc.horizon) {
    throw Error(Errc::SeriesTooShort, "series of " + std::to_string(n) + " slots is too short for window " +
                                          std::to_string(fc.window));
  }
  auto train = slice(clean, 0, ev.train_len);
  std::vector<GriddedSeries> train_comp;
  if (companions) {
    for (const auto& c : *companions) train_comp.push_back(slice(c, 0, ev.train_len));
  }
  const auto m = mask_count(mask_fraction, ev.train_len);
  {
    auto order = detail::iota(ev.train_len);
    Rng rng(derive_seed(seed, 1));
    rng.shuffle(order);
    ev.masked.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
    std::sort(ev.masked.begin(), ev.masked.end());
  }
  auto holed = train;
  for (auto i : ev.masked) holed.values[i].reset();

  const auto clean_values = clean.dense();
  std::vector<Window> test_windows;
  std::vector<std::size_t> test_slots;
  for (std::size_t s = ev.train_len; s + fc.horizon <= n; ++s) {
    test_windows.push_back({{clean_values.begin() + static_cast<std::ptrdiff_t>(s - fc.window),
                             clean_values.begin() + static_cast<std::ptrdiff_t>(s)},
                            {clean_values.begin() + static_cast<std::ptrdiff_t>(s),
                             clean_values.begin() + static_cast<std::ptrdiff_t>(s + fc.horizon)}});
    test_slots.push_back(s);
  }

  const auto init_seed = derive_seed(fc.seed, 2);
  for (const auto& spec : strategies) {
    const auto [repaired, k_used] =
        impute_with(holed, spec, companions ? &train_comp : nullptr, knn_base, ksel, derive_seed(seed, 3));
    auto [model, history] = train_forecaster(repaired.dense(), fc, init_seed);
    const auto pred = predict_windows(model, test_windows);
    std::vector<double> truth;
    for (const auto& w : test_windows) truth.insert(truth.end(), w.target.begin(), w.target.end());
    StrategyOutcome out;
    out.name = spec.name;
    out.rmse = rmse(truth, pred);
    out.k_used = k_used;
    out.history = std::move(history);
    for (std::size_t i = 0; i < test_windows.size(); ++i) {
      out.overlay.push_back({test_slots[i], test_windows[i].target[0], pred[i * fc.horizon]});
    }
    ev.outcomes.push_back(std::move(out));
  }
  return ev;
}

// ---------------------------------------------------------------- counting data

struct LabeledRow {
  std::vector<double> features;
  int label = 0;
  bool duplicate = false;  // added by oversampling
};

struct LabeledDataset {
  std::vector<LabeledRow> rows;
  std::vector<int> classes;  // ascending

  std::size_t size() const { return rows.size(); }
};

inline std::vector<int> observed_classes(const std::vector<LabeledRow>& rows) {
  std::set<int> s;
  for (const auto& r : rows) s.insert(r.label);
  return {s.begin(), s.end()};
}

inline constexpr std::array<Field, 5> kOccupancyFields{Field::Co2, Field::Temperature, Field::Humidity, Field::Light,
                                                       Field::Motion};
inline const std::vector<std::string> kOccupancyFeatureNames{"co2",    "temperature", "humidity", "light",
                                                             "motion", "tod_sin",     "tod_cos"};

/// One row per labelled slot whose reading carries every occupancy field:
/// co2, temperature, humidity, light, motion, then sin/cos of time of day.
inline LabeledDataset occupancy_dataset(const std::vector<SensorReading>& readings,
                                        const std::map<DeviceId, std::vector<std::pair<Timestamp, int>>>& labels) {
  std::map<std::pair<DeviceId, Timestamp>, const SensorReading*> index;
  for (const auto& r : readings) index[{r.device, r.ts}] = &r;
  LabeledDataset ds;
  for (const auto& [dev, slots] : labels) {
    for (const auto& [ts, count] : slots) {
      const auto it = index.find({dev, ts});
      if (it == index.end()) continue;
      LabeledRow row;
      bool complete = true;
      for (auto f : kOccupancyFields) {
        const auto v = it->second->get(f);
        if (!v) {
          complete = false;
          break;
        }
        row.features.push_back(*v);
      }
      if (!complete) continue;
      const double angle = 2.0 * std::numbers::pi * day_fraction(ts);
      row.features.push_back(std::sin(angle));
      row.features.push_back(std::cos(angle));
      row.label = count;
      ds.rows.push_back(std::move(row));
    }
  }
  ds.classes = observed_classes(ds.rows);
  return ds;
}

/// Brings every class up to the majority count by sampling its own original
/// rows with replacement. Originals are kept in place; copies are appended,
/// class by class, and flagged as duplicates.
inline LabeledDataset oversample(const LabeledDataset& ds, std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (int c : ds.classes) by_class[c];
  for (std::size_t i = 0; i < ds.rows.size(); ++i) {
    if (!ds.rows[i].duplicate) by_class[ds.rows[i].label].push_back(i);
  }
  std::size_t majority = 0;
  for (const auto& [c, idx] : by_class) {
    if (idx.empty()) throw Error(Errc::EmptyClass, "class " + std::to_string(c) + " has no rows");
    majority = std::max(majority, idx.size());
  }
  LabeledDataset out = ds;
  out.classes.clear();
  for (const auto& [c, idx] : by_class) out.classes.push_back(c);
  Rng rng(seed);
  for (const auto& [c, idx] : by_class) {
    for (std::size_t k = idx.size(); k < majority; ++k) {
      auto copy = ds.rows[idx[rng.index(idx.size())]];
      copy.duplicate = true;
      out.rows.push_back(std::move(copy));
    }
  }
  return out;
}

struct SplitRatios {
  double train = 0.7;
  double val = 0.15;
  double test = 0.15;
};

struct DatasetSplit {
  LabeledDataset train, val, test;
  std::size_t quarantined = 0;  // val/test rows moved to train for having a twin there
};

namespace detail {

// Largest-remainder seat counts; a tie in the fractional part favours the
// later part.
inline std::array<std::size_t, 3> apportion(const SplitRatios& r, std::size_t n) {
  const std::array<double, 3> w{r.train, r.val, r.test};
  std::array<std::size_t, 3> seats{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double quota = w[i] * static_cast<double>(n);
    const double fl = std::floor(quota + 1e-9);
    seats[i] = static_cast<std::size_t>(fl);
    rem[i] = quota - fl;
    assigned += seats[i];
  }
  while (assigned < n) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < 3; ++i) {
      if (rem[i] >= rem[best] - 1e-9) best = i;
    }
    ++seats[best];
    rem[best] = -1.0;
    ++assigned;
  }
  return seats;
}

}  // namespace detail

/// Duplicates always go to train. The original rows are shuffled and split
/// by largest-remainder apportionment of the ratios; afterwards any val/test
/// row whose exact (features, label) twin sits in train is moved to train.
inline DatasetSplit split(const LabeledDataset& ds, const SplitRatios& ratios, std::uint64_t seed) {
  const double sum = ratios.train + ratios.val + ratios.test;
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 || std::abs(sum - 1.0) > 1e-9) {
    throw Error(Errc::RatioInvalid, "split ratios must be nonnegative and sum to 1");
  }
  std::vector<std::size_t> originals;
  DatasetSplit out;
  out.train.classes = out.val.classes = out.test.classes = ds.classes;
  for (std::size_t i = 0; i < ds.rows.size(); ++i) {
    if (ds.rows[i].duplicate) {
      out.train.rows.push_back(ds.rows[i]);
    } else {
      originals.push_back(i);
    }
  }
  if (originals.size() < 3) throw Error(Errc::EmptyInput, "need at least 3 non-duplicate rows to split");
  Rng rng(seed);
  rng.shuffle(originals);
  const auto seats = detail::apportion(ratios, originals.size());
  for (std::size_t k = 0; k < originals.size(); ++k) {
    const auto& row = ds.rows[originals[k]];
    if (k < seats[0]) {
      out.train.rows.push_back(row);
    } else if (k < seats[0] + seats[1]) {
      out.val.rows.push_back(row);
    } else {
      out.test.rows.push_back(row);
    }
  }

  std::set<std::pair<int, std::vector<double>>> train_keys;
  for (const auto& r : out.train.rows) train_keys.emplace(r.label, r.features);
  for (auto* part : {&out.val, &out.test}) {
    std::vector<LabeledRow> kept;
    for (auto& r : part->rows) {
      if (train_keys.count({r.label, r.features})) {
        out.train.rows.push_back(std::move(r));
        ++out.quarantined;
      } else {
        kept.push_back(std::move(r));
      }
    }
    part->rows = std::move(kept);
  }
  return out;
}

// ---------------------------------------------------------------- counter

struct CounterConfig {
  std::vector<std::size_t> hidden{512, 256, 128, 64};
  std::size_t classes = 12;
  std::size_t epochs = 200;
  std::size_t batch = 32;
  nn::OptKind optimizer = nn::OptKind::Adam;
  nn::OptConfig opt;
  SplitRatios ratios;
  bool oversample = true;
  std::size_t patience = 20;
  std::uint64_t seed = 42;

  void validate() const {
    auto fail = [](const std::string& why) { throw Error(Errc::InvalidConfig, why); };
    if (classes < 2) fail("counter needs at least 2 classes");
    if (std::find(hidden.begin(), hidden.end(), 0u) != hidden.end()) fail("hidden dims must be positive");
    if (epochs == 0) fail("epochs must be >= 1");
    if (batch == 0) fail("batch size must be >= 1");
    if (!(opt.lr > 0.0)) fail("learning rate must be positive");
    const double sum = ratios.train + ratios.val + ratios.test;
    if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 || std::abs(sum - 1.0) > 1e-9) {
      throw Error(Errc::RatioInvalid, "split ratios must be nonnegative and sum to 1");
    }
  }
};

/// A trained counter: z-scoring statistics from the training split, the
/// network and the label of each output unit. Output units past the
/// observed classes are never predicted.
struct Counter {
  nn::MlpNet net;
  std::vector<double> mean, sd;
  std::vector<int> classes;

  nn::Matrix standardize(const std::vector<LabeledRow>& rows) const {
    nn::Matrix x(rows.size(), mean.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].features.size() != mean.size()) throw Error(Errc::DimMismatch, "feature vector has the wrong size");
      for (std::size_t j = 0; j < mean.size(); ++j) x(r, j) = (rows[r].features[j] - mean[j]) / sd[j];
    }
    return x;
  }

  std::vector<int> predict(const std::vector<LabeledRow>& rows) const {
    if (rows.empty()) return {};
    const auto logits = nn::mlp_logits(net, standardize(rows));
    std::vector<int> out;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
      const double* z = logits.row(r);
      const auto best = std::max_element(z, z + classes.size()) - z;
      out.push_back(classes[static_cast<std::size_t>(best)]);
    }
    return out;
  }
};

struct CounterResult {
  Counter counter;
  std::vector<EpochRecord> history;
  ConfusionMatrix confusion;
  ClassificationReport report;
  std::size_t train_rows = 0, val_rows = 0, test_rows = 0, quarantined = 0;
};

namespace detail {

inline nn::Matrix one_hot(const std::vector<LabeledRow>& rows, const std::map<int, std::size_t>& index,
                          std::size_t width) {
  nn::Matrix y(rows.size(), width);
  for (std::size_t r = 0; r < rows.size(); ++r) y(r, index.at(rows[r].label)) = 1.0;
  return y;
}

inline nn::Matrix take_rows(const nn::Matrix& m, const std::vector<std::size_t>& order, std::size_t b, std::size_t e) {
  nn::Matrix out(e - b, m.cols());
  for (std::size_t r = b; r < e; ++r) std::copy(m.row(order[r]), m.row(order[r]) + m.cols(), out.row(r - b));
  return out;
}

inline double accuracy_of(const nn::Matrix& logits, const nn::Matrix& y, std::size_t n_classes) {
  std::size_t hit = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const double* z = logits.row(r);
    const double* t = y.row(r);
    const auto pred = std::max_element(z, z + n_classes) - z;
    const auto truth = std::max_element(t, t + y.cols()) - t;
    if (pred == truth) ++hit;
  }
  return logits.rows() ? static_cast<double>(hit) / static_cast<double>(logits.rows()) : 0.0;
}

inline double mean_cross_entropy(const nn::Matrix& logits, const nn::Matrix& y) {
  double loss = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const double* z = logits.row(r);
    const double mx = *std::max_element(z, z + logits.cols());
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) sum += std::exp(z[c] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      if (y(r, c) != 0.0) loss -= y(r, c) * (z[c] - lse);
    }
  }
  return loss / static_cast<double>(logits.rows());
}

}  // namespace detail

/// Oversample (optional), split, z-score on train statistics, train with
/// cross-entropy, early-stop on validation loss (best weights kept) and
/// score the test split.
inline CounterResult train_counter(const LabeledDataset& ds, const CounterConfig& cfg) {
  cfg.validate();
  if (ds.rows.empty()) throw Error(Errc::EmptyInput, "no labelled rows");
  const auto classes = observed_classes(ds.rows);
  if (classes.size() > cfg.classes) {
    throw Error(Errc::InvalidConfig, std::to_string(classes.size()) + " distinct labels exceed the configured " +
                                         std::to_string(cfg.classes) + " classes");
  }
  LabeledDataset base = ds;
  base.classes = classes;
  const auto balanced = cfg.oversample ? oversample(base, derive_seed(cfg.seed, 1)) : base;
  const auto parts = split(balanced, cfg.ratios, derive_seed(cfg.seed, 2));

  CounterResult res;
  res.train_rows = parts.train.size();
  res.val_rows = parts.val.size();
  res.test_rows = parts.test.size();
  res.quarantined = parts.quarantined;

  auto& counter = res.counter;
  counter.classes = classes;
  const auto dim = parts.train.rows.front().features.size();
  counter.mean.assign(dim, 0.0);
  counter.sd.assign(dim, 0.0);
  for (const auto& r : parts.train.rows) {
    for (std::size_t j = 0; j < dim; ++j) counter.mean[j] += r.features[j];
  }
  for (auto& m : counter.mean) m /= static_cast<double>(parts.train.size());
  for (const auto& r : parts.train.rows) {
    for (std::size_t j = 0; j < dim; ++j) counter.sd[j] += std::pow(r.features[j] - counter.mean[j], 2);
  }
  for (auto& s : counter.sd) {
    s = std::sqrt(s / static_cast<double>(parts.train.size()));
    if (!(s > 0.0)) s = 1.0;
  }

  std::map<int, std::size_t> index;
  for (std::size_t i = 0; i < classes.size(); ++i) index[classes[i]] = i;
  std::vector<std::size_t> dims{dim};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(cfg.classes);
  counter.net = nn::make_mlp(dims, derive_seed(cfg.seed, 3));

  const auto x_train = counter.standardize(parts.train.rows);
  const auto y_train = detail::one_hot(parts.train.rows, index, cfg.classes);
  const bool has_val = !parts.val.rows.empty();
  const auto x_val = has_val ? counter.standardize(parts.val.rows) : nn::Matrix();
  const auto y_val = has_val ? detail::one_hot(parts.val.rows, index, cfg.classes) : nn::Matrix();

  nn::Optimizer opt(cfg.optimizer, cfg.opt);
  double best = std::numeric_limits<double>::infinity();
  auto best_net = counter.net;
  std::size_t since_best = 0;
  const auto n = parts.train.size();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto order = detail::iota(n);
    Rng rng(derive_seed(cfg.seed, 0x10000 + epoch));
    rng.shuffle(order);
    double loss_sum = 0.0, acc_sum = 0.0;
    for (std::size_t b = 0; b < n; b += cfg.batch) {
      const auto e = std::min(n, b + cfg.batch);
      const auto xb = detail::take_rows(x_train, order, b, e);
      const auto yb = detail::take_rows(y_train, order, b, e);
      auto r = nn::loss_and_gradients(counter.net, xb, yb);
      acc_sum += detail::accuracy_of(r.output, yb, classes.size()) * static_cast<double>(e - b);
      loss_sum += r.loss * static_cast<double>(e - b);
      opt.step(counter.net, r.grad);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.train_acc = acc_sum / static_cast<double>(n);
    if (has_val) {
      const auto logits = nn::mlp_logits(counter.net, x_val);
      rec.val_loss = detail::mean_cross_entropy(logits, y_val);
      rec.val_acc = detail::accuracy_of(logits, y_val, classes.size());
    }
    res.history.push_back(rec);
    if (!has_val) continue;
    if (rec.val_loss < best) {
      best = rec.val_loss;
      best_net = counter.net;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  if (has_val) counter.net = std::move(best_net);

  if (parts.test.rows.empty()) throw Error(Errc::EmptyInput, "test split is empty");
  std::vector<int> truth;
  for (const auto& r : parts.test.rows) truth.push_back(r.label);
  res.confusion = confusion(truth, counter.predict(parts.test.rows), classes);
  res.report = report(res.confusion);
  return res;
}

}  // namespace loracampus
