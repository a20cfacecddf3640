#pragma once

// Missing-cell imputation for gridded series: drop, zero fill, linear and
// polynomial interpolation, and feature-space KNN with k chosen by masking
// known cells and scoring their reconstruction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "loracampus/core_model.hpp"
#include "loracampus/error.hpp"
#include "loracampus/gaps.hpp"
#include "loracampus/rng.hpp"

namespace loracampus {

struct KnnConfig {
  std::size_t k = 13;
  std::vector<Field> feature_set;  // companion fields to use; empty = every companion given
  bool time_features = true;       // sin/cos of time of day
  bool standardize = true;
};

struct ImputeStrategy {
  enum class Kind { Drop, Zero, Linear, Poly, Knn };

  Kind kind = Kind::Linear;
  int order = 0;  // Poly only
  KnnConfig knn_cfg;  // Knn only

  static ImputeStrategy drop() { return make(Kind::Drop); }
  static ImputeStrategy zero() { return make(Kind::Zero); }
  static ImputeStrategy linear() { return make(Kind::Linear); }
  static ImputeStrategy poly(int order) {
    if (order < 2) throw Error(Errc::InvalidConfig, "poly order must be >= 2, got " + std::to_string(order));
    auto s = make(Kind::Poly);
    s.order = order;
    return s;
  }
  static ImputeStrategy knn_with(KnnConfig cfg) {
    if (cfg.k == 0) throw Error(Errc::InvalidConfig, "knn k must be positive");
    auto s = make(Kind::Knn);
    s.knn_cfg = std::move(cfg);
    return s;
  }
  static ImputeStrategy knn(std::size_t k) {
    KnnConfig cfg;
    cfg.k = k;
    return knn_with(std::move(cfg));
  }

 private:
  static ImputeStrategy make(Kind kind) {
    ImputeStrategy s;
    s.kind = kind;
    return s;
  }
};

inline std::string to_string(const ImputeStrategy& s) {
  switch (s.kind) {
    case ImputeStrategy::Kind::Drop: return "drop";
    case ImputeStrategy::Kind::Zero: return "zero";
    case ImputeStrategy::Kind::Linear: return "linear";
    case ImputeStrategy::Kind::Poly: return "poly:" + std::to_string(s.order);
    case ImputeStrategy::Kind::Knn: return "knn:" + std::to_string(s.knn_cfg.k);
  }
  return "?";
}

/// Polynomial in a shifted/scaled variable u = (x - shift) / scale, which
/// keeps the normal equations well conditioned for x in the thousands.
struct Polynomial {
  double shift = 0.0;
  double scale = 1.0;
  std::vector<double> coef;  // in powers of u

  double operator()(double x) const {
    const double u = (x - shift) / scale;
    double acc = 0.0;
    for (auto it = coef.rbegin(); it != coef.rend(); ++it) acc = acc * u + *it;
    return acc;
  }

  // Coefficients in powers of x.
  std::vector<double> raw() const {
    const auto n = coef.size();
    std::vector<double> out(n, 0.0);
    // (x - c)^j / s^j expanded binomially
    for (std::size_t j = 0; j < n; ++j) {
      const double cj = coef[j] / std::pow(scale, static_cast<double>(j));
      double binom = 1.0;
      for (std::size_t m = 0; m <= j; ++m) {
        out[m] += cj * binom * std::pow(-shift, static_cast<double>(j - m));
        binom = binom * static_cast<double>(j - m) / static_cast<double>(m + 1);
      }
    }
    return out;
  }
};

namespace detail {

// Solves A x = b in place by Gaussian elimination with partial pivoting.
// Returns false if a pivot vanishes relative to the matrix scale.
inline bool solve_dense(std::vector<std::vector<double>> a, std::vector<double> b, std::vector<double>& x) {
  const auto n = b.size();
  double norm = 0.0;
  for (const auto& row : a) {
    for (double v : row) norm = std::max(norm, std::abs(v));
  }
  if (norm == 0.0) return false;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    }
    if (std::abs(a[piv][col]) <= 1e-13 * norm) return false;
    std::swap(a[piv], a[col]);
    std::swap(b[piv], b[col]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  x.assign(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double acc = b[i];
    for (std::size_t c = i + 1; c < n; ++c) acc -= a[i][c] * x[c];
    x[i] = acc / a[i][i];
  }
  return true;
}

}  // namespace detail

/// Least-squares polynomial of the given order through (xs, ys).
inline Polynomial fit_polynomial(const std::vector<double>& xs, const std::vector<double>& ys, int order) {
  if (xs.size() != ys.size()) throw Error(Errc::LengthMismatch, "xs and ys differ in length");
  if (order < 0) throw Error(Errc::InvalidConfig, "negative polynomial order");
  std::vector<double> distinct(xs);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  const auto n = static_cast<std::size_t>(order) + 1;
  if (distinct.size() < n) {
    throw Error(Errc::DegenerateDesign, "order " + std::to_string(order) + " needs " + std::to_string(n) +
                                            " distinct x values, got " + std::to_string(distinct.size()));
  }
  Polynomial p;
  p.shift = 0.5 * (distinct.front() + distinct.back());
  p.scale = distinct.size() > 1 ? 0.5 * (distinct.back() - distinct.front()) : 1.0;

  // Normal equations on u in [-1, 1], equilibrated by the diagonal. Two
  // rounds of refinement on the residual recover the precision the normal
  // equations lose to squaring the condition number.
  std::vector<double> us(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) us[i] = (xs[i] - p.shift) / p.scale;
  std::vector<std::vector<double>> ata(n, std::vector<double>(n, 0.0));
  std::vector<double> powers(2 * n - 1);
  for (double u : us) {
    double pw = 1.0;
    for (auto& v : powers) {
      v = pw;
      pw *= u;
    }
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) ata[r][c] += powers[r + c];
    }
  }
  std::vector<double> d(n);
  for (std::size_t r = 0; r < n; ++r) d[r] = 1.0 / std::sqrt(ata[r][r]);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) ata[r][c] *= d[r] * d[c];
  }

  p.coef.assign(n, 0.0);
  std::vector<double> resid(ys);
  for (int round = 0; round < 3; ++round) {
    std::vector<double> atb(n, 0.0);
    for (std::size_t i = 0; i < us.size(); ++i) {
      double pw = 1.0;
      for (std::size_t r = 0; r < n; ++r) {
        atb[r] += pw * resid[i];
        pw *= us[i];
      }
    }
    for (std::size_t r = 0; r < n; ++r) atb[r] *= d[r];
    std::vector<double> z;
    if (!detail::solve_dense(ata, atb, z)) throw Error(Errc::DegenerateDesign, "normal equations are singular");
    for (std::size_t r = 0; r < n; ++r) p.coef[r] += z[r] * d[r];
    for (std::size_t i = 0; i < xs.size(); ++i) resid[i] = ys[i] - p(xs[i]);
  }
  return p;
}

/// Coefficients a_0..a_order of the least-squares polynomial in x.
inline std::vector<double> poly_fit(const std::vector<double>& xs, const std::vector<double>& ys, int order) {
  return fit_polynomial(xs, ys, order).raw();
}

namespace detail {

struct PresentCells {
  std::vector<double> xs, ys;
  std::vector<std::size_t> idx;
  double lo = 0.0, hi = 0.0;
};

inline PresentCells present_cells(const GriddedSeries& s) {
  PresentCells p;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!s.values[i]) continue;
    p.xs.push_back(static_cast<double>(s.slot_of(i)));
    p.ys.push_back(*s.values[i]);
    p.idx.push_back(i);
  }
  if (!p.ys.empty()) {
    const auto [mn, mx] = std::minmax_element(p.ys.begin(), p.ys.end());
    p.lo = *mn;
    p.hi = *mx;
  }
  return p;
}

inline GriddedSeries impute_linear(GriddedSeries s) {
  const auto p = present_cells(s);
  if (p.idx.size() < 2) throw Error(Errc::InsufficientSupport, "linear imputation needs 2 present cells");
  auto line = [&](std::size_t a, std::size_t b, double x) {
    return p.ys[a] + (p.ys[b] - p.ys[a]) * (x - p.xs[a]) / (p.xs[b] - p.xs[a]);
  };
  std::size_t next = 0;  // first present cell at or after i
  for (std::size_t i = 0; i < s.size(); ++i) {
    while (next < p.idx.size() && p.idx[next] < i) ++next;
    if (s.values[i]) continue;
    const auto x = static_cast<double>(s.slot_of(i));
    if (next == 0) {
      s.values[i] = std::clamp(line(0, 1, x), p.lo, p.hi);
    } else if (next == p.idx.size()) {
      s.values[i] = std::clamp(line(next - 2, next - 1, x), p.lo, p.hi);
    } else {
      s.values[i] = line(next - 1, next, x);
    }
  }
  return s;
}

inline GriddedSeries impute_poly(GriddedSeries s, int order) {
  const auto p = present_cells(s);
  if (p.idx.size() < static_cast<std::size_t>(order) + 1) {
    throw Error(Errc::InsufficientSupport, "poly(" + std::to_string(order) + ") imputation needs " +
                                               std::to_string(order + 1) + " present cells");
  }
  const auto poly = fit_polynomial(p.xs, p.ys, order);
  const auto first = p.idx.front();
  const auto last = p.idx.back();
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.values[i]) continue;
    const double v = poly(static_cast<double>(s.slot_of(i)));
    s.values[i] = (i < first || i > last) ? std::clamp(v, p.lo, p.hi) : v;
  }
  return s;
}

inline void check_cogridded(const GriddedSeries& s, const std::vector<GriddedSeries>& companions) {
  for (const auto& c : companions) {
    if (c.size() != s.size() || c.t0 != s.t0 || c.cadence != s.cadence || c.slot_map != s.slot_map) {
      throw Error(Errc::ShapeMismatch, std::string("companion ") + std::string(kFieldNames[static_cast<int>(c.field)]) +
                                           " is not on the same grid as the target");
    }
  }
}

// Feature matrix (one optional value per feature per cell).
inline std::vector<std::vector<std::optional<double>>> knn_features(const GriddedSeries& s,
                                                                     const std::vector<GriddedSeries>& companions,
                                                                     const KnnConfig& cfg) {
  std::vector<const GriddedSeries*> used;
  for (const auto& c : companions) {
    if (cfg.feature_set.empty() ||
        std::find(cfg.feature_set.begin(), cfg.feature_set.end(), c.field) != cfg.feature_set.end()) {
      used.push_back(&c);
    }
  }
  const std::size_t dims = used.size() + (cfg.time_features ? 2 : 0);
  std::vector<std::vector<std::optional<double>>> f(s.size(), std::vector<std::optional<double>>(dims));
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t d = 0; d < used.size(); ++d) f[i][d] = used[d]->values[i];
    if (cfg.time_features) {
      const double angle = 2.0 * std::numbers::pi * day_fraction(s.slot_time(i));
      f[i][used.size()] = std::sin(angle);
      f[i][used.size() + 1] = std::cos(angle);
    }
  }
  return f;
}

inline GriddedSeries impute_knn(GriddedSeries s, const std::vector<GriddedSeries>* companions, const KnnConfig& cfg) {
  if (!companions) throw Error(Errc::MissingCompanions, "knn imputation needs companion series");
  check_cogridded(s, *companions);
  const auto feats = knn_features(s, *companions, cfg);
  const std::size_t dims = feats.empty() ? 0 : feats[0].size();

  // Neighbour rows: target and every feature present.
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!s.values[i]) continue;
    if (std::all_of(feats[i].begin(), feats[i].end(), [](const auto& v) { return v.has_value(); })) rows.push_back(i);
  }
  if (rows.size() < cfg.k) {
    throw Error(Errc::InsufficientSupport, "knn(" + std::to_string(cfg.k) + ") has only " +
                                               std::to_string(rows.size()) + " complete neighbour rows");
  }

  std::vector<double> mean(dims, 0.0), sd(dims, 1.0);
  if (cfg.standardize) {
    for (std::size_t d = 0; d < dims; ++d) {
      double m = 0.0;
      for (auto r : rows) m += *feats[r][d];
      m /= static_cast<double>(rows.size());
      double v = 0.0;
      for (auto r : rows) v += (*feats[r][d] - m) * (*feats[r][d] - m);
      v /= static_cast<double>(rows.size());
      mean[d] = m;
      sd[d] = v > 0.0 ? std::sqrt(v) : 1.0;
    }
  }

  const auto targets = s.values;
  std::vector<std::pair<double, std::size_t>> dist(rows.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.values[i]) continue;
    std::vector<std::size_t> active;
    for (std::size_t d = 0; d < dims; ++d) {
      if (feats[i][d]) active.push_back(d);
    }
    if (active.empty()) {
      throw Error(Errc::InsufficientSupport, "no knn feature is present at " + format_iso8601(s.slot_time(i)));
    }
    for (std::size_t n = 0; n < rows.size(); ++n) {
      double acc = 0.0;
      for (auto d : active) {
        const double diff = (*feats[i][d] - *feats[rows[n]][d]) / sd[d];
        acc += diff * diff;
      }
      dist[n] = {acc, rows[n]};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(cfg.k), dist.end());
    double sum = 0.0;
    for (std::size_t n = 0; n < cfg.k; ++n) sum += *targets[dist[n].second];
    s.values[i] = sum / static_cast<double>(cfg.k);
  }
  return s;
}

}  // namespace detail

/// Copy of `s` holding only the cells at `indices` (ascending), with the
/// slot map pointing back at the original grid.
inline GriddedSeries select_cells(const GriddedSeries& s, const std::vector<std::size_t>& indices) {
  GriddedSeries out = s;
  out.values.clear();
  out.slot_map.clear();
  for (auto i : indices) {
    out.values.push_back(s.values[i]);
    out.slot_map.push_back(s.slot_of(i));
  }
  return out;
}

inline std::vector<std::size_t> present_indices(const GriddedSeries& s) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.values[i]) out.push_back(i);
  }
  return out;
}

/// Fills (or, for Drop, excises) the missing cells of `series`. Present
/// cells are returned untouched. Knn reads its features from `companions`,
/// which must share the target's grid.
inline GriddedSeries impute(const GriddedSeries& series, const ImputeStrategy& strategy,
                            const std::vector<GriddedSeries>* companions = nullptr) {
  if (series.complete()) return series;
  switch (strategy.kind) {
    case ImputeStrategy::Kind::Drop: return select_cells(series, present_indices(series));
    case ImputeStrategy::Kind::Zero: {
      auto out = series;
      for (auto& v : out.values) {
        if (!v) v = 0.0;
      }
      return out;
    }
    case ImputeStrategy::Kind::Linear: return detail::impute_linear(series);
    case ImputeStrategy::Kind::Poly: return detail::impute_poly(series, strategy.order);
    case ImputeStrategy::Kind::Knn: return detail::impute_knn(series, companions, strategy.knn_cfg);
  }
  throw Error(Errc::InvalidConfig, "unknown imputation strategy");
}

struct KSelection {
  std::size_t k_star = 0;
  std::vector<std::pair<std::size_t, double>> mse_per_k;  // candidate order
  std::vector<std::size_t> masked;                        // indices hidden during scoring
};

inline std::size_t mask_count(double mask_fraction, std::size_t len) {
  // the small slack keeps e.g. 0.2 * 50 from rounding up to 11
  return static_cast<std::size_t>(std::ceil(mask_fraction * static_cast<double>(len) - 1e-9));
}

/// Hides ceil(mask_fraction * len) random cells of a complete series, imputes
/// them with each candidate k and keeps the k with the lowest MSE (the
/// smaller k on ties).
inline KSelection select_k(const GriddedSeries& clean, const std::vector<GriddedSeries>& companions,
                           double mask_fraction, const std::vector<std::size_t>& k_candidates, std::uint64_t seed,
                           KnnConfig base = {}) {
  if (!clean.complete()) throw Error(Errc::InsufficientSupport, "select_k needs a complete series");
  if (!(mask_fraction > 0.0 && mask_fraction < 1.0)) {
    throw Error(Errc::InsufficientSupport, "mask fraction must lie in (0, 1)");
  }
  if (k_candidates.empty()) throw Error(Errc::InsufficientSupport, "no k candidates");
  const auto m = mask_count(mask_fraction, clean.size());
  if (m == 0) throw Error(Errc::InsufficientSupport, "mask fraction hides no cells");

  KSelection out;
  std::vector<std::size_t> order(clean.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  out.masked.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
  std::sort(out.masked.begin(), out.masked.end());

  auto holed = clean;
  for (auto i : out.masked) holed.values[i].reset();

  double best = 0.0;
  for (auto k : k_candidates) {
    auto cfg = base;
    cfg.k = k;
    const auto filled = impute(holed, ImputeStrategy::knn_with(cfg), &companions);
    double sse = 0.0;
    for (auto i : out.masked) {
      const double e = *filled.values[i] - *clean.values[i];
      sse += e * e;
    }
    const double mse = sse / static_cast<double>(m);
    out.mse_per_k.emplace_back(k, mse);
    if (out.k_star == 0 || mse < best || (mse == best && k < out.k_star)) {
      best = mse;
      out.k_star = k;
    }
  }
  return out;
}

}  // namespace loracampus
