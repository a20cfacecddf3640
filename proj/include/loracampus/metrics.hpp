#pragma once

// Scores for both experiments: MSE/RMSE for forecasts; confusion matrix and
// per-class precision/recall/f1 with overall accuracy for the counter.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "loracampus/error.hpp"

namespace loracampus {

inline double mse(std::span<const double> y, std::span<const double> yhat) {
  if (y.size() != yhat.size()) {
    throw Error(Errc::LengthMismatch, std::to_string(y.size()) + " targets vs " + std::to_string(yhat.size()) +
                                          " predictions");
  }
  if (y.empty()) throw Error(Errc::EmptyInput, "mse of nothing");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  return acc / static_cast<double>(y.size());
}

inline double rmse(std::span<const double> y, std::span<const double> yhat) { return std::sqrt(mse(y, yhat)); }

struct ConfusionMatrix {
  std::vector<int> classes;
  std::vector<std::vector<std::int64_t>> counts;  // [true][predicted]

  std::int64_t total() const {
    std::int64_t t = 0;
    for (const auto& row : counts) {
      for (auto c : row) t += c;
    }
    return t;
  }
};

inline ConfusionMatrix confusion(const std::vector<int>& truth, const std::vector<int>& predicted,
                                 const std::vector<int>& classes) {
  if (truth.size() != predicted.size()) throw Error(Errc::LengthMismatch, "label vectors differ in length");
  std::map<int, std::size_t> index;
  for (std::size_t i = 0; i < classes.size(); ++i) index.emplace(classes[i], i);
  ConfusionMatrix cm{classes, std::vector<std::vector<std::int64_t>>(classes.size(),
                                                                     std::vector<std::int64_t>(classes.size(), 0))};
  auto lookup = [&](int label) {
    const auto it = index.find(label);
    if (it == index.end()) throw Error(Errc::UnknownLabel, "label " + std::to_string(label) + " is not a class");
    return it->second;
  };
  for (std::size_t i = 0; i < truth.size(); ++i) ++cm.counts[lookup(truth[i])][lookup(predicted[i])];
  return cm;
}

struct ClassScore {
  int label = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;
  bool degenerate = false;  // a zero denominator was replaced by 0
};

struct ClassificationReport {
  std::vector<ClassScore> classes;
  double accuracy = 0.0;
  std::int64_t total = 0;
};

inline ClassificationReport report(const ConfusionMatrix& cm) {
  const auto n = cm.classes.size();
  if (n == 0 || cm.counts.size() != n) throw Error(Errc::EmptyMatrix, "confusion matrix has no classes");
  ClassificationReport r;
  r.total = cm.total();
  if (r.total == 0) throw Error(Errc::EmptyMatrix, "confusion matrix holds no samples");
  std::int64_t trace = 0;
  for (std::size_t c = 0; c < n; ++c) {
    std::int64_t row = 0, col = 0;
    for (std::size_t k = 0; k < n; ++k) {
      row += cm.counts[c][k];
      col += cm.counts[k][c];
    }
    const auto tp = cm.counts[c][c];
    trace += tp;
    ClassScore s;
    s.label = cm.classes[c];
    s.support = row;
    s.degenerate = row == 0 || col == 0;
    s.precision = col > 0 ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    s.recall = row > 0 ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    if (s.precision + s.recall > 0.0) {
      s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
    } else {
      s.degenerate = true;
    }
    r.classes.push_back(s);
  }
  r.accuracy = static_cast<double>(trace) / static_cast<double>(r.total);
  return r;
}

/// Fixed-width table with two-decimal scores and an accuracy footer.
inline std::string render_table(const ClassificationReport& r) {
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-6s %9s %7s %7s %8s\n", "Class", "Precision", "Recall", "f1-Sc.", "Support");
  out += buf;
  for (const auto& c : r.classes) {
    std::snprintf(buf, sizeof buf, "%-6d %9.2f %7.2f %7.2f %8lld%s\n", c.label, c.precision, c.recall, c.f1,
                  static_cast<long long>(c.support), c.degenerate ? "  *" : "");
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "%-6s %9s %7s %7.2f %8lld\n", "Acc", "", "", r.accuracy,
                static_cast<long long>(r.total));
  out += buf;
  return out;
}

inline nlohmann::json report_to_json(const ClassificationReport& r) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : r.classes) {
    classes.push_back({{"class", c.label},
                       {"precision", c.precision},
                       {"recall", c.recall},
                       {"f1", c.f1},
                       {"support", c.support},
                       {"degenerate", c.degenerate}});
  }
  return {{"classes", classes}, {"accuracy", r.accuracy}, {"total", r.total}};
}

// Rows are true classes, columns predicted; first row/column carry labels.
inline void write_confusion_csv(std::ostream& out, const ConfusionMatrix& cm) {
  out << "true\\predicted";
  for (int c : cm.classes) out << ',' << c;
  out << '\n';
  for (std::size_t i = 0; i < cm.classes.size(); ++i) {
    out << cm.classes[i];
    for (auto v : cm.counts[i]) out << ',' << v;
    out << '\n';
  }
}

}  // namespace loracampus
