#pragma once

// Readers/writers for the two dataset CSVs and the box-plot outlier filter.
//
// Both parsers are total: every data line ends up either as a record or as a
// rejection in the ParseReport, and `rows_ok + rows_rejected` always equals the
// number of data lines. Only an unreadable file is fatal.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "loracampus/core_model.hpp"
#include "loracampus/error.hpp"
#include "loracampus/text.hpp"

namespace loracampus {

inline constexpr std::string_view kLoraHeader = "time,channel,deveui,lsnr,port,rfch,rssi,fcnt";
inline constexpr std::string_view kSensorHeader =
    "time,deveui,co2,temperature,humidity,light,motion,sound_avg,sound_peak,pressure,moisture,battery";

struct Rejection {
  std::size_t line = 0;  // 1-based line number in the file
  std::string reason;
};

struct ParseReport {
  std::size_t rows_ok = 0;
  std::size_t rows_rejected = 0;
  bool missing_header = false;
  std::vector<Rejection> rejections;

  std::size_t total() const { return rows_ok + rows_rejected; }
};

template <typename Record>
struct Parsed {
  std::vector<Record> records;
  ParseReport report;
};

namespace detail {

// Drives the line loop shared by both parsers. `parse_row` returns either a
// record or a rejection reason.
template <typename Record, typename RowFn>
Parsed<Record> parse_lines(std::istream& in, std::string_view header, RowFn parse_row) {
  Parsed<Record> out;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!header_seen) {
      header_seen = true;
      if (line == header) continue;
      out.report.missing_header = true;
    }
    if (out.report.missing_header) {
      ++out.report.rows_rejected;
      out.report.rejections.push_back({line_no, "MissingHeader"});
      continue;
    }
    std::string reason;
    if (auto rec = parse_row(std::string_view(line), reason)) {
      out.records.push_back(std::move(*rec));
      ++out.report.rows_ok;
    } else {
      ++out.report.rows_rejected;
      out.report.rejections.push_back({line_no, std::move(reason)});
    }
  }
  if (in.bad()) throw Error(Errc::IoError, "read failure");
  if (!header_seen) out.report.missing_header = true;
  return out;
}

inline std::optional<Timestamp> try_timestamp(std::string_view s, std::string& reason) {
  try {
    return parse_timestamp(s);
  } catch (const Error& e) {
    reason = e.what();
    return std::nullopt;
  }
}

inline std::optional<DeviceId> try_device(std::string_view s, std::string& reason) {
  try {
    return DeviceId::parse(s);
  } catch (const Error& e) {
    reason = e.what();
    return std::nullopt;
  }
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open '" + path + "'");
  return in;
}

}  // namespace detail

inline Parsed<LoraPacketMeta> parse_lora_csv(std::istream& in) {
  return detail::parse_lines<LoraPacketMeta>(
      in, kLoraHeader, [](std::string_view line, std::string& reason) -> std::optional<LoraPacketMeta> {
        const auto cells = text::split(line, ',');
        if (cells.size() != 8) {
          reason = "ColumnCountMismatch: expected 8 columns, got " + std::to_string(cells.size());
          return std::nullopt;
        }
        LoraFields f;
        auto ts = detail::try_timestamp(cells[0], reason);
        if (!ts) return std::nullopt;
        auto dev = detail::try_device(cells[2], reason);
        if (!dev) return std::nullopt;
        f.ts = *ts;
        f.device = *dev;
        const auto channel = text::parse_int(cells[1]);
        const auto lsnr = text::parse_double(cells[3]);
        const auto port = text::parse_int(cells[4]);
        const auto rfch = text::parse_int(cells[5]);
        const auto rssi = text::parse_double(cells[6]);
        const auto fcnt = text::parse_int(cells[7]);
        if (!channel || !lsnr || !port || !rfch || !rssi || !fcnt) {
          reason = "MalformedNumber";
          return std::nullopt;
        }
        f.channel = *channel;
        f.lsnr = *lsnr;
        f.port = *port;
        f.rfch = *rfch;
        f.rssi = *rssi;
        f.fcnt = *fcnt;
        if (auto why = range_violation(f)) {
          reason = *why;
          return std::nullopt;
        }
        return LoraPacketMeta::make(f);
      });
}

inline Parsed<SensorReading> parse_sensor_csv(std::istream& in) {
  return detail::parse_lines<SensorReading>(
      in, kSensorHeader, [](std::string_view line, std::string& reason) -> std::optional<SensorReading> {
        const auto cells = text::split(line, ',');
        if (cells.size() != 2 + kFieldCount) {
          reason = "ColumnCountMismatch: expected " + std::to_string(2 + kFieldCount) + " columns, got " +
                   std::to_string(cells.size());
          return std::nullopt;
        }
        SensorReading r;
        auto ts = detail::try_timestamp(cells[0], reason);
        if (!ts) return std::nullopt;
        auto dev = detail::try_device(cells[1], reason);
        if (!dev) return std::nullopt;
        r.ts = *ts;
        r.device = *dev;
        for (std::size_t i = 0; i < kFieldCount; ++i) {
          const auto cell = cells[2 + i];
          if (cell == "nan") continue;
          const auto v = text::parse_double(cell);
          if (!v || !std::isfinite(*v)) {
            reason = "MalformedNumber in column " + std::string(kFieldNames[i]) + ": '" + std::string(cell) + "'";
            return std::nullopt;
          }
          r.values[i] = *v;
        }
        if (!r.has_any()) {
          reason = "AllFieldsNan";
          return std::nullopt;
        }
        return r;
      });
}

inline Parsed<LoraPacketMeta> parse_lora_file(const std::string& path) {
  auto in = detail::open_input(path);
  return parse_lora_csv(in);
}

inline Parsed<SensorReading> parse_sensor_file(const std::string& path) {
  auto in = detail::open_input(path);
  return parse_sensor_csv(in);
}

inline void write_lora_csv(std::ostream& out, const std::vector<LoraPacketMeta>& packets) {
  out << kLoraHeader << '\n';
  for (const auto& p : packets) {
    out << format_timestamp_combined(p.ts()) << ',' << p.channel() << ',' << p.device().str() << ','
        << text::format_double(p.lsnr()) << ',' << p.port() << ',' << p.rfch() << ','
        << text::format_double(p.rssi()) << ',' << p.fcnt() << '\n';
  }
}

inline void write_sensor_csv(std::ostream& out, const std::vector<SensorReading>& readings) {
  out << kSensorHeader << '\n';
  for (const auto& r : readings) {
    out << format_timestamp_combined(r.ts) << ',' << r.device.str();
    for (const auto& v : r.values) out << ',' << (v ? text::format_double(*v) : std::string("nan"));
    out << '\n';
  }
}

struct OutlierReport {
  std::vector<std::size_t> removed_indices;  // ascending positions in the input
  double lower_fence = 0.0;
  double upper_fence = 0.0;
};

struct OutlierResult {
  std::vector<double> cleaned;  // survivors, input order
  OutlierReport report;
};

// Quantile of an ascending array by linear interpolation between order
// statistics at rank p*(n+1) (1-based), clamped to the sample range.
inline double order_statistic_quantile(const std::vector<double>& sorted, double p) {
  const auto n = sorted.size();
  const double rank = p * static_cast<double>(n + 1);
  if (rank <= 1.0) return sorted.front();
  if (rank >= static_cast<double>(n)) return sorted.back();
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const double frac = rank - static_cast<double>(lo);
  return sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1]);
}

/// Box-plot outlier removal: values outside [Q1 - f*IQR, Q3 + f*IQR] are
/// dropped, and the fences are recomputed on the survivors until no further
/// value falls outside. The result is therefore a fixed point, so a second
/// application removes nothing. Iteration stops once fewer than four values
/// remain to estimate quartiles from.
///
/// Dropping one tail can shift the quartiles outward, so the reported fences
/// are the intersection of every pass's fences: survivors lie inside all of
/// them and every removed value lies outside the one that removed it.
inline OutlierResult remove_outliers(const std::vector<double>& values, double iqr_factor = 1.5) {
  if (values.size() < 4) {
    throw Error(Errc::SeriesTooShort, "outlier removal needs at least 4 values, got " + std::to_string(values.size()));
  }
  if (!(iqr_factor > 0.0)) throw Error(Errc::InvalidConfig, "iqr_factor must be positive");

  std::vector<bool> keep(values.size(), true);
  OutlierResult out;
  bool first = true;
  while (true) {
    std::vector<double> sorted;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (keep[i]) sorted.push_back(values[i]);
    }
    std::sort(sorted.begin(), sorted.end());
    const double q1 = order_statistic_quantile(sorted, 0.25);
    const double q3 = order_statistic_quantile(sorted, 0.75);
    const double iqr = q3 - q1;
    const double lower = q1 - iqr_factor * iqr;
    const double upper = q3 + iqr_factor * iqr;
    out.report.lower_fence = first ? lower : std::max(out.report.lower_fence, lower);
    out.report.upper_fence = first ? upper : std::min(out.report.upper_fence, upper);
    first = false;

    std::size_t flagged = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (keep[i] && (values[i] < lower || values[i] > upper)) {
        keep[i] = false;
        ++flagged;
      }
    }
    if (flagged == 0 || sorted.size() - flagged < 4) break;
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (keep[i]) {
      out.cleaned.push_back(values[i]);
    } else {
      out.report.removed_indices.push_back(i);
    }
  }
  return out;
}

}  // namespace loracampus
