#pragma once

// Shared domain types for the campus LoRaWAN telemetry: timestamps in the
// dataset's dotted text format, device identifiers, the three device kinds and
// the two record types (sensor readings and LoRa packet metadata).
//
// Timestamps carry no timezone in the source data and are interpreted as UTC.
// The source description says quantities a device monitors "have a nan reading";
// this is read as quantities the device does NOT monitor, which matches the
// device taxonomy and the published snapshots.

#include <array>
#include <chrono>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "loracampus/error.hpp"
#include "loracampus/text.hpp"

namespace loracampus {

using Millis = std::chrono::milliseconds;

inline constexpr Millis kDefaultCadence{15 * 60 * 1000};

struct Timestamp {
  std::int64_t epoch_millis = 0;

  friend constexpr auto operator<=>(const Timestamp&, const Timestamp&) = default;

  constexpr Timestamp operator+(Millis d) const { return {epoch_millis + d.count()}; }
  constexpr Timestamp operator-(Millis d) const { return {epoch_millis - d.count()}; }
  constexpr Millis operator-(Timestamp other) const { return Millis{epoch_millis - other.epoch_millis}; }
};

namespace detail {

inline bool all_digits(std::string_view s) {
  for (char c : s) {
    if (c < '0' || c > '9') return false;
  }
  return true;
}

// Matches `d..d.d..d...` where `widths` gives the digit count of each group.
template <std::size_t N>
inline std::optional<std::array<int, N>> dotted_groups(std::string_view s,
                                                       const std::array<std::size_t, N>& widths) {
  std::array<int, N> out{};
  std::size_t pos = 0;
  for (std::size_t g = 0; g < N; ++g) {
    if (g > 0) {
      if (pos >= s.size() || s[pos] != '.') return std::nullopt;
      ++pos;
    }
    if (pos + widths[g] > s.size()) return std::nullopt;
    const auto part = s.substr(pos, widths[g]);
    if (!all_digits(part)) return std::nullopt;
    int v = 0;
    for (char c : part) v = v * 10 + (c - '0');
    out[g] = v;
    pos += widths[g];
  }
  if (pos != s.size()) return std::nullopt;
  return out;
}

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace detail

inline Timestamp parse_timestamp(std::string_view date_str, std::string_view time_str) {
  using namespace std::chrono;
  const auto date = detail::dotted_groups<3>(date_str, {4, 2, 2});
  const auto time = detail::dotted_groups<4>(time_str, {2, 2, 2, 3});
  if (!date || !time) {
    throw Error(Errc::MalformedTimestamp,
                "expected 'yyyy.mm.dd hh.mm.ss.mmm', got '" + std::string(date_str) + " " +
                    std::string(time_str) + "'");
  }
  const auto [yy, mo, dd] = *date;
  const auto [hh, mi, ss, ms] = *time;
  const year_month_day ymd{year{yy}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(dd)}};
  if (!ymd.ok() || hh > 23 || mi > 59 || ss > 59) {
    throw Error(Errc::InvalidCalendar,
                "no such instant: '" + std::string(date_str) + " " + std::string(time_str) + "'");
  }
  const auto day_ms = duration_cast<milliseconds>(sys_days{ymd}.time_since_epoch()).count();
  return {day_ms + ((hh * 60LL + mi) * 60LL + ss) * 1000LL + ms};
}

// Accepts the combined `yyyy.mm.dd hh.mm.ss.mmm` column used by both CSVs.
inline Timestamp parse_timestamp(std::string_view combined) {
  const auto space = combined.find(' ');
  if (space == std::string_view::npos) {
    throw Error(Errc::MalformedTimestamp, "missing date/time separator in '" + std::string(combined) + "'");
  }
  return parse_timestamp(combined.substr(0, space), combined.substr(space + 1));
}

struct CivilTime {
  int year, month, day, hour, minute, second, millis;
};

inline CivilTime to_civil(Timestamp ts) {
  using namespace std::chrono;
  const std::int64_t ms_per_day = 86'400'000;
  const std::int64_t days = detail::floor_div(ts.epoch_millis, ms_per_day);
  std::int64_t rem = ts.epoch_millis - days * ms_per_day;
  const year_month_day ymd{sys_days{std::chrono::days{days}}};
  CivilTime c{};
  c.year = static_cast<int>(ymd.year());
  c.month = static_cast<int>(static_cast<unsigned>(ymd.month()));
  c.day = static_cast<int>(static_cast<unsigned>(ymd.day()));
  c.millis = static_cast<int>(rem % 1000);
  rem /= 1000;
  c.second = static_cast<int>(rem % 60);
  rem /= 60;
  c.minute = static_cast<int>(rem % 60);
  c.hour = static_cast<int>(rem / 60);
  return c;
}

inline std::pair<std::string, std::string> format_timestamp(Timestamp ts) {
  const auto c = to_civil(ts);
  char date[32];
  char time[32];
  std::snprintf(date, sizeof(date), "%04d.%02d.%02d", c.year, c.month, c.day);
  std::snprintf(time, sizeof(time), "%02d.%02d.%02d.%03d", c.hour, c.minute, c.second, c.millis);
  return {date, time};
}

inline std::string format_timestamp_combined(Timestamp ts) {
  auto [d, t] = format_timestamp(ts);
  return d + " " + t;
}

// `2020-02-01T13:45:07.123Z`, used by truth.json and the gap export.
inline std::string format_iso8601(Timestamp ts) {
  const auto c = to_civil(ts);
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", c.year, c.month, c.day, c.hour,
                c.minute, c.second, c.millis);
  return buf;
}

inline Timestamp parse_iso8601(std::string_view s) {
  // yyyy-mm-ddThh:mm:ss.mmmZ
  if (s.size() != 24 || s[4] != '-' || s[7] != '-' || s[10] != 'T' || s[13] != ':' || s[16] != ':' ||
      s[19] != '.' || s[23] != 'Z') {
    throw Error(Errc::MalformedTimestamp, "expected ISO-8601 'yyyy-mm-ddThh:mm:ss.mmmZ', got '" +
                                              std::string(s) + "'");
  }
  std::string date(s.substr(0, 10));
  std::string time(s.substr(11, 12));
  date[4] = date[7] = '.';
  time[2] = time[5] = '.';
  return parse_timestamp(date, time);
}

// Time of day in [0, 1), used for cyclic features.
inline double day_fraction(Timestamp ts) {
  const std::int64_t ms_per_day = 86'400'000;
  const std::int64_t rem = ts.epoch_millis - detail::floor_div(ts.epoch_millis, ms_per_day) * ms_per_day;
  return static_cast<double>(rem) / static_cast<double>(ms_per_day);
}

/// 64-bit extended unique identifier, stored lowercased so comparison is
/// case-insensitive.
class DeviceId {
 public:
  DeviceId() = default;

  static DeviceId parse(std::string_view s) {
    if (s.size() != 16) {
      throw Error(Errc::InvalidDeviceId, "DevEUI must be 16 hex characters, got '" + std::string(s) + "'");
    }
    DeviceId id;
    id.hex_ = text::to_lower(s);
    for (char c : id.hex_) {
      const bool hex = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
      if (!hex) throw Error(Errc::InvalidDeviceId, "DevEUI has non-hex character: '" + std::string(s) + "'");
    }
    return id;
  }

  static DeviceId from_u64(std::uint64_t v) { return parse(text::hex64(v)); }

  const std::string& str() const noexcept { return hex_; }

  friend auto operator<=>(const DeviceId&, const DeviceId&) = default;

 private:
  std::string hex_ = "0000000000000000";
};

enum class DeviceKind { Co2, Sound, Moisture };

inline constexpr std::string_view to_string(DeviceKind k) {
  switch (k) {
    case DeviceKind::Co2: return "co2";
    case DeviceKind::Sound: return "sound";
    case DeviceKind::Moisture: return "moisture";
  }
  return "?";
}

// Column order of the sensor CSV after `time,deveui`.
enum class Field : std::size_t {
  Co2,
  Temperature,
  Humidity,
  Light,
  Motion,
  SoundAvg,
  SoundPeak,
  Pressure,
  Moisture,
  Battery,
};

inline constexpr std::size_t kFieldCount = 10;

inline constexpr std::array<std::string_view, kFieldCount> kFieldNames = {
    "co2", "temperature", "humidity", "light", "motion", "sound_avg", "sound_peak", "pressure", "moisture", "battery"};

inline constexpr std::string_view to_string(Field f) { return kFieldNames[static_cast<std::size_t>(f)]; }

inline constexpr std::array<Field, kFieldCount> kAllFields = {
    Field::Co2,      Field::Temperature, Field::Humidity, Field::Light,    Field::Motion,
    Field::SoundAvg, Field::SoundPeak,   Field::Pressure, Field::Moisture, Field::Battery};

inline std::optional<Field> field_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kFieldCount; ++i) {
    if (kFieldNames[i] == name) return static_cast<Field>(i);
  }
  return std::nullopt;
}

inline constexpr std::array<Field, 3> kSharedFields = {Field::Temperature, Field::Humidity, Field::Battery};

// Kind-specific measurements; the shared fields are carried by every kind.
inline std::vector<Field> signature(DeviceKind kind) {
  switch (kind) {
    case DeviceKind::Co2: return {Field::Co2, Field::Motion, Field::Light};
    case DeviceKind::Sound: return {Field::SoundAvg, Field::SoundPeak, Field::Motion, Field::Light};
    case DeviceKind::Moisture: return {Field::Pressure, Field::Moisture};
  }
  return {};
}

inline std::vector<Field> fields_of(DeviceKind kind) {
  auto out = signature(kind);
  out.insert(out.end(), kSharedFields.begin(), kSharedFields.end());
  return out;
}

inline bool is_shared(Field f) {
  for (auto s : kSharedFields) {
    if (s == f) return true;
  }
  return false;
}

// A field set identifies a kind when its kind-specific part is a non-empty
// subset of exactly one signature.
inline DeviceKind kind_of(const std::set<Field>& present) {
  std::vector<Field> specific;
  for (auto f : present) {
    if (!is_shared(f)) specific.push_back(f);
  }
  std::optional<DeviceKind> match;
  int matches = 0;
  if (!specific.empty()) {
    for (auto kind : {DeviceKind::Co2, DeviceKind::Sound, DeviceKind::Moisture}) {
      const auto sig = signature(kind);
      bool subset = true;
      for (auto f : specific) {
        bool found = false;
        for (auto s : sig) found = found || (s == f);
        subset = subset && found;
      }
      if (subset) {
        match = kind;
        ++matches;
      }
    }
  }
  if (matches != 1) {
    std::string names;
    for (auto f : present) names += (names.empty() ? "" : ",") + std::string(to_string(f));
    throw Error(Errc::AmbiguousKind, "field set {" + names + "} matches " + std::to_string(matches) + " device kinds");
  }
  return *match;
}

struct Coord {
  double x = 0.0;
  double y = 0.0;
};

struct DeviceInfo {
  DeviceId id;
  DeviceKind kind = DeviceKind::Co2;
  std::optional<Coord> coord;
  std::optional<double> height;  // metadata only
};

struct GatewayInfo {
  std::optional<Coord> coord;
};

struct SensorReading {
  Timestamp ts;
  DeviceId device;
  std::array<std::optional<double>, kFieldCount> values{};

  std::optional<double> get(Field f) const { return values[static_cast<std::size_t>(f)]; }
  void set(Field f, std::optional<double> v) { values[static_cast<std::size_t>(f)] = v; }

  bool has_any() const {
    for (const auto& v : values) {
      if (v) return true;
    }
    return false;
  }

  std::set<Field> present_fields() const {
    std::set<Field> out;
    for (std::size_t i = 0; i < kFieldCount; ++i) {
      if (values[i]) out.insert(static_cast<Field>(i));
    }
    return out;
  }
};

// Valid ranges of the LoRa metadata columns.
struct LoraRanges {
  static constexpr int channel_min = 0, channel_max = 6;
  static constexpr double lsnr_min = -22.5, lsnr_max = 10.0;
  static constexpr int port_min = 1, port_max = 12;
  static constexpr int rfch_min = 0, rfch_max = 1;
  static constexpr double rssi_min = -120.0, rssi_max = -53.0;
  static constexpr std::int64_t fcnt_min = 0, fcnt_max = 65535;
};

struct LoraFields {
  Timestamp ts;
  DeviceId device;
  std::int64_t channel = 0;
  double lsnr = 0.0;
  std::int64_t port = 1;
  std::int64_t rfch = 0;
  double rssi = -90.0;
  std::int64_t fcnt = 0;
};

// Returns a human-readable reason for the first violated range, if any.
inline std::optional<std::string> range_violation(const LoraFields& f) {
  using R = LoraRanges;
  if (f.channel < R::channel_min || f.channel > R::channel_max) return "channel out of range [0,6]";
  if (!(f.lsnr >= R::lsnr_min && f.lsnr <= R::lsnr_max)) return "lsnr out of range [-22.5,10]";
  if (f.port < R::port_min || f.port > R::port_max) return "port out of range [1,12]";
  if (f.rfch < R::rfch_min || f.rfch > R::rfch_max) return "rfch out of range [0,1]";
  if (!(f.rssi >= R::rssi_min && f.rssi <= R::rssi_max)) return "rssi out of range [-120,-53]";
  if (f.fcnt < R::fcnt_min || f.fcnt > R::fcnt_max) return "fcnt out of range [0,65535]";
  return std::nullopt;
}

/// One row of the LoRa parameters dataset. The public factory enforces the
/// valid ranges; `unchecked` exists for validator tests only.
class LoraPacketMeta {
 public:
  static LoraPacketMeta make(const LoraFields& f) {
    if (auto why = range_violation(f)) throw Error(Errc::OutOfRange, *why);
    return LoraPacketMeta(f);
  }

  static LoraPacketMeta unchecked(const LoraFields& f) { return LoraPacketMeta(f); }

  Timestamp ts() const { return f_.ts; }
  const DeviceId& device() const { return f_.device; }
  std::int64_t channel() const { return f_.channel; }
  double lsnr() const { return f_.lsnr; }
  std::int64_t port() const { return f_.port; }
  std::int64_t rfch() const { return f_.rfch; }
  double rssi() const { return f_.rssi; }
  std::int64_t fcnt() const { return f_.fcnt; }
  const LoraFields& fields() const { return f_; }

 private:
  explicit LoraPacketMeta(const LoraFields& f) : f_(f) {}
  LoraFields f_;
};

}  // namespace loracampus
