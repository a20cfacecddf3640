#pragma once

// Transmission-failure detection. Two independent detectors: one reads the
// 15-minute cadence (empty grid slots), the other reads frame-counter jumps in
// the LoRa metadata. Both emit Gap records over the same slot grid.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "loracampus/core_model.hpp"
#include "loracampus/error.hpp"

namespace loracampus {

// Losses beyond this many consecutive counter values are treated as a counter
// reset or duplicate rather than a real outage (~42 days at 15 minutes).
inline constexpr std::int64_t kFcntPlausibilityCap = 4096;
inline constexpr std::int64_t kFcntModulus = 65536;

struct Warning {
  std::string kind;  // e.g. "SlotCollision", "DuplicateCounter", "CounterAnomaly"
  std::string message;
};

enum class GapSource { Cadence, Fcnt };

inline constexpr std::string_view to_string(GapSource s) { return s == GapSource::Cadence ? "cadence" : "fcnt"; }

struct Gap {
  DeviceId device;
  Timestamp slot_start;
  Timestamp slot_end;  // exclusive: slot_start + missing_count * cadence
  std::int64_t missing_count = 0;
  GapSource source = GapSource::Cadence;

  friend bool operator==(const Gap&, const Gap&) = default;
};

// Timestamps of the slots covered by a gap.
inline std::vector<Timestamp> gap_slots(const Gap& g) {
  std::vector<Timestamp> out;
  if (g.missing_count <= 0) return out;
  const auto step = (g.slot_end - g.slot_start) / g.missing_count;
  for (std::int64_t j = 0; j < g.missing_count; ++j) out.push_back(g.slot_start + step * j);
  return out;
}

/// A device measurement on a uniform grid. `values[i]` belongs to slot
/// `t0 + i*cadence`, unless `slot_map` is non-empty (series with excised
/// cells), in which case it belongs to slot `slot_map[i]`.
struct GriddedSeries {
  DeviceId device;
  Field field = Field::Co2;
  Timestamp t0;
  Millis cadence = kDefaultCadence;
  std::vector<std::optional<double>> values;
  std::vector<std::size_t> slot_map;

  std::size_t size() const { return values.size(); }

  std::size_t slot_of(std::size_t i) const { return slot_map.empty() ? i : slot_map[i]; }

  Timestamp slot_time(std::size_t i) const { return t0 + cadence * static_cast<std::int64_t>(slot_of(i)); }

  std::size_t missing() const {
    return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [](const auto& v) { return !v; }));
  }

  bool complete() const { return missing() == 0; }

  // Plain numbers; only valid on a complete series.
  std::vector<double> dense() const {
    std::vector<double> out;
    out.reserve(values.size());
    for (const auto& v : values) {
      if (!v) throw Error(Errc::InsufficientSupport, "series has missing cells");
      out.push_back(*v);
    }
    return out;
  }
};

namespace detail {

// Index of the nearest epoch-anchored grid slot; an exact half-way instant
// goes to the later slot.
inline std::int64_t nearest_slot(Timestamp ts, Millis cadence) {
  const auto c = cadence.count();
  return floor_div(ts.epoch_millis + c / 2, c);
}

}  // namespace detail

template <typename Record, typename DeviceFn, typename TimeFn>
std::map<DeviceId, std::vector<Record>> group_by_device(const std::vector<Record>& records, DeviceFn device_of,
                                                        TimeFn time_of) {
  std::map<DeviceId, std::vector<Record>> out;
  for (const auto& r : records) out[device_of(r)].push_back(r);
  for (auto& [dev, list] : out) {
    std::stable_sort(list.begin(), list.end(), [&](const Record& a, const Record& b) { return time_of(a) < time_of(b); });
  }
  return out;
}

inline std::map<DeviceId, std::vector<SensorReading>> group_readings(const std::vector<SensorReading>& readings) {
  return group_by_device(readings, [](const SensorReading& r) { return r.device; },
                         [](const SensorReading& r) { return r.ts; });
}

inline std::map<DeviceId, std::vector<LoraPacketMeta>> group_packets(const std::vector<LoraPacketMeta>& packets) {
  return group_by_device(packets, [](const LoraPacketMeta& p) { return p.device(); },
                         [](const LoraPacketMeta& p) { return p.ts(); });
}

/// Snaps one device's readings onto the epoch-anchored grid: each reading
/// goes to the nearest slot (within +-cadence/2), the grid spans the first to
/// the last snapped slot, and slots without a reading (or whose reading lacks
/// `field`) are missing. On a collision the later reading wins.
inline GriddedSeries align_to_grid(const std::vector<SensorReading>& readings, Field field,
                                   Millis cadence = kDefaultCadence, std::vector<Warning>* warnings = nullptr) {
  if (readings.empty()) throw Error(Errc::EmptyInput, "no readings to align");
  if (cadence.count() <= 0) throw Error(Errc::InvalidConfig, "cadence must be positive");
  for (std::size_t i = 1; i < readings.size(); ++i) {
    if (readings[i].device != readings[0].device) {
      throw Error(Errc::MixedDevices, readings[0].device.str() + " vs " + readings[i].device.str());
    }
    if (readings[i].ts < readings[i - 1].ts) throw Error(Errc::NonMonotonicTime, "readings are not sorted by time");
  }
  const auto first = detail::nearest_slot(readings.front().ts, cadence);
  const auto last = detail::nearest_slot(readings.back().ts, cadence);

  GriddedSeries s;
  s.device = readings[0].device;
  s.field = field;
  s.cadence = cadence;
  s.t0 = Timestamp{first * cadence.count()};
  s.values.assign(static_cast<std::size_t>(last - first + 1), std::nullopt);
  std::vector<bool> taken(s.values.size(), false);
  for (const auto& r : readings) {
    const auto idx = static_cast<std::size_t>(detail::nearest_slot(r.ts, cadence) - first);
    if (taken[idx] && warnings) {
      warnings->push_back({"SlotCollision", s.device.str() + " slot " + format_iso8601(s.slot_time(idx)) +
                                                " received more than one reading; keeping the later one"});
    }
    taken[idx] = true;
    s.values[idx] = r.get(field);
  }
  return s;
}

/// Maximal runs of missing slots, one Gap each.
inline std::vector<Gap> detect_gaps_cadence(const GriddedSeries& series) {
  std::vector<Gap> gaps;
  std::size_t i = 0;
  while (i < series.size()) {
    if (series.values[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < series.size() && !series.values[j]) ++j;
    const auto count = static_cast<std::int64_t>(j - i);
    gaps.push_back({series.device, series.slot_time(i), series.slot_time(i) + series.cadence * count, count,
                    GapSource::Cadence});
    i = j;
  }
  return gaps;
}

/// Frame-counter gaps between consecutive packets of one device. For
/// counters a then b, (b - a - 1) mod 65536 transmissions were lost; their
/// instants are spread evenly between the two packets. A repeated counter is
/// reported as DuplicateCounter and a jump above the plausibility cap as
/// CounterAnomaly; neither produces a gap.
inline std::vector<Gap> detect_gaps_fcnt(const std::vector<LoraPacketMeta>& packets, Millis cadence = kDefaultCadence,
                                         std::vector<Warning>* warnings = nullptr,
                                         std::int64_t plausibility_cap = kFcntPlausibilityCap) {
  std::vector<Gap> gaps;
  for (std::size_t i = 1; i < packets.size(); ++i) {
    const auto& a = packets[i - 1];
    const auto& b = packets[i];
    if (a.device() != b.device()) throw Error(Errc::MixedDevices, a.device().str() + " vs " + b.device().str());
    if (b.ts() < a.ts()) {
      throw Error(Errc::NonMonotonicTime, a.device().str() + ": packet at " + format_iso8601(b.ts()) +
                                               " precedes " + format_iso8601(a.ts()));
    }
    const auto missing = ((b.fcnt() - a.fcnt() - 1) % kFcntModulus + kFcntModulus) % kFcntModulus;
    if (missing == 0) continue;
    if (b.fcnt() == a.fcnt()) {
      if (warnings) {
        warnings->push_back({"DuplicateCounter", a.device().str() + " repeats fcnt " + std::to_string(a.fcnt()) +
                                                     " at " + format_iso8601(b.ts())});
      }
      continue;
    }
    if (missing > plausibility_cap) {
      if (warnings) {
        warnings->push_back({"CounterAnomaly", a.device().str() + " fcnt jumps " + std::to_string(a.fcnt()) + " -> " +
                                                   std::to_string(b.fcnt()) + " at " + format_iso8601(b.ts())});
      }
      continue;
    }
    const auto step = (b.ts() - a.ts()) / (missing + 1);
    const auto start = a.ts() + step;
    gaps.push_back({a.device(), start, start + cadence * missing, missing, GapSource::Fcnt});
  }
  return gaps;
}

inline void write_gaps_csv(std::ostream& out, const std::vector<Gap>& gaps) {
  out << "deveui,slot_start,slot_end,missing_count,source\n";
  for (const auto& g : gaps) {
    out << g.device.str() << ',' << format_iso8601(g.slot_start) << ',' << format_iso8601(g.slot_end) << ','
        << g.missing_count << ',' << to_string(g.source) << '\n';
  }
}

}  // namespace loracampus
