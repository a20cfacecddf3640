#pragma once

// Synthetic campus generator. Produces sensor readings and LoRa metadata in
// the dataset schemas, with i.i.d. packet loss and ground truth for every
// dropped slot and every planted occupancy label.
//
// Conventions of the generated traces:
//  * every device transmits once per cadence slot at the exact slot instant;
//  * a dropped transmission still consumes a frame-counter value;
//  * the first and last transmission of each device are always delivered, so
//    every lost slot lies between two received packets;
//  * occupancy rooms are the first `occupancy_rooms` CO2 devices, and their
//    head count takes values 0 .. max_occupancy-1.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "loracampus/core_model.hpp"
#include "loracampus/error.hpp"
#include "loracampus/ingest.hpp"
#include "loracampus/io.hpp"
#include "loracampus/rng.hpp"

namespace loracampus {

struct SimConfig {
  std::size_t n_devices = 10;
  std::array<double, 3> kind_mix{326.0, 119.0, 17.0};  // co2 : sound : moisture
  Timestamp start = parse_timestamp("2020.02.01", "00.00.00.000");
  Timestamp end = parse_timestamp("2020.02.08", "00.00.00.000");
  std::int64_t cadence_minutes = 15;
  double drop_prob = 0.0;
  std::uint64_t seed = 42;
  std::size_t occupancy_rooms = 0;
  int max_occupancy = 12;
  double co2_noise_sigma = 10.0;  // ppm, planted occupancy model

  Millis cadence() const { return Millis{cadence_minutes * 60'000}; }

  std::size_t slot_count() const {
    const auto span = (end - start).count();
    const auto step = cadence().count();
    return static_cast<std::size_t>((span + step - 1) / step);
  }

  void validate() const {
    auto fail = [](const std::string& why) { throw Error(Errc::InvalidConfig, why); };
    if (!(start < end)) fail("start must precede end");
    if (cadence_minutes <= 0) fail("cadence_minutes must be positive");
    if (!(drop_prob >= 0.0 && drop_prob < 1.0)) fail("drop_prob must lie in [0,1)");
    if (max_occupancy < 1) fail("max_occupancy must be positive");
    if (!(co2_noise_sigma >= 0.0)) fail("co2 noise sigma must be nonnegative");
    double total = 0.0;
    for (double w : kind_mix) {
      if (!(w >= 0.0)) fail("kind_mix weights must be nonnegative");
      total += w;
    }
    if (!(total > 0.0)) fail("kind_mix weights must not all be zero");
  }
};

struct SyntheticDataset {
  std::vector<DeviceInfo> devices;
  std::vector<SensorReading> readings;  // ordered by (time, device order)
  std::vector<LoraPacketMeta> packets;  // same order as readings
  std::map<DeviceId, std::vector<Timestamp>> truth_mask;
  std::map<DeviceId, std::vector<std::pair<Timestamp, int>>> occupancy_truth;
};

// Largest-remainder (Hamilton) apportionment of `total` seats; ties in the
// fractional part go to the lower index.
inline std::vector<std::size_t> largest_remainder(const std::vector<double>& weights, std::size_t total) {
  double sum = 0.0;
  for (double w : weights) sum += w;
  std::vector<std::size_t> seats(weights.size(), 0);
  if (weights.empty() || sum <= 0.0) return seats;
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double quota = weights[i] / sum * static_cast<double>(total);
    // Guard against quotas like 6.9999999999 that are integral in exact arithmetic.
    const double floored = std::floor(quota + 1e-9);
    seats[i] = static_cast<std::size_t>(floored);
    assigned += seats[i];
    remainders.emplace_back(quota - floored, i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < total && r < remainders.size(); ++r, ++assigned) ++seats[remainders[r].second];
  return seats;
}

namespace detail {

inline double round_to(double v, double step) { return std::round(v / step) * step; }

// Weight of head count n; mildly favours small meetings.
inline std::vector<double> occupancy_weights(int max_occupancy) {
  std::vector<double> w(static_cast<std::size_t>(max_occupancy));
  for (int n = 0; n < max_occupancy; ++n) w[static_cast<std::size_t>(n)] = 1.0 / (1.0 + n / 4.0);
  return w;
}

struct DeviceTrace {
  std::vector<std::optional<SensorReading>> readings;  // per slot; nullopt when dropped
  std::vector<LoraFields> packets;                     // per slot, including dropped ones
  std::vector<int> people;                             // per slot; empty unless a room
};

inline void fill_values(SensorReading& r, DeviceKind kind, bool room, int people, double co2_sigma, double daily,
                        double weekly, double battery, Rng& rng) {
  const double day_pos = std::max(0.0, daily);
  switch (kind) {
    case DeviceKind::Co2:
      if (room) {
        const bool occupied = people > 0;
        r.set(Field::Co2, round_to(420.0 + 40.0 * people + rng.normal(0.0, co2_sigma), 0.1));
        r.set(Field::Temperature, round_to(21.0 + 0.15 * people + rng.normal(0.0, 0.2), 0.01));
        r.set(Field::Humidity, round_to(30.0 + 0.6 * people + rng.normal(0.0, 0.5), 0.1));
        r.set(Field::Light, occupied ? round_to(350.0 + rng.normal(0.0, 25.0), 1.0)
                                     : round_to(std::max(0.0, 5.0 + rng.normal(0.0, 3.0)), 1.0));
        r.set(Field::Motion, occupied ? std::max(0.0, std::round(people + rng.normal(0.0, 1.0))) : 0.0);
      } else {
        r.set(Field::Co2, round_to(450.0 + 80.0 * day_pos + rng.normal(0.0, 10.0), 0.1));
        r.set(Field::Temperature, round_to(21.0 + 1.5 * daily + rng.normal(0.0, 0.3), 0.01));
        r.set(Field::Humidity, round_to(30.0 - 3.0 * daily + rng.normal(0.0, 1.0), 0.1));
        r.set(Field::Light, round_to(std::max(0.0, 400.0 * day_pos + rng.normal(0.0, 20.0)), 1.0));
        r.set(Field::Motion, std::max(0.0, std::round(3.0 * day_pos + rng.normal(0.0, 1.0))));
      }
      break;
    case DeviceKind::Sound:
      r.set(Field::SoundAvg, round_to(45.0 + 2.0 * daily + rng.normal(0.0, 1.0), 0.1));
      r.set(Field::SoundPeak, round_to(70.0 + 5.0 * daily + rng.normal(0.0, 3.0), 0.1));
      r.set(Field::Motion, std::max(0.0, std::round(3.0 * day_pos + rng.normal(0.0, 1.0))));
      r.set(Field::Light, round_to(std::max(0.0, 400.0 * day_pos + rng.normal(0.0, 20.0)), 1.0));
      r.set(Field::Temperature, round_to(21.0 + 1.5 * daily + rng.normal(0.0, 0.3), 0.01));
      r.set(Field::Humidity, round_to(30.0 - 3.0 * daily + rng.normal(0.0, 1.0), 0.1));
      break;
    case DeviceKind::Moisture:
      r.set(Field::Pressure, round_to(1013.0 + rng.normal(0.0, 0.3), 0.1));
      r.set(Field::Moisture, round_to(std::clamp(25.0 + 12.0 * weekly + rng.normal(0.0, 1.0), 5.0, 45.0), 0.1));
      r.set(Field::Temperature, round_to(12.0 + 6.0 * daily + rng.normal(0.0, 0.5), 0.01));
      r.set(Field::Humidity, round_to(60.0 - 10.0 * daily + rng.normal(0.0, 2.0), 0.1));
      break;
  }
  r.set(Field::Battery, round_to(battery + rng.normal(0.0, 0.005), 0.001));
}

inline DeviceTrace simulate_device(const SimConfig& cfg, const DeviceInfo& dev, bool room, std::size_t index) {
  Rng rng(derive_seed(cfg.seed, index));
  const std::size_t n = cfg.slot_count();
  DeviceTrace trace;
  trace.readings.resize(n);
  trace.packets.resize(n);

  if (room) {
    const auto weights = occupancy_weights(cfg.max_occupancy);
    trace.people.resize(n);
    std::size_t slot = 0;
    while (slot < n) {
      const auto duration = static_cast<std::size_t>(rng.uniform_int(1, 8));
      const int people = static_cast<int>(rng.weighted(weights));
      for (std::size_t k = 0; k < duration && slot < n; ++k, ++slot) trace.people[slot] = people;
    }
  }

  std::int64_t fcnt = rng.uniform_int(0, 65535);
  const double battery0 = 3.6 + rng.uniform(0.0, 0.1);
  for (std::size_t s = 0; s < n; ++s) {
    const Timestamp ts = cfg.start + cfg.cadence() * static_cast<std::int64_t>(s);
    const double tod = day_fraction(ts);
    const double daily = std::sin(2.0 * std::numbers::pi * (tod - 0.25));
    const double days = static_cast<double>((ts - cfg.start).count()) / 86'400'000.0;
    const double weekly = std::sin(2.0 * std::numbers::pi * days / 7.0);

    LoraFields f;
    f.ts = ts;
    f.device = dev.id;
    f.channel = rng.uniform_int(LoraRanges::channel_min, LoraRanges::channel_max);
    f.lsnr = static_cast<double>(rng.uniform_int(-225, 100)) / 10.0;
    f.port = rng.uniform_int(LoraRanges::port_min, LoraRanges::port_max);
    f.rfch = rng.uniform_int(LoraRanges::rfch_min, LoraRanges::rfch_max);
    f.rssi = static_cast<double>(rng.uniform_int(-120, -53));
    f.fcnt = fcnt;
    fcnt = (fcnt + 1) % 65536;
    trace.packets[s] = f;

    SensorReading r;
    r.ts = ts;
    r.device = dev.id;
    const int people = room ? trace.people[s] : 0;
    fill_values(r, dev.kind, room, people, cfg.co2_noise_sigma, daily, weekly, battery0 - 1e-5 * static_cast<double>(s),
                rng);

    const bool pinned = (s == 0 || s + 1 == n);
    const bool dropped = rng.bernoulli(cfg.drop_prob) && !pinned;
    if (!dropped) trace.readings[s] = std::move(r);
  }
  return trace;
}

}  // namespace detail

inline SyntheticDataset generate(const SimConfig& cfg) {
  cfg.validate();
  const auto counts = largest_remainder({cfg.kind_mix[0], cfg.kind_mix[1], cfg.kind_mix[2]}, cfg.n_devices);
  if (cfg.occupancy_rooms > counts[0]) {
    throw Error(Errc::InvalidConfig, "occupancy_rooms (" + std::to_string(cfg.occupancy_rooms) +
                                         ") exceeds the number of CO2 devices (" + std::to_string(counts[0]) + ")");
  }

  SyntheticDataset ds;
  std::set<std::uint64_t> used;
  const std::array<DeviceKind, 3> kinds{DeviceKind::Co2, DeviceKind::Sound, DeviceKind::Moisture};
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i < counts[k]; ++i) {
      std::uint64_t eui = splitmix64(cfg.seed ^ (0x5c0ffee000000000ULL + ds.devices.size()));
      while (!used.insert(eui).second) eui = splitmix64(eui);
      ds.devices.push_back({DeviceId::from_u64(eui), kinds[k], std::nullopt, std::nullopt});
    }
  }

  const std::size_t n = cfg.slot_count();
  std::vector<detail::DeviceTrace> traces;
  traces.reserve(ds.devices.size());
  for (std::size_t d = 0; d < ds.devices.size(); ++d) {
    const bool room = ds.devices[d].kind == DeviceKind::Co2 && d < cfg.occupancy_rooms;
    traces.push_back(detail::simulate_device(cfg, ds.devices[d], room, d));
  }

  for (std::size_t d = 0; d < ds.devices.size(); ++d) {
    auto& mask = ds.truth_mask[ds.devices[d].id];
    for (std::size_t s = 0; s < n; ++s) {
      if (!traces[d].readings[s]) mask.push_back(traces[d].packets[s].ts);
    }
    if (!traces[d].people.empty()) {
      auto& occ = ds.occupancy_truth[ds.devices[d].id];
      for (std::size_t s = 0; s < n; ++s) occ.emplace_back(traces[d].packets[s].ts, traces[d].people[s]);
    }
  }
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t d = 0; d < ds.devices.size(); ++d) {
      if (traces[d].readings[s]) {
        ds.readings.push_back(*traces[d].readings[s]);
        ds.packets.push_back(LoraPacketMeta::make(traces[d].packets[s]));
      }
    }
  }
  return ds;
}

inline nlohmann::json truth_to_json(const SyntheticDataset& ds) {
  nlohmann::json masks = nlohmann::json::object();
  for (const auto& [dev, slots] : ds.truth_mask) {
    auto arr = nlohmann::json::array();
    for (auto ts : slots) arr.push_back(format_iso8601(ts));
    masks[dev.str()] = std::move(arr);
  }
  nlohmann::json occupancy = nlohmann::json::object();
  for (const auto& [dev, labels] : ds.occupancy_truth) {
    auto arr = nlohmann::json::array();
    for (const auto& [ts, people] : labels) arr.push_back(nlohmann::json::array({format_iso8601(ts), people}));
    occupancy[dev.str()] = std::move(arr);
  }
  return {{"masks", masks}, {"occupancy", occupancy}};
}

struct Truth {
  std::map<DeviceId, std::vector<Timestamp>> masks;
  std::map<DeviceId, std::vector<std::pair<Timestamp, int>>> occupancy;
};

inline Truth parse_truth(const std::string& content) {
  Truth t;
  try {
    const auto j = nlohmann::json::parse(content);
    for (const auto& [dev, arr] : j.at("masks").items()) {
      auto& slots = t.masks[DeviceId::parse(dev)];
      for (const auto& s : arr) slots.push_back(parse_iso8601(s.get<std::string>()));
    }
    for (const auto& [dev, arr] : j.at("occupancy").items()) {
      auto& labels = t.occupancy[DeviceId::parse(dev)];
      for (const auto& pair : arr) labels.emplace_back(parse_iso8601(pair.at(0).get<std::string>()), pair.at(1).get<int>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::FormatError, std::string("truth.json: ") + e.what());
  }
  return t;
}

struct DatasetFiles {
  std::filesystem::path lora;
  std::filesystem::path sensors;
  std::filesystem::path truth;
};

inline DatasetFiles write_dataset(const SyntheticDataset& ds, const std::filesystem::path& dir) {
  DatasetFiles files{dir / "lora.csv", dir / "sensors.csv", dir / "truth.json"};
  std::ostringstream lora;
  write_lora_csv(lora, ds.packets);
  std::ostringstream sensors;
  write_sensor_csv(sensors, ds.readings);
  io::write_file_atomic(files.lora, lora.str());
  io::write_file_atomic(files.sensors, sensors.str());
  io::write_file_atomic(files.truth, truth_to_json(ds).dump(1) + "\n");
  return files;
}

}  // namespace loracampus
