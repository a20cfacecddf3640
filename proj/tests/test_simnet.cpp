#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>
#include <sstream>

#include "loracampus/simnet.hpp"

namespace lc = loracampus;

namespace {

std::string lora_text(const lc::SyntheticDataset& ds) {
  std::ostringstream out;
  lc::write_lora_csv(out, ds.packets);
  return out.str();
}

std::string sensor_text(const lc::SyntheticDataset& ds) {
  std::ostringstream out;
  lc::write_sensor_csv(out, ds.readings);
  return out.str();
}

lc::SimConfig small_config() {
  lc::SimConfig cfg;
  cfg.n_devices = 10;
  cfg.start = lc::parse_timestamp("2020.02.01", "00.00.00.000");
  cfg.end = lc::parse_timestamp("2020.02.03", "00.00.00.000");
  cfg.drop_prob = 0.1;
  cfg.occupancy_rooms = 2;
  cfg.seed = 7;
  return cfg;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("loracampus_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Apportionment, DefaultMixOverTenDevices) {
  // Exact integer oracle: quota_i = 10*w_i/462 as quotient + remainder.
  const std::vector<long> w{326, 119, 17};
  const long total = 462, seats = 10;
  std::vector<long> floor_q, rem;
  for (long wi : w) {
    floor_q.push_back(seats * wi / total);
    rem.push_back(seats * wi % total);
  }
  long left = seats - std::accumulate(floor_q.begin(), floor_q.end(), 0L);
  std::vector<std::size_t> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rem[a] > rem[b]; });
  for (std::size_t i = 0; i < static_cast<std::size_t>(left); ++i) ++floor_q[order[i]];
  EXPECT_EQ(floor_q, (std::vector<long>{7, 3, 0}));

  const auto seats_impl = lc::largest_remainder({326, 119, 17}, 10);
  EXPECT_EQ(seats_impl, (std::vector<std::size_t>{7, 3, 0}));

  lc::SimConfig cfg = small_config();
  const auto ds = lc::generate(cfg);
  std::array<int, 3> kinds{};
  for (const auto& d : ds.devices) ++kinds[static_cast<std::size_t>(d.kind)];
  EXPECT_EQ(kinds, (std::array<int, 3>{7, 3, 0}));
}

TEST(Generate, NoLossTilesGrid) {
  auto cfg = small_config();
  cfg.drop_prob = 0.0;
  const auto ds = lc::generate(cfg);
  for (const auto& [dev, mask] : ds.truth_mask) EXPECT_TRUE(mask.empty());
  EXPECT_EQ(ds.packets.size(), cfg.n_devices * cfg.slot_count());
  EXPECT_EQ(ds.readings.size(), ds.packets.size());
}

TEST(Generate, DeterministicBytes) {
  const auto a = lc::generate(small_config());
  const auto b = lc::generate(small_config());
  EXPECT_EQ(lora_text(a), lora_text(b));
  EXPECT_EQ(sensor_text(a), sensor_text(b));
  EXPECT_EQ(lc::truth_to_json(a).dump(), lc::truth_to_json(b).dump());
  auto other = small_config();
  other.seed = 8;
  EXPECT_NE(lora_text(lc::generate(other)), lora_text(a));
}

TEST(Generate, ReadingsMatchDeviceKinds) {
  const auto ds = lc::generate(small_config());
  std::map<lc::DeviceId, lc::DeviceKind> kind;
  for (const auto& d : ds.devices) kind[d.id] = d.kind;
  for (const auto& r : ds.readings) EXPECT_EQ(lc::kind_of(r.present_fields()), kind.at(r.device));
}

TEST(Generate, PacketsAndMaskTileGridAndFcntIsContiguous) {
  const auto cfg = small_config();
  const auto ds = lc::generate(cfg);
  const auto n = cfg.slot_count();
  std::map<lc::DeviceId, std::vector<const lc::LoraPacketMeta*>> by_dev;
  for (const auto& p : ds.packets) by_dev[p.device()].push_back(&p);
  for (const auto& d : ds.devices) {
    const auto& pkts = by_dev[d.id];
    const auto& mask = ds.truth_mask.at(d.id);
    std::set<std::int64_t> seen;
    for (const auto* p : pkts) seen.insert(p->ts().epoch_millis);
    for (auto ts : mask) EXPECT_TRUE(seen.insert(ts.epoch_millis).second) << "slot both sent and dropped";
    ASSERT_EQ(seen.size(), n);
    // brute force: fcnt of slot s is (f0 + s) mod 65536
    const auto f0 = pkts.front()->fcnt();
    for (const auto* p : pkts) {
      const auto s = (p->ts() - cfg.start).count() / cfg.cadence().count();
      EXPECT_EQ(p->fcnt(), (f0 + s) % 65536);
    }
    EXPECT_EQ(pkts.front()->ts(), cfg.start);
  }
}

TEST(Generate, DropRateWithinBinomialBound) {
  lc::SimConfig cfg;
  cfg.n_devices = 4;
  cfg.drop_prob = 0.2;
  cfg.start = lc::parse_timestamp("2020.02.01", "00.00.00.000");
  cfg.end = lc::parse_timestamp("2020.03.01", "00.00.00.000");
  const auto ds = lc::generate(cfg);
  const double slots = static_cast<double>(cfg.n_devices * (cfg.slot_count() - 2));  // first/last pinned
  ASSERT_GE(slots, 1e4);
  double dropped = 0;
  for (const auto& [dev, mask] : ds.truth_mask) dropped += static_cast<double>(mask.size());
  const double sigma = std::sqrt(slots * cfg.drop_prob * (1 - cfg.drop_prob));
  EXPECT_NEAR(dropped, slots * cfg.drop_prob, 3 * sigma);
}

TEST(Generate, PlantedOccupancyRecoverableWithoutNoise) {
  auto cfg = small_config();
  cfg.co2_noise_sigma = 0.0;
  cfg.drop_prob = 0.0;
  const auto ds = lc::generate(cfg);
  ASSERT_EQ(ds.occupancy_truth.size(), 2u);
  std::map<std::pair<lc::DeviceId, std::int64_t>, double> co2;
  for (const auto& r : ds.readings) co2[{r.device, r.ts.epoch_millis}] = *r.get(lc::Field::Co2);
  std::size_t correct = 0, total = 0;
  std::set<int> labels;
  for (const auto& [dev, occ] : ds.occupancy_truth) {
    for (const auto& [ts, people] : occ) {
      const double v = co2.at({dev, ts.epoch_millis});
      const int predicted = static_cast<int>(std::lround((v - 420.0) / 40.0));
      correct += predicted == people;
      ++total;
      labels.insert(people);
    }
  }
  EXPECT_EQ(correct, total);
  EXPECT_GE(*labels.begin(), 0);
  EXPECT_LT(*labels.rbegin(), cfg.max_occupancy);
}

TEST(Generate, InvalidConfigs) {
  auto cfg = small_config();
  cfg.end = cfg.start;
  EXPECT_THROW(lc::generate(cfg), lc::Error);
  cfg = small_config();
  cfg.kind_mix = {0, 0, 0};
  EXPECT_THROW(lc::generate(cfg), lc::Error);
  cfg = small_config();
  cfg.drop_prob = 1.0;
  EXPECT_THROW(lc::generate(cfg), lc::Error);
  cfg = small_config();
  cfg.occupancy_rooms = 8;
  try {
    lc::generate(cfg);
    FAIL();
  } catch (const lc::Error& e) {
    EXPECT_EQ(e.code(), lc::Errc::InvalidConfig);
  }
}

TEST(WriteDataset, EmptyDataset) {
  const auto dir = temp_dir("empty");
  const auto files = lc::write_dataset(lc::SyntheticDataset{}, dir);
  EXPECT_EQ(lc::io::read_file(files.lora), std::string(lc::kLoraHeader) + "\n");
  EXPECT_EQ(lc::io::read_file(files.sensors), std::string(lc::kSensorHeader) + "\n");
  const auto truth = nlohmann::json::parse(lc::io::read_file(files.truth));
  EXPECT_TRUE(truth.at("masks").empty());
  EXPECT_TRUE(truth.at("occupancy").empty());
}

TEST(WriteDataset, OneDeviceFourSlots) {
  lc::SimConfig cfg;
  cfg.n_devices = 1;
  cfg.start = lc::parse_timestamp("2020.02.01", "00.00.00.000");
  cfg.end = lc::parse_timestamp("2020.02.01", "01.00.00.000");
  const auto ds = lc::generate(cfg);
  const auto files = lc::write_dataset(ds, temp_dir("four"));
  const auto lora = lc::parse_lora_file(files.lora.string());
  const auto sensors = lc::parse_sensor_file(files.sensors.string());
  EXPECT_EQ(lora.records.size(), 4u);
  EXPECT_EQ(sensors.records.size(), 4u);
}

TEST(WriteDataset, RoundTripZeroRejectionsAndBitExact) {
  auto cfg = small_config();
  cfg.n_devices = 20;
  cfg.kind_mix = {1, 1, 1};
  const auto ds = lc::generate(cfg);
  const auto files = lc::write_dataset(ds, temp_dir("roundtrip"));
  const auto lora = lc::parse_lora_file(files.lora.string());
  const auto sensors = lc::parse_sensor_file(files.sensors.string());
  EXPECT_EQ(lora.report.rows_rejected, 0u);
  EXPECT_EQ(sensors.report.rows_rejected, 0u);
  std::ostringstream l2, s2;
  lc::write_lora_csv(l2, lora.records);
  lc::write_sensor_csv(s2, sensors.records);
  EXPECT_EQ(l2.str(), lc::io::read_file(files.lora));
  EXPECT_EQ(s2.str(), lc::io::read_file(files.sensors));

  const auto truth = lc::parse_truth(lc::io::read_file(files.truth));
  EXPECT_EQ(truth.masks, ds.truth_mask);
  EXPECT_EQ(truth.occupancy, ds.occupancy_truth);
}
