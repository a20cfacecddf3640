#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "loracampus/ingest.hpp"

namespace lc = loracampus;

namespace {

// Independent quantile: Hyndman-Fan definition 6, h = (n+1)p on the 1-based
// sorted sample, clamped at both ends.
double hf6_quantile(std::vector<double> xs, double p) {
  std::sort(xs.begin(), xs.end());
  const double h = (static_cast<double>(xs.size()) + 1.0) * p;
  if (h < 1.0) return xs.front();
  if (h >= static_cast<double>(xs.size())) return xs.back();
  const double lo = std::floor(h);
  return xs[static_cast<std::size_t>(lo) - 1] + (h - lo) * (xs[static_cast<std::size_t>(lo)] - xs[static_cast<std::size_t>(lo) - 1]);
}

}  // namespace

TEST(ParseLora, SingleValidRow) {
  std::istringstream in(std::string(lc::kLoraHeader) + "\n2020.02.01 13.45.07.123,3,a1b2c3d4e5f60718,-7.5,2,0,-90,41\n");
  const auto parsed = lc::parse_lora_csv(in);
  ASSERT_EQ(parsed.records.size(), 1u);
  EXPECT_EQ(parsed.report.rows_ok, 1u);
  EXPECT_EQ(parsed.report.rows_rejected, 0u);
  const auto& p = parsed.records[0];
  EXPECT_EQ(p.channel(), 3);
  EXPECT_EQ(p.fcnt(), 41);
  EXPECT_DOUBLE_EQ(p.lsnr(), -7.5);
  EXPECT_EQ(p.port(), 2);
  EXPECT_EQ(p.rfch(), 0);
  EXPECT_DOUBLE_EQ(p.rssi(), -90.0);
  EXPECT_EQ(p.device().str(), "a1b2c3d4e5f60718");
  EXPECT_EQ(lc::format_timestamp_combined(p.ts()), "2020.02.01 13.45.07.123");
}

TEST(ParseLora, RangeViolationIsReportedNotClamped) {
  std::istringstream in(std::string(lc::kLoraHeader) +
                        "\n2020.02.01 13.45.07.123,3,a1b2c3d4e5f60718,-7.5,2,0,-130,41\n"
                        "2020.02.01 13.45.07.123,3,a1b2c3d4e5f60718,-7.5,2,0,-60,42\n");
  const auto parsed = lc::parse_lora_csv(in);
  ASSERT_EQ(parsed.records.size(), 1u);
  EXPECT_EQ(parsed.records[0].fcnt(), 42);
  ASSERT_EQ(parsed.report.rejections.size(), 1u);
  EXPECT_EQ(parsed.report.rejections[0].line, 2u);
  EXPECT_EQ(parsed.report.rejections[0].reason, "rssi out of range [-120,-53]");
}

TEST(ParseLora, HeaderOnlyAndMissingHeader) {
  std::istringstream empty(std::string(lc::kLoraHeader) + "\n");
  const auto a = lc::parse_lora_csv(empty);
  EXPECT_TRUE(a.records.empty());
  EXPECT_EQ(a.report.rows_ok, 0u);
  EXPECT_FALSE(a.report.missing_header);

  std::istringstream headless("2020.02.01 13.45.07.123,3,a1b2c3d4e5f60718,-7.5,2,0,-90,41\n");
  const auto b = lc::parse_lora_csv(headless);
  EXPECT_TRUE(b.report.missing_header);
  EXPECT_EQ(b.report.rows_rejected, 1u);
  EXPECT_EQ(b.report.rejections[0].reason, "MissingHeader");
}

TEST(ParseLora, ColumnCountAndMalformedCells) {
  std::istringstream in(std::string(lc::kLoraHeader) +
                        "\n2020.02.01 13.45.07.123,3,a1b2c3d4e5f60718,-7.5,2,0,-90\n"
                        "2020.02.01 13.45.07.123,x,a1b2c3d4e5f60718,-7.5,2,0,-90,41\n"
                        "2020.02.01 13.45.07.123,3,nothex,-7.5,2,0,-90,41\n"
                        "2020.02.31 13.45.07.123,3,a1b2c3d4e5f60718,-7.5,2,0,-90,41\n");
  const auto parsed = lc::parse_lora_csv(in);
  EXPECT_EQ(parsed.report.rows_ok, 0u);
  EXPECT_EQ(parsed.report.rows_rejected, 4u);
  EXPECT_NE(parsed.report.rejections[0].reason.find("ColumnCountMismatch"), std::string::npos);
  EXPECT_EQ(parsed.report.rejections[1].reason, "MalformedNumber");
  EXPECT_NE(parsed.report.rejections[2].reason.find("InvalidDeviceId"), std::string::npos);
  EXPECT_NE(parsed.report.rejections[3].reason.find("InvalidCalendar"), std::string::npos);
}

TEST(ParseSensor, Co2SignatureRow) {
  std::istringstream in(std::string(lc::kSensorHeader) +
                        "\n2020.02.01 13.45.00.000,a1b2c3d4e5f60718,512,21.5,30,340,nan,nan,nan,nan,nan,3.1\n");
  const auto parsed = lc::parse_sensor_csv(in);
  ASSERT_EQ(parsed.records.size(), 1u);
  const auto& r = parsed.records[0];
  EXPECT_EQ(r.get(lc::Field::Co2), 512.0);
  EXPECT_EQ(r.get(lc::Field::Light), 340.0);
  EXPECT_EQ(r.get(lc::Field::Temperature), 21.5);
  EXPECT_FALSE(r.get(lc::Field::Motion).has_value());
  EXPECT_FALSE(r.get(lc::Field::Pressure).has_value());
  EXPECT_EQ(lc::kind_of(r.present_fields()), lc::DeviceKind::Co2);
}

TEST(ParseSensor, AllNanRowRejectedAndCountsBalance) {
  std::istringstream in(std::string(lc::kSensorHeader) +
                        "\n2020.02.01 13.45.00.000,a1b2c3d4e5f60718,512,21.5,30,340,2,nan,nan,nan,nan,3.1"
                        "\n2020.02.01 14.00.00.000,a1b2c3d4e5f60718,nan,nan,nan,nan,nan,nan,nan,nan,nan,nan"
                        "\n2020.02.01 14.15.00.000,a1b2c3d4e5f60718,515,21.5,30,340,0,nan,nan,nan,nan,3.1\n");
  const auto parsed = lc::parse_sensor_csv(in);
  EXPECT_EQ(parsed.records.size(), 2u);
  EXPECT_EQ(parsed.report.rows_rejected, 1u);
  EXPECT_EQ(parsed.report.rejections[0].reason, "AllFieldsNan");
  EXPECT_EQ(parsed.report.rejections[0].line, 3u);
}

TEST(ParseSensor, MalformedNumberRejectsRow) {
  std::istringstream in(std::string(lc::kSensorHeader) +
                        "\n2020.02.01 13.45.00.000,a1b2c3d4e5f60718,5x2,21.5,30,340,2,nan,nan,nan,nan,3.1\n");
  const auto parsed = lc::parse_sensor_csv(in);
  EXPECT_EQ(parsed.report.rows_rejected, 1u);
  EXPECT_NE(parsed.report.rejections[0].reason.find("MalformedNumber in column co2"), std::string::npos);
}

TEST(ParseSensor, TotalOnArbitraryBytes) {
  std::mt19937_64 rng(3);
  const std::string alphabet = "0123456789.,- nanNa\n\r";
  for (int trial = 0; trial < 300; ++trial) {
    std::string blob = (trial % 2 == 0) ? std::string(lc::kSensorHeader) + "\n" : std::string();
    const auto len = rng() % 400;
    for (std::size_t i = 0; i < len; ++i) blob += alphabet[rng() % alphabet.size()];
    std::istringstream in(blob);
    const auto parsed = lc::parse_sensor_csv(in);
    std::size_t lines = static_cast<std::size_t>(std::count(blob.begin(), blob.end(), '\n'));
    if (!blob.empty() && blob.back() != '\n') ++lines;
    const std::size_t data_lines = parsed.report.missing_header ? lines : lines - 1;
    EXPECT_EQ(parsed.report.total(), data_lines);
    EXPECT_EQ(parsed.records.size(), parsed.report.rows_ok);
    EXPECT_EQ(parsed.report.rejections.size(), parsed.report.rows_rejected);
  }
}

TEST(Serialize, WriterOutputReparsesBitExact) {
  std::vector<lc::SensorReading> readings(2);
  readings[0].ts = lc::parse_timestamp("2020.02.01", "13.45.00.000");
  readings[0].device = lc::DeviceId::parse("00000000000000aa");
  readings[0].set(lc::Field::Co2, 431.7);
  readings[0].set(lc::Field::Battery, 3.605);
  readings[1] = readings[0];
  readings[1].set(lc::Field::Co2, 0.1 + 0.2);
  std::ostringstream out;
  lc::write_sensor_csv(out, readings);
  std::istringstream in(out.str());
  const auto parsed = lc::parse_sensor_csv(in);
  ASSERT_EQ(parsed.records.size(), 2u);
  EXPECT_EQ(parsed.records[1].get(lc::Field::Co2), 0.1 + 0.2);
  std::ostringstream again;
  lc::write_sensor_csv(again, parsed.records);
  EXPECT_EQ(again.str(), out.str());
}

TEST(Outliers, SpikeRemoved) {
  const std::vector<double> xs{5, 5, 6, 5, 1000, 5};
  // First-pass fences from the independent quantile definition flag only the spike.
  const double q1 = hf6_quantile(xs, 0.25), q3 = hf6_quantile(xs, 0.75);
  EXPECT_DOUBLE_EQ(q1, 5.0);
  EXPECT_DOUBLE_EQ(q3, 254.5);
  const auto res = lc::remove_outliers(xs, 1.5);
  EXPECT_EQ(res.report.removed_indices, (std::vector<std::size_t>{4}));
  EXPECT_EQ(res.cleaned, (std::vector<double>{5, 5, 6, 5, 5}));
  // Reported fences are those of the survivors.
  const std::vector<double> survivors{5, 5, 6, 5, 5};
  const double s1 = hf6_quantile(survivors, 0.25), s3 = hf6_quantile(survivors, 0.75);
  EXPECT_DOUBLE_EQ(res.report.lower_fence, s1 - 1.5 * (s3 - s1));
  EXPECT_DOUBLE_EQ(res.report.upper_fence, s3 + 1.5 * (s3 - s1));
}

TEST(Outliers, MonotoneAndConstantSeriesKeepEverything) {
  EXPECT_TRUE(lc::remove_outliers({1, 2, 3, 4, 5}).report.removed_indices.empty());
  const auto c = lc::remove_outliers({7, 7, 7, 7});
  EXPECT_TRUE(c.report.removed_indices.empty());
  EXPECT_EQ(c.report.lower_fence, 7.0);
  EXPECT_EQ(c.report.upper_fence, 7.0);
}

TEST(Outliers, Preconditions) {
  try {
    lc::remove_outliers({1, 2, 3});
    FAIL();
  } catch (const lc::Error& e) {
    EXPECT_EQ(e.code(), lc::Errc::SeriesTooShort);
  }
  EXPECT_THROW(lc::remove_outliers({1, 2, 3, 4}, 0.0), lc::Error);
}

TEST(Outliers, IdempotentAndFencesHoldProperty) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> len_dist(8, 200);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> xs(static_cast<std::size_t>(len_dist(rng)));
    for (auto& x : xs) {
      x = normal(rng);
      if (rng() % 10 == 0) x *= 25.0;  // heavy tail
      if (rng() % 7 == 0) x = std::round(x);
    }
    const auto once = lc::remove_outliers(xs);
    for (double v : once.cleaned) {
      EXPECT_GE(v, once.report.lower_fence);
      EXPECT_LE(v, once.report.upper_fence);
    }
    for (auto i : once.report.removed_indices) {
      EXPECT_TRUE(xs[i] < once.report.lower_fence || xs[i] > once.report.upper_fence) << "trial " << trial;
    }
    if (once.cleaned.size() >= 4) {
      const auto twice = lc::remove_outliers(once.cleaned);
      EXPECT_EQ(twice.cleaned, once.cleaned);
    }
  }
}
