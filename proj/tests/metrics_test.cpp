#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "ttsim/metrics.hpp"
#include "ttsim/tte.hpp"

using namespace ttsim;
using namespace ttsim::metrics;

namespace {

std::vector<MetricRecord> with_latencies(std::initializer_list<Duration> lat) {
  std::vector<MetricRecord> out;
  std::uint64_t seq = 0;
  for (Duration d : lat) {
    SimTime send = SimTime::from(static_cast<Duration>(seq + 1) * kMillisecond);
    out.push_back({0, seq++, send, send + d, false});
  }
  return out;
}

}  // namespace

TEST(DefaultPayloads, MatchCategories) {
  EXPECT_EQ(default_payload(Category::TTCAN), 8);
  EXPECT_EQ(default_payload(Category::TT), 50);
  EXPECT_EQ(default_payload(Category::RC), 100);
  EXPECT_EQ(default_payload(Category::BE), 500);
}

TEST(Summarize, ConstantLatency) {
  auto r = with_latencies({100 * kMicrosecond, 100 * kMicrosecond, 100 * kMicrosecond});
  auto s = summarize(r, SimTime{}, SimTime::from(10 * kMillisecond), 50);
  EXPECT_DOUBLE_EQ(*s.avg_latency_us, 100.0);
  EXPECT_DOUBLE_EQ(*s.jitter_range_us, 0.0);
  EXPECT_DOUBLE_EQ(*s.stddev_us, 0.0);
  EXPECT_EQ(s.delivered, 3u);
}

TEST(Summarize, RangeAndMean) {
  auto r = with_latencies({380 * kMicrosecond, 390 * kMicrosecond});
  auto s = summarize(r, SimTime{}, SimTime::from(10 * kMillisecond), 50);
  EXPECT_DOUBLE_EQ(*s.avg_latency_us, 385.0);
  EXPECT_DOUBLE_EQ(*s.jitter_range_us, 10.0);
  EXPECT_DOUBLE_EQ(*s.stddev_us, 5.0);
}

TEST(Summarize, AllDropped) {
  std::vector<MetricRecord> r{{0, 0, SimTime::from(kMillisecond), std::nullopt, true},
                              {0, 1, SimTime::from(2 * kMillisecond), std::nullopt, true}};
  auto s = summarize(r, SimTime{}, SimTime::from(10 * kMillisecond), 500);
  EXPECT_EQ(s.delivered, 0u);
  EXPECT_EQ(s.dropped, 2u);
  EXPECT_EQ(s.throughput_bps, 0.0);
  EXPECT_FALSE(s.avg_latency_us);
  EXPECT_FALSE(s.jitter_range_us);
  EXPECT_THROW(summarize(r, SimTime{5}, SimTime{5}, 1), std::invalid_argument);
}

TEST(Summarize, LosslessPeriodicThroughputIsPayloadOverPeriod) {
  FlowSpec f{"tt", Category::TT, 50, kMillisecond, 0, 1, {2}, 250 * kMicrosecond};
  std::mt19937_64 rng(1);
  auto sends = generate(f, SimTime::from(20 * kMillisecond), SimTime::from(120 * kMillisecond), rng);
  std::vector<MetricRecord> r;
  for (SimTime t : sends) r.push_back({0, r.size(), t, t + 300 * kMicrosecond, false});
  auto s = summarize(r, SimTime::from(20 * kMillisecond), SimTime::from(120 * kMillisecond), 50);
  EXPECT_DOUBLE_EQ(s.throughput_bps, 50 * 8 / 1e-3);
  EXPECT_EQ(s.generated, s.delivered + s.dropped);
}

TEST(Summarize, IgnoresFramesOutsideWindow) {
  auto r = with_latencies({10, 20, 30, 40});  // sent at 1..4 ms
  auto s = summarize(r, SimTime::from(2 * kMillisecond), SimTime::from(4 * kMillisecond), 1);
  EXPECT_EQ(s.generated, 2u);
  EXPECT_DOUBLE_EQ(*s.jitter_range_us, 10e-6);
}

TEST(Generate, PeriodicExamples) {
  std::mt19937_64 rng(1);
  FlowSpec f{"tt", Category::TT, 50, kMillisecond, 0, 1, {2}, 0};
  EXPECT_EQ(generate(f, SimTime{}, SimTime::from(10 * kMillisecond), rng).size(), 10u);
  f.start_offset = 11 * kMillisecond;
  EXPECT_TRUE(generate(f, SimTime{}, SimTime::from(10 * kMillisecond), rng).empty());
}

TEST(Generate, BestEffortIsSeedDeterministic) {
  FlowSpec f{"be", Category::BE, 500, 0, 20e6, 1, {2}, 0};
  const SimTime end = SimTime::from(kSecond);
  std::mt19937_64 a(42), b(42), c(43);
  auto x = generate(f, SimTime{}, end, a);
  auto y = generate(f, SimTime{}, end, b);
  auto z = generate(f, SimTime{}, end, c);
  EXPECT_EQ(x, y);
  EXPECT_NE(x, z);
  // 20 Mb/s of 4000-bit frames is 5000 frames per second on average
  EXPECT_NEAR(static_cast<double>(x.size()), 5000.0, 5 * std::sqrt(5000.0));
  EXPECT_TRUE(std::is_sorted(x.begin(), x.end()));
}

TEST(LinkUtilization, Examples) {
  const SimTime end = SimTime::from(3 * kMillisecond);
  LinkUsage idle;
  EXPECT_EQ(idle.utilization(SimTime{}, end), 0.0);
  LinkUsage full;
  full.add_busy(SimTime{}, end);
  EXPECT_DOUBLE_EQ(full.utilization(SimTime{}, end), 1.0);

  // PCF oracle: 2 frames of 84 bytes at 100 Mb/s per 3 ms
  LinkUsage pcf;
  const Duration w = tte::eth_wire_time(tte::kPcfFrameBytes, 100'000'000);
  pcf.add_busy(SimTime::from(10 * kMicrosecond), SimTime::from(10 * kMicrosecond + w));
  pcf.add_busy(SimTime::from(40 * kMicrosecond), SimTime::from(40 * kMicrosecond + w));
  EXPECT_NEAR(pcf.utilization(SimTime{}, end), 2 * 84 * 8 / 1e8 / 3e-3, 1e-12);
  EXPECT_NEAR(pcf.utilization(SimTime{}, end), 0.00448, 1e-9);
}
