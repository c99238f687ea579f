// Randomized properties, 100+ seeded cases each.
#include <gtest/gtest.h>

#include <algorithm>
#include <deque>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "ttsim/gateway.hpp"
#include "ttsim/kernel.hpp"
#include "ttsim/ttcan.hpp"
#include "ttsim/tte.hpp"

using namespace ttsim;

namespace {

// Builds a random event workload where handlers schedule follow-ups, and
// returns the trace.
EventTrace random_run(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Kernel k;
  k.set_trace_enabled(true);
  std::function<void(int)> spawn = [&](int depth) {
    if (depth <= 0) return;
    const int n = static_cast<int>(rng() % 3);
    for (int i = 0; i < n; ++i) {
      SimTime at = k.now() + 1 + static_cast<Duration>(rng() % 50);
      auto kind = static_cast<EventKind>(rng() % 7);
      k.schedule(at, static_cast<NodeId>(rng() % 5), kind, [&spawn, depth] { spawn(depth - 1); });
    }
  };
  for (int i = 0; i < 20; ++i) {
    k.schedule(SimTime{rng() % 100}, static_cast<NodeId>(rng() % 5), static_cast<EventKind>(rng() % 7),
               [&spawn] { spawn(4); });
  }
  return k.run_until(SimTime{100000});
}

}  // namespace

TEST(KernelProperty, IdenticalRunsGiveIdenticalTraces) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    EventTrace a = random_run(seed);
    EventTrace b = random_run(seed);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].at, b[i].at);
      EXPECT_EQ(a[i].node, b[i].node);
      EXPECT_EQ(a[i].kind, b[i].kind);
    }
    for (std::size_t i = 1; i < a.size(); ++i) {
      EXPECT_LE(a[i - 1].at, a[i].at);
      if (a[i - 1].at == a[i].at) {
        EXPECT_LE(static_cast<int>(a[i - 1].kind), static_cast<int>(a[i].kind));
      }
    }
  }
}

TEST(TtcanProperty, WrapDiffMatchesUnboundedCounter) {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 1000; ++i) {
    const std::int64_t a = static_cast<std::int64_t>(rng() % (std::int64_t{1} << 40));
    const std::int64_t d = static_cast<std::int64_t>(rng() % (ttcan::kModulus / 2)) - ttcan::kModulus / 4;
    const std::int64_t b = a + d;
    EXPECT_EQ(ttcan::wrap_diff(ttcan::NtuTime::from_units(b), ttcan::NtuTime::from_units(a)), d);
  }
}

TEST(TtcanProperty, ArbitrationIsPermutationInvariant) {
  std::mt19937_64 rng(123);
  for (int i = 0; i < 200; ++i) {
    std::vector<std::uint16_t> ids(ttcan::kMaxStandardId + 1);
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    const std::size_t n = 1 + rng() % 10;
    std::vector<ttcan::CanFrame> frames;
    for (std::size_t j = 0; j < n; ++j) frames.push_back({ids[j], 8, {}, static_cast<NodeId>(j)});
    const auto expected = *std::min_element(ids.begin(), ids.begin() + static_cast<long>(n));
    for (int p = 0; p < 5; ++p) {
      std::shuffle(frames.begin(), frames.end(), rng);
      EXPECT_EQ(ttcan::arbitrate(frames).id, expected);
    }
  }
}

TEST(TteProperty, MulticastCopiesEqualTreeEgressCount) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    tte::ForwardingTable ft;
    std::map<std::uint32_t, std::set<std::size_t>> tree;
    for (std::uint32_t vl = 0; vl < 8; ++vl) {
      std::vector<std::size_t> ports;
      const std::size_t n = 1 + rng() % 6;
      for (std::size_t j = 0; j < n; ++j) ports.push_back(rng() % 8);
      tree[vl] = {ports.begin(), ports.end()};
      ft.add_vl(vl, ports);
    }
    for (int f = 0; f < 20; ++f) {
      const auto vl = static_cast<std::uint32_t>(rng() % 10);
      tte::EthFrame frame{vl, tte::TrafficClass::TT, 50, 0, {1}, {}};
      auto out = ft.route(frame);
      if (vl < 8) {
        EXPECT_EQ(out.size(), tree[vl].size());
        EXPECT_EQ(std::set<std::size_t>(out.begin(), out.end()), tree[vl]);
      } else {
        EXPECT_TRUE(out.empty());
      }
    }
  }
}

TEST(GatewayProperty, EncapDecapPreservesFramesAndOrder) {
  std::mt19937_64 rng(77);
  for (int i = 0; i < 200; ++i) {
    std::deque<gateway::TunnelTuple> queue;
    std::vector<ttcan::CanFrame> sent;
    const std::size_t n = rng() % 30;
    for (std::size_t j = 0; j < n; ++j) {
      ttcan::CanFrame f;
      f.id = static_cast<std::uint16_t>(1 + rng() % ttcan::kMaxStandardId);
      f.dlc = static_cast<std::uint8_t>(rng() % 9);
      for (std::size_t b = 0; b < f.dlc; ++b) f.data[b] = static_cast<std::uint8_t>(rng());
      sent.push_back(f);
      queue.push_back(gateway::to_tuple(f, static_cast<std::uint16_t>(rng())));
    }
    gateway::DecapTable table{{5, {}}};
    std::vector<ttcan::CanFrame> received;
    const std::size_t cap = 1 + rng() % 4;
    while (auto batch = gateway::encapsulate(queue, cap)) {
      EXPECT_LE(batch->size(), cap);
      auto bytes = gateway::pack_tuples(*batch);
      EXPECT_LE(bytes.size(), 50u);
      auto out = gateway::decapsulate(table, 5, gateway::unpack_tuples(bytes), 0);
      ASSERT_TRUE(out);
      received.insert(received.end(), out->begin(), out->end());
    }
    ASSERT_EQ(received.size(), sent.size());
    for (std::size_t j = 0; j < sent.size(); ++j) {
      EXPECT_EQ(received[j].id, sent[j].id);
      EXPECT_EQ(received[j].dlc, sent[j].dlc);
      EXPECT_EQ(received[j].data, sent[j].data);
    }
  }
}

TEST(TteProperty, ClusterCycleIsLeastCommonMultiple) {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 200; ++i) {
    const Duration p = (1 + static_cast<Duration>(rng() % 10)) * kMillisecond;
    std::vector<Duration> periods(1 + rng() % 5);
    for (auto& x : periods) x = p * (1 + static_cast<Duration>(rng() % 12));
    const Duration got = tte::cluster_cycle(periods, p);
    // smallest multiple of p that every period divides, by search
    Duration want = p;
    while (!std::all_of(periods.begin(), periods.end(), [&](Duration x) { return want % x == 0; })) want += p;
    EXPECT_EQ(got, want);
  }
}
