#include <gtest/gtest.h>

#include <deque>
#include <vector>

#include "ttsim/gateway.hpp"
#include "ttsim/oscillator.hpp"

using namespace ttsim;
using namespace ttsim::gateway;
using ttcan::kUnitsPerNtu;

namespace {

constexpr Duration kTsys = 6250;                  // 160 MHz
constexpr Duration kNtu = 100 * kNanosecond;      // TUR 16
constexpr Duration kUnit = kNtu / kUnitsPerNtu;   // 12.5 ns
constexpr std::int64_t kCycleNtu = 245'760;       // 24.576 ms

// Two-clock oracle: TT-E time is ideal, the CAN master counts a drifting
// oscillator. Each resync fires when the master's Cycle_Time reaches
// T_cycle.
struct MasterRig {
  FreeRunningOscillator osc;
  GatewayState gw;
  std::uint64_t ticks = 0;

  explicit MasterRig(double ppm) : osc(OscillatorState::make(kTsys, ppm)) {
    gw.can_master.clock = ttcan::NtuClock(Rational(16), kTsys);
    gw.t_cycle = kCycleNtu;
  }

  SimTime now() const { return osc.time_of_tick(ticks); }
  NtuTime tte_now() const { return NtuTime::from_units(static_cast<std::int64_t>(now().ticks / kUnit)); }

  ResyncResult resync() {
    auto r = end_of_cycle_resync(gw, tte_now());
    gw = r.state;
    return r;
  }

  void run_to_cycle_end() {
    const std::int64_t remaining = kCycleNtu * kUnitsPerNtu - ttcan::cycle_time(gw.can_master);
    const std::uint64_t need = gw.can_master.clock.ticks_until(gw.can_master.clock.units() + remaining);
    gw.can_master.clock.advance(need);
    ticks += need;
  }
};

}  // namespace

TEST(EndOfCycleResync, ZeroGapBehavesLikePlainTtcan) {
  MasterRig rig(0.0);
  auto first = rig.resync();
  EXPECT_EQ(first.status, CorrectionStatus::Bootstrap);
  EXPECT_EQ(first.reference.t_gap, 0);
  rig.run_to_cycle_end();
  const NtuTime before = rig.gw.can_master.clock.local_time();
  auto r = rig.resync();
  EXPECT_EQ(r.reference.t_gap, 0);
  EXPECT_EQ(rig.gw.can_master.clock.local_time(), before);
  EXPECT_EQ(ttcan::cycle_time(rig.gw.can_master), 0);
  EXPECT_EQ(r.status, CorrectionStatus::WithinDeadband);
  EXPECT_FALSE(r.df);
  EXPECT_EQ(rig.gw.can_master.clock.tur(), Rational(16));
  EXPECT_EQ(r.reference.cycle_index, 0);  // row_count 1
}

TEST(EndOfCycleResync, FastMasterStepsBackAndLocks) {
  MasterRig rig(200.0);
  rig.resync();
  rig.run_to_cycle_end();
  auto r1 = rig.resync();
  // gap ~ -rho * T_cycle = -4.9152 us
  const double gap1_us = r1.reference.t_gap * static_cast<double>(kUnit) / kMicrosecond;
  EXPECT_NEAR(gap1_us, -2e-4 * 24576.0, 0.05);
  // the master counted (1 + rho) more NTUs than elapsed on TT-E: df > 1
  ASSERT_TRUE(r1.df);
  EXPECT_NEAR(r1.df->to_double(), 1.0 + 2e-4, 2e-6);
  EXPECT_GT(rig.gw.can_master.clock.tur(), Rational(16));
  // post-resync identity and Cycle_Time = T_gap
  EXPECT_EQ(rig.gw.can_master.clock.local_time(), rig.tte_now());
  EXPECT_EQ(ttcan::cycle_time(rig.gw.can_master), r1.reference.t_gap);
  EXPECT_EQ(global_time(rig.gw.can_master), rig.gw.can_master.clock.local_time());

  rig.run_to_cycle_end();
  auto r2 = rig.resync();
  EXPECT_LT(std::abs(r2.reference.t_gap), std::abs(r1.reference.t_gap));
}

TEST(EndOfCycleResync, GapNonIncreasingUnderConstantDrift) {
  for (double ppm : {200.0, -200.0, 75.0}) {
    MasterRig rig(ppm);
    rig.resync();
    std::int32_t prev = 0;
    for (int k = 1; k <= 10; ++k) {
      rig.run_to_cycle_end();
      auto r = rig.resync();
      const std::int32_t g = std::abs(r.reference.t_gap);
      if (k >= 2) {
        EXPECT_LE(g, std::max(prev, 2)) << ppm << " cycle " << k;
      }
      if (k >= 3) {
        EXPECT_LE(g, 2) << ppm << " cycle " << k;  // quantization only
      }
      prev = g;
    }
  }
}

TEST(EndOfCycleResync, CycleIndexFollowsRows) {
  MasterRig rig(0.0);
  rig.gw.row_count = 4;
  std::vector<int> idx;
  for (int k = 0; k < 6; ++k) {
    if (k > 0) rig.run_to_cycle_end();
    idx.push_back(rig.resync().reference.cycle_index);
  }
  EXPECT_EQ(idx, (std::vector<int>{0, 1, 2, 3, 0, 1}));
}

namespace {

// Node fed by an ideal master: MRM_k = k * T_cycle, no gap. The node
// handles each reference tau after the master's mark.
struct NodeRig {
  FreeRunningOscillator osc;
  TtcanNodeState node;
  std::uint64_t ticks = 0;

  explicit NodeRig(double ppm) : osc(OscillatorState::make(kTsys, ppm, 777)) {
    node.clock = ttcan::NtuClock(Rational(16), kTsys);
  }

  NodeReferenceResult deliver(int k, std::int32_t tau_units, std::int32_t gap = 0) {
    const Duration at = k * kCycleNtu * kNtu + tau_units * kUnit;
    const std::uint64_t t = osc.ticks_at(SimTime::from(at));
    node.clock.advance(t - ticks);
    ticks = t;
    ReferenceMessage ref{NtuTime::from_ntu(k * kCycleNtu) + gap, 0, gap};
    auto r = node_on_reference(node, ref, tau_units);
    node = r.state;
    return r;
  }
};

}  // namespace

TEST(NodeOnReference, ZeroDriftAdoptsMasterPlusTau) {
  const auto tau = static_cast<std::int32_t>(
      ttcan::duration_to_units(ttcan::can_frame_duration(8, ttcan::StuffingMode::Nominal, 1'000'000), kNtu));
  EXPECT_EQ(tau, 111 * 10 * kUnitsPerNtu);
  NodeRig rig(0.0);
  auto first = rig.deliver(0, tau);
  EXPECT_EQ(first.status, CorrectionStatus::Bootstrap);
  EXPECT_FALSE(first.df);
  EXPECT_EQ(rig.node.clock.local_time(), NtuTime::from_units(tau));
  EXPECT_EQ(rig.node.ref_mark, NtuTime{});
  EXPECT_EQ(rig.node.sync_mark, rig.node.clock.local_time() - tau);
  auto second = rig.deliver(1, tau);
  ASSERT_TRUE(second.df);
  EXPECT_EQ(*second.df, Rational(1));
  EXPECT_EQ(rig.node.clock.local_time(), NtuTime::from_ntu(kCycleNtu) + tau);
}

TEST(NodeOnReference, SlowAndFastNodesLockToMasterNtu) {
  for (double ppm : {-200.0, 200.0}) {
    NodeRig rig(ppm);
    for (int k = 0; k < 5; ++k) {
      auto r = rig.deliver(k, 80);
      if (k == 1) {
        ASSERT_TRUE(r.df);
        // a slow node counts fewer NTUs than the master: df < 1
        if (ppm < 0) {
          EXPECT_LT(r.df->to_double(), 1.0);
        } else {
          EXPECT_GT(r.df->to_double(), 1.0);
        }
      }
      if (k >= 2) {
        const double eff = rig.node.clock.tur().to_double() * kTsys / (1.0 + ppm * 1e-6);
        EXPECT_LE(std::abs(eff - kNtu) / kNtu, 1e-6) << ppm << " cycle " << k;
      }
    }
  }
}

TEST(NodeOnReference, DenominatorUsesCurrentGap) {
  // The master stepped by `gap` just before sending, so the node's local
  // span corresponds to MRM - gap - MRM_prev.
  NodeRig rig(0.0);
  rig.deliver(0, 80);
  const std::int32_t gap = -393;
  auto r = rig.deliver(1, 80, gap);
  ASSERT_TRUE(r.df);
  EXPECT_EQ(*r.df, Rational(1));
}

TEST(NodeOnReference, ReferenceLengthDoesNotLeakIntoDf) {
  // Stuffing makes consecutive reference frames differ by a few bits.
  NodeRig rig(0.0);
  rig.deliver(0, 8880);
  auto r = rig.deliver(1, 8880 + 5 * 80);  // five bit times longer
  ASSERT_TRUE(r.df);
  EXPECT_EQ(*r.df, Rational(1));
}

TEST(NodeOnReference, ZeroSpanStillAdoptsTime) {
  NodeRig rig(0.0);
  rig.deliver(0, 80);
  ReferenceMessage same{rig.node.master_ref_mark, 0, 0};
  auto r = node_on_reference(rig.node, same, 80);
  EXPECT_EQ(r.status, CorrectionStatus::SkippedZeroSpan);
  EXPECT_EQ(r.state.clock.local_time(), same.master_ref_mark + 80);
}

TEST(Encapsulate, OneFrameFitsTtPayload) {
  ttcan::CanFrame f{0x123, 8, {1, 2, 3, 4, 5, 6, 7, 8}, 3};
  std::deque<TunnelTuple> q{to_tuple(f, 42)};
  auto batch = encapsulate(q);
  ASSERT_TRUE(batch);
  ASSERT_EQ(batch->size(), 1u);
  auto bytes = pack_tuples(*batch);
  EXPECT_LE(bytes.size(), 50u);
  EXPECT_EQ(unpack_tuples(bytes), *batch);
  EXPECT_EQ(pack_tuples(std::vector<TunnelTuple>(kDefaultTupleCapacity)).size(), 49u);
}

TEST(Encapsulate, EmptyQueueSkipsSlot) {
  std::deque<TunnelTuple> q;
  EXPECT_FALSE(encapsulate(q));
}

TEST(Encapsulate, FifoSplitAcrossSlots) {
  std::deque<int> q{1, 2, 3, 4, 5};
  auto a = encapsulate(q, 3);
  auto b = encapsulate(q, 3);
  ASSERT_TRUE(a && b);
  EXPECT_EQ(*a, (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(*b, (std::vector<int>{4, 5}));
  EXPECT_FALSE(encapsulate(q, 3));
}

TEST(Decapsulate, Examples) {
  DecapTable table{{7, {}}, {8, {0x10}}};
  std::vector<TunnelTuple> one{{0x10, 8, {}, 0}};
  auto r1 = decapsulate(table, 7, one, 2);
  ASSERT_TRUE(r1);
  ASSERT_EQ(r1->size(), 1u);
  EXPECT_EQ((*r1)[0].src, 2u);

  std::vector<TunnelTuple> three{{0x30, 1, {}, 0}, {0x10, 2, {}, 0}, {0x20, 3, {}, 0}};
  auto r3 = decapsulate(table, 7, three, 2);
  ASSERT_TRUE(r3);
  ASSERT_EQ(r3->size(), 3u);
  EXPECT_EQ((*r3)[0].id, 0x30);
  EXPECT_EQ((*r3)[2].id, 0x20);

  auto filtered = decapsulate(table, 8, three, 2);
  ASSERT_TRUE(filtered);
  EXPECT_EQ(filtered->size(), 1u);

  EXPECT_FALSE(decapsulate(table, 99, one, 2));
}
