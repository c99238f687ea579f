#pragma once

#include <cstdint>
#include <cstdlib>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "ttsim/rational.hpp"
#include "ttsim/sim_time.hpp"
#include "ttsim/ttcan.hpp"
#include "ttsim/tte.hpp"

namespace ttsim::gateway {

using ttcan::CanFrame;
using ttcan::CorrectionStatus;
using ttcan::NtuTime;
using ttcan::ReferenceMessage;
using ttcan::TtcanNodeState;

/// CAN-side half of a TT-gateway. The TT-E half lives in the network model;
/// both are driven by one oscillator.
struct GatewayState {
  TtcanNodeState can_master;
  std::int32_t t_gap = 0;        // TT-E time minus CAN master time, NTU/8 units
  std::int64_t t_cycle = 0;      // NTU
  std::size_t row_count = 1;
  std::uint8_t cycle_index = 0;
  std::uint32_t resyncs = 0;
};

// A gap this small is read-out quantization; correcting the rate on it makes
// the TUR flip every cycle.
inline constexpr std::int32_t kRateDeadband = 2;

struct ResyncResult {
  GatewayState state;
  ReferenceMessage reference;
  CorrectionStatus status = CorrectionStatus::Applied;
  std::optional<Rational> df;
};

/// End-of-basic-cycle step of the time master. `tte_now` is the gateway's
/// TT-E local time converted to master NTU/8 units.
///
///   T_gap       = TT-E time - Local_Time_previous
///   Local_Time  = Local_Time_previous + T_gap, saved as Master_Ref_Mark
///   df          = (Local_Time_previous - MRM_previous) / (MRM - MRM_previous)
///   TUR         = df * TUR_previous
///   Cycle_Time  = T_gap
///
/// The rate is left alone while |T_gap| <= kRateDeadband.
inline ResyncResult end_of_cycle_resync(GatewayState gw, NtuTime tte_now,
                                        std::optional<Rational> smoothing = std::nullopt) {
  ResyncResult out;
  auto& m = gw.can_master;
  const NtuTime local_prev = m.clock.local_time();
  const std::int32_t gap = ttcan::wrap_diff(tte_now, local_prev);
  m.clock.step(gap);

  m.master_ref_mark_previous = m.master_ref_mark;
  m.master_ref_mark = m.clock.local_time();

  if (m.references_seen == 0) {
    out.status = CorrectionStatus::Bootstrap;
  } else {
    const std::int64_t master_span = ttcan::wrap_diff(m.master_ref_mark, m.master_ref_mark_previous);
    const std::int64_t local_span = ttcan::wrap_diff(local_prev, m.master_ref_mark_previous);
    if (master_span <= 0) {
      out.status = CorrectionStatus::SkippedZeroSpan;
    } else if (std::abs(gap) <= kRateDeadband) {
      out.status = CorrectionStatus::WithinDeadband;
    } else {
      Rational df(local_span, master_span);
      if (smoothing) df = ttcan::smooth_drift_factor(df, *smoothing);
      out.df = df;
      auto corrected = ttcan::apply_drift_correction(m.clock, df);
      m.clock = corrected.clock;
      out.status = corrected.status;
    }
  }

  ++m.references_seen;
  m.time_master = true;
  m.local_offset = 0;
  m.ref_mark_previous = m.ref_mark;
  m.ref_mark = local_prev;  // Cycle_Time now reads T_gap
  m.sync_mark = m.master_ref_mark;
  gw.t_gap = gap;
  ++gw.resyncs;
  if (gw.resyncs > 1) gw.cycle_index = static_cast<std::uint8_t>((gw.cycle_index + 1) % gw.row_count);

  out.reference = ReferenceMessage{m.master_ref_mark, gw.cycle_index, gap};
  out.state = gw;
  return out;
}

struct NodeReferenceResult {
  TtcanNodeState state;
  CorrectionStatus status = CorrectionStatus::Applied;
  std::optional<Rational> df;
  std::int32_t step = 0;  // adjustment applied to Local_Time, NTU/8 units
};

/// A TT-CAN node's handling of a reference message from a resynchronizing
/// master, evaluated once the reference frame has been received. Marks are
/// taken at the frame's start, tau before now, so the reference frame's own
/// length (which varies with stuffing) stays out of df:
///
///   Sync_Mark  = Local_Time - tau
///   df         = (Sync_Mark - Ref_Mark_previous) / (MRM - T_gap - MRM_previous)
///   TUR        = df * TUR_previous
///   Local_Time = MRM + tau
///   Ref_Mark   = MRM
///
/// `tau_units` is the master-to-node delay in NTU/8 units.
inline NodeReferenceResult node_on_reference(TtcanNodeState node, const ReferenceMessage& ref,
                                             std::int32_t tau_units,
                                             std::optional<Rational> smoothing = std::nullopt) {
  NodeReferenceResult out;
  const NtuTime local_now = node.clock.local_time();
  node.sync_mark = local_now - tau_units;

  if (node.references_seen == 0) {
    out.status = CorrectionStatus::Bootstrap;
  } else {
    const std::int64_t master_span =
        static_cast<std::int64_t>(ttcan::wrap_diff(ref.master_ref_mark, node.master_ref_mark)) - ref.t_gap;
    const std::int64_t local_span = ttcan::wrap_diff(node.sync_mark, node.ref_mark);
    if (master_span <= 0) {
      out.status = CorrectionStatus::SkippedZeroSpan;
    } else {
      Rational df(local_span, master_span);
      if (smoothing) df = ttcan::smooth_drift_factor(df, *smoothing);
      out.df = df;
      auto corrected = ttcan::apply_drift_correction(node.clock, df);
      node.clock = corrected.clock;
      out.status = corrected.status;
    }
  }

  node.master_ref_mark_previous = node.master_ref_mark;
  node.master_ref_mark = ref.master_ref_mark;
  const NtuTime adopted = ref.master_ref_mark + tau_units;
  out.step = ttcan::wrap_diff(adopted, local_now);
  node.clock.set_local_time(adopted);
  node.ref_mark_previous = node.ref_mark;
  node.ref_mark = ref.master_ref_mark;
  node.local_offset = 0;
  ++node.references_seen;
  out.state = node;
  return out;
}

// ---------------------------------------------------------------------------
// Frame conversion

/// One CAN frame carried inside a TT tunnel frame: 16-bit word holding the
/// 11-bit identifier and the DLC, 8 data bytes, 16-bit origin timestamp.
struct TunnelTuple {
  std::uint16_t can_id = 0;
  std::uint8_t dlc = 0;
  std::array<std::uint8_t, 8> data{};
  std::uint16_t timestamp = 0;

  friend bool operator==(const TunnelTuple&, const TunnelTuple&) = default;
};

inline constexpr std::size_t kTupleBytes = 12;
inline constexpr std::size_t kDefaultTupleCapacity = 4;

/// Wire layout: one count byte, then `count` tuples (49 bytes for four).
inline std::vector<std::uint8_t> pack_tuples(const std::vector<TunnelTuple>& tuples) {
  std::vector<std::uint8_t> out;
  out.reserve(1 + tuples.size() * kTupleBytes);
  out.push_back(static_cast<std::uint8_t>(tuples.size()));
  for (const auto& t : tuples) {
    if (t.can_id > ttcan::kMaxStandardId || t.dlc > 8) throw ttcan::ConfigError("bad CAN tuple");
    const std::uint16_t word = static_cast<std::uint16_t>((t.can_id << 4) | t.dlc);
    out.push_back(static_cast<std::uint8_t>(word & 0xff));
    out.push_back(static_cast<std::uint8_t>(word >> 8));
    out.insert(out.end(), t.data.begin(), t.data.end());
    out.push_back(static_cast<std::uint8_t>(t.timestamp & 0xff));
    out.push_back(static_cast<std::uint8_t>(t.timestamp >> 8));
  }
  return out;
}

inline std::vector<TunnelTuple> unpack_tuples(const std::vector<std::uint8_t>& bytes) {
  if (bytes.empty()) throw ttcan::ConfigError("empty tunnel payload");
  const std::size_t count = bytes[0];
  if (bytes.size() < 1 + count * kTupleBytes) throw ttcan::ConfigError("truncated tunnel payload");
  std::vector<TunnelTuple> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint8_t* p = bytes.data() + 1 + i * kTupleBytes;
    const std::uint16_t word = static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    out[i].can_id = static_cast<std::uint16_t>(word >> 4);
    out[i].dlc = static_cast<std::uint8_t>(word & 0xf);
    std::copy(p + 2, p + 10, out[i].data.begin());
    out[i].timestamp = static_cast<std::uint16_t>(p[10] | (p[11] << 8));
  }
  return out;
}

inline TunnelTuple to_tuple(const CanFrame& f, std::uint16_t timestamp) {
  return TunnelTuple{f.id, f.dlc, f.data, timestamp};
}

/// Takes up to `capacity` queued tuples, oldest first, for the next TT slot.
/// Returns nothing when the queue is empty (the slot is skipped).
template <typename Item>
std::optional<std::vector<Item>> encapsulate(std::deque<Item>& queue,
                                             std::size_t capacity = kDefaultTupleCapacity) {
  if (queue.empty()) return std::nullopt;
  std::vector<Item> batch;
  while (!queue.empty() && batch.size() < capacity) {
    batch.push_back(std::move(queue.front()));
    queue.pop_front();
  }
  return batch;
}

/// Tunnel VL id -> CAN identifiers the gateway forwards onto its bus.
/// An empty identifier set forwards everything.
using DecapTable = std::map<std::uint32_t, std::set<std::uint16_t>>;

/// CAN frames for the local bus, in tuple order; nothing when the VL is
/// not in the table.
inline std::optional<std::vector<CanFrame>> decapsulate(const DecapTable& table, std::uint32_t vl_id,
                                                        const std::vector<TunnelTuple>& tuples,
                                                        NodeId gateway) {
  auto it = table.find(vl_id);
  if (it == table.end()) return std::nullopt;
  std::vector<CanFrame> out;
  for (const auto& t : tuples) {
    if (!it->second.empty() && !it->second.count(t.can_id)) continue;
    CanFrame f;
    f.id = t.can_id;
    f.dlc = t.dlc;
    f.data = t.data;
    f.src = gateway;
    out.push_back(f);
  }
  return out;
}

}  // namespace ttsim::gateway
