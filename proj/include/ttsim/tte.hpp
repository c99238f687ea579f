#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ttsim/kernel.hpp"
#include "ttsim/oscillator.hpp"
#include "ttsim/sim_time.hpp"

namespace ttsim::tte {

class ScenarioError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class TrafficClass : std::uint8_t { TT, RC, BE };

inline const char* to_string(TrafficClass c) {
  switch (c) {
    case TrafficClass::TT: return "TT";
    case TrafficClass::RC: return "RC";
    case TrafficClass::BE: return "BE";
  }
  return "?";
}

enum class SyncRole : std::uint8_t { SynchronizationMaster, CompressionMaster, SynchronizationClient };

inline const char* to_string(SyncRole r) {
  switch (r) {
    case SyncRole::SynchronizationMaster: return "sm";
    case SyncRole::CompressionMaster: return "cm";
    case SyncRole::SynchronizationClient: return "sc";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Frame sizes

inline constexpr std::int64_t kHeaderAndFcsBytes = 18;
inline constexpr std::int64_t kMinFrameBytes = 64;
inline constexpr std::int64_t kPreambleAndGapBytes = 20;
inline constexpr std::int64_t kMaxPayloadBytes = 1500;
inline constexpr std::int64_t kPcfFrameBytes = 64;

inline std::int64_t frame_bytes_for_payload(std::int64_t payload) {
  if (payload < 0 || payload > kMaxPayloadBytes)
    throw ScenarioError("Ethernet payload of " + std::to_string(payload) + " bytes not in [0, 1500]");
  return std::max(payload + kHeaderAndFcsBytes, kMinFrameBytes);
}

/// Wire occupancy of a frame of `frame_bytes` including preamble and
/// inter-frame gap.
inline Duration eth_wire_time(std::int64_t frame_bytes, std::int64_t link_rate_bps) {
  if (link_rate_bps <= 0) throw ScenarioError("link rate must be positive");
  __int128 bits = static_cast<__int128>(frame_bytes + kPreambleAndGapBytes) * 8;
  __int128 ps = bits * kSecond;
  return static_cast<Duration>((ps + link_rate_bps - 1) / link_rate_bps);
}

inline Duration eth_frame_duration(std::int64_t payload_bytes, std::int64_t link_rate_bps) {
  return eth_wire_time(frame_bytes_for_payload(payload_bytes), link_rate_bps);
}

// ---------------------------------------------------------------------------
// Synchronization

struct PcfFrame {
  std::uint32_t integration_cycle_index = 0;
  NodeId origin = kNoNode;
  bool from_compression_master = false;
  // Transparent-clock field: queuing, wire and propagation delay accumulated
  // since the sender's dispatch point.
  Duration transparent_delay = 0;
  SimTime dispatched_at{};
  // Sender's local time at dispatch.
  Duration sender_time = 0;
};

inline std::uint32_t next_cycle_index(std::uint32_t index, std::uint32_t max_integration_cycle) {
  if (max_integration_cycle == 0) throw ScenarioError("max_integration_cycle must be positive");
  return (index + 1) % max_integration_cycle;
}

/// Arithmetic mean of the PCFs' arrival offsets relative to the compression
/// master's expected instant, rounded to the nearest picosecond (ties away
/// from zero). Empty input yields no correction.
inline std::optional<Duration> cm_compress(std::span<const Duration> relative_arrivals) {
  if (relative_arrivals.empty()) return std::nullopt;
  __int128 sum = 0;
  for (Duration d : relative_arrivals) sum += d;
  const __int128 n = static_cast<__int128>(relative_arrivals.size());
  __int128 q = sum / n;
  __int128 r = sum % n;
  if (2 * (r < 0 ? -r : r) >= n) q += (sum < 0) ? -1 : 1;
  return static_cast<Duration>(q);
}

/// Least common multiple of the message periods. Every period has to be a
/// positive whole multiple of the integration period.
inline Duration cluster_cycle(std::span<const Duration> periods, Duration integration_period) {
  if (integration_period <= 0) throw ScenarioError("integration period must be positive");
  if (periods.empty()) return integration_period;
  Duration lcm = 1;
  for (Duration p : periods) {
    if (p <= 0 || p % integration_period != 0)
      throw ScenarioError("period " + std::to_string(p) + " ps is not a multiple of the " +
                          std::to_string(integration_period) + " ps integration period");
    lcm = std::lcm(lcm, p);
  }
  return lcm;
}

/// TT-Ethernet local clock: a free-running oscillator counted in nominal
/// periods plus a correction offset written by the synchronization service.
class TteClock {
 public:
  TteClock() = default;
  TteClock(FreeRunningOscillator osc, Duration integration_period, Duration cluster_cycle = 0)
      : osc_(osc), integration_period_(integration_period), cluster_cycle_(cluster_cycle) {
    if (integration_period_ <= 0) throw ScenarioError("integration period must be positive");
    if (cluster_cycle_ != 0 && cluster_cycle_ % integration_period_ != 0)
      throw ScenarioError("cluster cycle must be a multiple of the integration period");
  }

  const FreeRunningOscillator& oscillator() const { return osc_; }
  Duration integration_period() const { return integration_period_; }
  Duration cluster_cycle() const { return cluster_cycle_; }
  Duration correction_offset() const { return offset_; }

  /// Local time in picoseconds at true instant t.
  Duration local_at(SimTime t) const {
    return static_cast<Duration>(osc_.ticks_at(t)) * osc_.t_sys() + offset_;
  }

  /// Same, with the partial tick interpolated to the picosecond. Used for
  /// PCF time stamps.
  Duration fine_local_at(SimTime t) const {
    const auto& st = osc_.state();
    const __int128 acc = static_cast<__int128>(t.since_start()) * st.rate() + st.phase;
    return static_cast<Duration>(acc / OscillatorState::kPpbScale) + offset_;
  }

  /// Earliest true instant at which the local time reaches `local`.
  SimTime true_time_of(Duration local) const {
    Duration from_ticks = local - offset_;
    if (from_ticks <= 0) return SimTime{};
    const Duration t_sys = osc_.t_sys();
    auto n = static_cast<std::uint64_t>((from_ticks + t_sys - 1) / t_sys);
    return osc_.time_of_tick(n);
  }

  void apply_correction(Duration delta) { offset_ += delta; }

 private:
  FreeRunningOscillator osc_;
  Duration integration_period_ = kMillisecond;
  Duration cluster_cycle_ = 0;
  Duration offset_ = 0;
};

// ---------------------------------------------------------------------------
// Virtual links and forwarding

struct VirtualLink {
  std::uint32_t vl_id = 0;
  NodeId sender = kNoNode;
  std::vector<NodeId> receivers;
  TrafficClass traffic_class = TrafficClass::TT;
  std::int64_t payload_bytes = 50;
  Duration period = 0;                // TT schedule period
  std::vector<Duration> offsets;      // TT dispatch instants within the period
  Duration bag = 0;                   // RC minimum inter-frame gap
};

struct EthFrame {
  std::uint32_t vl_id = 0;
  TrafficClass traffic_class = TrafficClass::BE;
  std::int64_t payload_bytes = 0;
  NodeId src = kNoNode;
  std::vector<NodeId> dst;
  SimTime created{};

  std::int64_t frame_bytes() const { return frame_bytes_for_payload(payload_bytes); }
};

/// Static per-switch tables: multicast tree egress ports per virtual link,
/// and a destination table for best-effort traffic.
class ForwardingTable {
 public:
  void add_vl(std::uint32_t vl_id, std::vector<std::size_t> ports) {
    std::sort(ports.begin(), ports.end());
    ports.erase(std::unique(ports.begin(), ports.end()), ports.end());
    vl_ports_[vl_id] = std::move(ports);
  }
  void add_destination(NodeId dst, std::size_t port) { dst_ports_[dst] = port; }

  bool knows_vl(std::uint32_t vl_id) const { return vl_ports_.count(vl_id) != 0; }

  /// Output ports for a frame; empty when the frame is unroutable, in which
  /// case the unroutable counter is incremented.
  std::vector<std::size_t> route(const EthFrame& f) {
    if (f.traffic_class == TrafficClass::BE && !vl_ports_.count(f.vl_id)) {
      std::set<std::size_t> out;
      for (NodeId d : f.dst) {
        auto it = dst_ports_.find(d);
        if (it != dst_ports_.end()) out.insert(it->second);
      }
      if (out.empty()) {
        ++unroutable_;
        return {};
      }
      return {out.begin(), out.end()};
    }
    auto it = vl_ports_.find(f.vl_id);
    if (it == vl_ports_.end()) {
      ++unroutable_;
      return {};
    }
    return it->second;
  }

  std::uint64_t unroutable() const { return unroutable_; }

 private:
  std::map<std::uint32_t, std::vector<std::size_t>> vl_ports_;
  std::map<NodeId, std::size_t> dst_ports_;
  std::uint64_t unroutable_ = 0;
};

// ---------------------------------------------------------------------------
// Traffic-class disciplines

/// Rate-constrained admission: frames leave the shaper at least one BAG
/// apart.
class RcShaper {
 public:
  explicit RcShaper(Duration bag = 0) : bag_(bag) {}

  SimTime admit(SimTime now) {
    SimTime at = now;
    if (last_ && *last_ + bag_ > at) at = *last_ + bag_;
    last_ = at;
    return at;
  }

  Duration bag() const { return bag_; }

 private:
  Duration bag_;
  std::optional<SimTime> last_;
};

/// Bounded FIFO for best-effort frames; arrivals at capacity are dropped.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity = 64) : capacity_(capacity) {}

  bool push(T item) {
    if (items_.size() >= capacity_) {
      ++dropped_;
      return false;
    }
    items_.push_back(std::move(item));
    return true;
  }
  bool empty() const { return items_.empty(); }
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  T& front() { return items_.front(); }
  const T& front() const { return items_.front(); }
  T pop() {
    T v = std::move(items_.front());
    items_.pop_front();
    return v;
  }
  std::uint64_t dropped() const { return dropped_; }

 private:
  std::size_t capacity_;
  std::deque<T> items_;
  std::uint64_t dropped_ = 0;
};

/// A lower-class frame may only start when it is finished before the next
/// time-triggered dispatch instant on the same link.
inline bool fits_before_tt(SimTime now, Duration wire_time, std::optional<SimTime> next_tt) {
  return !next_tt || now + wire_time <= *next_tt;
}

/// Expands TT dispatch intervals [offset, offset + wire) of every entry over
/// one hyperperiod and reports the first overlap, if any.
struct TtSlot {
  std::uint32_t vl_id = 0;
  Duration period = 0;
  Duration offset = 0;
  Duration wire = 0;
};

inline std::optional<std::string> find_tt_overlap(std::span<const TtSlot> slots) {
  if (slots.empty()) return std::nullopt;
  Duration hyper = 1;
  for (const auto& s : slots) {
    if (s.period <= 0) return "VL " + std::to_string(s.vl_id) + " has no TT period";
    hyper = std::lcm(hyper, s.period);
  }
  struct Interval {
    Duration start, end;
    std::uint32_t vl;
  };
  std::vector<Interval> all;
  for (const auto& s : slots) {
    for (Duration base = 0; base < hyper; base += s.period) {
      Duration start = base + ((s.offset % s.period) + s.period) % s.period;
      all.push_back({start, start + s.wire, s.vl_id});
    }
  }
  std::sort(all.begin(), all.end(), [](const Interval& a, const Interval& b) { return a.start < b.start; });
  for (std::size_t i = 0; i < all.size(); ++i) {
    const Interval& next = (i + 1 < all.size()) ? all[i + 1] : Interval{all[0].start + hyper, 0, all[0].vl};
    if (all.size() > 1 && all[i].end > next.start) {
      return "TT frames of VL " + std::to_string(all[i].vl) + " and VL " + std::to_string(next.vl) +
             " overlap at " + std::to_string(all[i].start) + " ps";
    }
  }
  return std::nullopt;
}

}  // namespace ttsim::tte
