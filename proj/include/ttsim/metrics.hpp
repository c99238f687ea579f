#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ttsim/kernel.hpp"
#include "ttsim/sim_time.hpp"

namespace ttsim::metrics {

enum class Category : std::uint8_t { TTCAN, TT, RC, BE };

inline const char* to_string(Category c) {
  switch (c) {
    case Category::TTCAN: return "TTCAN";
    case Category::TT: return "TT";
    case Category::RC: return "RC";
    case Category::BE: return "BE";
  }
  return "?";
}

inline std::int64_t default_payload(Category c) {
  switch (c) {
    case Category::TTCAN: return 8;
    case Category::TT: return 50;
    case Category::RC: return 100;
    case Category::BE: return 500;
  }
  return 0;
}

struct FlowSpec {
  std::string flow_id;
  Category category = Category::TT;
  std::int64_t payload_bytes = 0;
  Duration period = 0;             // periodic flows
  double rate_bps = 0;             // BE: offered payload rate
  NodeId src = kNoNode;
  std::vector<NodeId> dst;
  Duration start_offset = 0;
};

struct MetricRecord {
  std::uint32_t flow = 0;
  std::uint64_t seq = 0;
  SimTime t_send{};
  std::optional<SimTime> t_recv;
  bool dropped = false;
};

struct FlowSummary {
  std::optional<double> avg_latency_us;
  std::optional<double> jitter_range_us;
  std::optional<double> stddev_us;
  double throughput_bps = 0;
  std::uint64_t delivered = 0;
  std::uint64_t dropped = 0;
  std::uint64_t generated = 0;
};

/// Latency and loss over frames sent inside [window_start, window_end).
/// Throughput counts payload bits received inside the window, so a full
/// queue at either edge does not bias it.
inline FlowSummary summarize(std::span<const MetricRecord> records, SimTime window_start,
                             SimTime window_end, std::int64_t payload_bytes) {
  if (window_end <= window_start) throw std::invalid_argument("empty observation window");
  FlowSummary s;
  std::vector<Duration> lat;
  std::uint64_t received = 0;
  for (const auto& r : records) {
    if (r.t_recv && *r.t_recv >= window_start && *r.t_recv < window_end) ++received;
    if (r.t_send < window_start || r.t_send >= window_end) continue;
    ++s.generated;
    if (r.dropped) {
      ++s.dropped;
      continue;
    }
    if (!r.t_recv) continue;
    ++s.delivered;
    lat.push_back(*r.t_recv - r.t_send);
  }
  const double window_s = static_cast<double>(window_end - window_start) / kSecond;
  s.throughput_bps = static_cast<double>(received) * payload_bytes * 8.0 / window_s;
  if (lat.empty()) return s;

  long double sum = 0;
  Duration lo = lat.front(), hi = lat.front();
  for (Duration d : lat) {
    sum += d;
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  const long double mean = sum / lat.size();
  long double var = 0;
  for (Duration d : lat) var += (d - mean) * (d - mean);
  var /= lat.size();
  s.avg_latency_us = static_cast<double>(mean / kMicrosecond);
  s.jitter_range_us = to_us(hi - lo);
  s.stddev_us = static_cast<double>(std::sqrt(var) / kMicrosecond);
  return s;
}

/// Busy intervals of one link direction; intervals are appended in time order.
class LinkUsage {
 public:
  void add_busy(SimTime start, SimTime end) {
    if (end <= start) return;
    busy_.push_back({start, end});
  }

  /// Busy wire time inside the window divided by the window length.
  double utilization(SimTime window_start, SimTime window_end) const {
    if (window_end <= window_start) throw std::invalid_argument("empty observation window");
    Duration busy = 0;
    for (const auto& [s, e] : busy_) {
      SimTime a = std::max(s, window_start);
      SimTime b = std::min(e, window_end);
      if (b > a) busy += b - a;
    }
    return static_cast<double>(busy) / static_cast<double>(window_end - window_start);
  }

 private:
  std::vector<std::pair<SimTime, SimTime>> busy_;
};

/// Emission instants of a flow inside [window_start, window_end) on an
/// ideal clock. Periodic flows fire at start_offset + k * period; BE flows
/// draw exponential gaps with mean payload_bits / rate from `rng`.
template <typename Rng>
std::vector<SimTime> generate(const FlowSpec& flow, SimTime window_start, SimTime window_end, Rng& rng) {
  std::vector<SimTime> out;
  if (flow.category == Category::BE) {
    if (flow.rate_bps <= 0) return out;
    const double mean_gap_ps = flow.payload_bytes * 8.0 / flow.rate_bps * kSecond;
    std::exponential_distribution<double> gap(1.0 / mean_gap_ps);
    double t = static_cast<double>(flow.start_offset);
    while (true) {
      t += gap(rng);
      if (t >= static_cast<double>(window_end.ticks)) break;
      if (t >= static_cast<double>(window_start.ticks)) out.push_back(SimTime(static_cast<std::uint64_t>(t)));
    }
    return out;
  }
  if (flow.period <= 0) return out;
  for (Duration t = flow.start_offset; t < window_end.since_start(); t += flow.period) {
    if (t >= window_start.since_start()) out.push_back(SimTime::from(t));
  }
  return out;
}

}  // namespace ttsim::metrics
