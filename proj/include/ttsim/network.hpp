#pragma once

// Whole-network model: TT-Ethernet switches and end systems, TT-CAN buses
// and ECUs, gateways bridging the two. One call runs one scenario.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ttsim/kernel.hpp"
#include "ttsim/metrics.hpp"
#include "ttsim/scenario.hpp"
#include "ttsim/ttcan.hpp"

namespace ttsim::net {

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<Duration> duration;
  bool event_trace = false;
  bool sync_trace = false;
};

struct FlowResult {
  std::string flow_id;
  metrics::Category category = metrics::Category::TT;
  metrics::FlowSummary summary;
};

struct LinkResult {
  std::string from, to;
  double utilization = 0;
};

// Clock error of one node at one sample instant, picoseconds.
struct SyncSample {
  SimTime at{};
  std::uint32_t node = 0;
  Duration error_vs_cm = 0;
  Duration error_vs_true = 0;
};

struct ResyncLog {
  SimTime at{};
  std::uint32_t gateway = 0;
  std::int32_t t_gap = 0;  // NTU/8 units
  std::optional<double> df;
  ttcan::CorrectionStatus status = ttcan::CorrectionStatus::Applied;
};

// One reference message handled by an ECU. NTU lengths are the effective
// values in picoseconds of true time.
struct ReferenceLog {
  SimTime at{};
  std::uint32_t node = 0;
  std::optional<double> df;
  double node_ntu_ps = 0;
  double master_ntu_ps = 0;
  std::int32_t step = 0;
};

struct Counters {
  std::uint64_t unroutable = 0;
  std::uint64_t tt_slots_empty = 0;
  std::uint64_t tt_overruns = 0;
  std::uint64_t tunnel_slots_empty = 0;
  std::uint64_t be_dropped = 0;
  std::uint64_t can_window_misses = 0;
  std::uint64_t can_tuples_filtered = 0;
  std::uint64_t cm_empty_rounds = 0;
  std::uint64_t pcf_corrections = 0;
};

struct RunResult {
  std::string scenario;
  SimTime window_start{}, window_end{};
  std::vector<std::string> node_names;
  std::vector<FlowResult> flows;
  std::vector<LinkResult> links;
  std::vector<SyncSample> sync;
  std::vector<ResyncLog> resyncs;
  std::vector<ReferenceLog> references;
  Counters counters;
  EventTrace trace;
  std::uint64_t events = 0;

  const FlowResult* flow(const std::string& id) const;
  double link_utilization(const std::string& from, const std::string& to) const;
};

/// Runs a validated scenario. Throws scenario::ScenarioError if it is not.
RunResult simulate(const scenario::Scenario& s, const RunOptions& opt = {});

}  // namespace ttsim::net
