#pragma once

// Scenario description: topology, clocks, schedules and traffic. Loaded
// from YAML (.scn) and checked before a run.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ttsim/metrics.hpp"
#include "ttsim/rational.hpp"
#include "ttsim/sim_time.hpp"
#include "ttsim/ttcan.hpp"
#include "ttsim/tte.hpp"

namespace ttsim::scenario {

inline constexpr int kSchemaVersion = 1;

enum class NodeKind : std::uint8_t { Switch, EndSystem, Gateway, Ecu };

const char* to_string(NodeKind k);

struct NodeDef {
  std::string name;
  NodeKind kind = NodeKind::EndSystem;
  tte::SyncRole role = tte::SyncRole::SynchronizationClient;
  Duration t_sys = 6250;
  double drift_ppm = 0;
  std::uint64_t phase = 0;
  std::string bus;  // gateways and ECUs
  int line = 0;
};

struct LinkDef {
  std::string a, b;
  std::int64_t rate_bps = 100'000'000;
  Duration propagation = 100 * kNanosecond;
  int line = 0;
};

struct BusDef {
  std::string name;
  std::string gateway;
  std::vector<ttcan::WindowSpec> windows;
  int line = 0;
};

struct VlDef {
  std::uint32_t id = 0;
  tte::TrafficClass cls = tte::TrafficClass::TT;
  std::string sender;
  std::vector<std::string> receivers;
  std::int64_t payload = 50;
  Duration period = 0;
  std::vector<Duration> offsets;
  Duration bag = 0;
  bool tunnel = false;
  std::vector<std::uint16_t> can_ids;  // tunnel only
  int line = 0;
};

struct FlowDef {
  std::string id;
  metrics::Category category = metrics::Category::TT;
  std::string src, dst;
  std::int64_t payload = 0;
  Duration period = 0;   // RC
  Duration offset = 0;   // RC phase, BE start
  std::vector<Duration> offsets;  // RC: several phases per period
  double rate_bps = 0;   // BE payload rate
  std::uint32_t vl = 0;  // TT, RC
  std::vector<std::uint16_t> can_ids;  // TTCAN
  int line = 0;
};

struct TteParams {
  Duration integration_period = 3 * kMillisecond;
  std::uint32_t max_integration_cycle = 64;
  Duration cm_window = 100 * kMicrosecond;
  Duration hop_slot = 20 * kMicrosecond;
  Duration tt_lead = 50 * kMicrosecond;
  std::size_t be_queue = 64;
};

struct TtcanParams {
  Duration ntu = 100 * kNanosecond;
  std::int64_t t_cycle = 245'760;        // NTU
  std::int64_t reference_window = 1'500;  // NTU
  std::size_t rows = 1;
  ttcan::StuffingMode stuffing = ttcan::StuffingMode::Nominal;
  std::int64_t bitrate = 1'000'000;
  Duration propagation = 100 * kNanosecond;
  std::int64_t lead = 1'000;  // NTU between frame creation and its window
  std::size_t tuple_capacity = 4;
  std::optional<Rational> smoothing;
};

struct SweepDef {
  std::string param;  // utilization (percent) or integration_period (ms)
  std::vector<double> values;
  std::string ref_from, ref_to;  // reference link for utilization
  double rc_share = 1.0 / 3.0;
};

struct Scenario {
  int schema_version = kSchemaVersion;
  std::string name;
  std::uint64_t seed = 1;
  Duration duration = kSecond;
  std::optional<Duration> warmup;
  Duration drain = 30 * kMillisecond;
  Duration sample_period = 250 * kMicrosecond;
  TteParams tte;
  TtcanParams ttcan;
  std::vector<NodeDef> nodes;
  std::vector<LinkDef> links;
  std::vector<BusDef> buses;
  std::vector<VlDef> vls;
  std::vector<FlowDef> flows;
  std::map<std::string, SweepDef> sweeps;  // keyed by experiment name
  std::vector<std::string> pinned;

  const NodeDef* node(const std::string& name) const;
  const VlDef* vl(std::uint32_t id) const;
  const BusDef* bus(const std::string& name) const;
};

class ScenarioError : public std::runtime_error {
 public:
  ScenarioError(const std::string& origin, std::vector<std::string> errors);
  const std::vector<std::string>& errors() const { return errors_; }

 private:
  std::vector<std::string> errors_;
};

/// Parses YAML text. Syntax and type errors throw ScenarioError with line
/// numbers; semantic checks are left to validate().
Scenario parse_scenario(const std::string& text, const std::string& origin = "<string>");
Scenario load_scenario(const std::string& path);

/// All semantic problems found, empty when the scenario can run.
std::vector<std::string> validate(const Scenario& s);
void require_valid(const Scenario& s, const std::string& origin = "<scenario>");

/// LCM of native TT periods and the integration period.
Duration cluster_cycle_of(const Scenario& s);
Duration basic_cycle_of(const Scenario& s);
/// Explicit warm-up, else two cluster cycles and at least two basic cycles.
Duration warmup_of(const Scenario& s);

ttcan::SystemMatrix matrix_of(const Scenario& s, const BusDef& bus);

/// Node names from `from` to `to` along the Ethernet tree, both included.
/// Empty when unreachable.
std::vector<std::string> route_nodes(const Scenario& s, const std::string& from, const std::string& to);

bool is_ethernet(NodeKind k);

}  // namespace ttsim::scenario
