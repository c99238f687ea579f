#include "ttsim/scenario.hpp"

#include <yaml-cpp/yaml.h>

#include "ttsim/gateway.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace ttsim::scenario {

const char* to_string(NodeKind k) {
  switch (k) {
    case NodeKind::Switch: return "switch";
    case NodeKind::EndSystem: return "end_system";
    case NodeKind::Gateway: return "gateway";
    case NodeKind::Ecu: return "ecu";
  }
  return "?";
}

bool is_ethernet(NodeKind k) { return k != NodeKind::Ecu; }

const NodeDef* Scenario::node(const std::string& n) const {
  for (const auto& x : nodes) {
    if (x.name == n) return &x;
  }
  return nullptr;
}

const VlDef* Scenario::vl(std::uint32_t id) const {
  for (const auto& x : vls) {
    if (x.id == id) return &x;
  }
  return nullptr;
}

const BusDef* Scenario::bus(const std::string& n) const {
  for (const auto& x : buses) {
    if (x.name == n) return &x;
  }
  return nullptr;
}

namespace {

std::string join_errors(const std::string& origin, const std::vector<std::string>& errors) {
  std::string s = origin + ": " + std::to_string(errors.size()) + " error(s)";
  for (const auto& e : errors) s += "\n  " + e;
  return s;
}

}  // namespace

ScenarioError::ScenarioError(const std::string& origin, std::vector<std::string> errors)
    : std::runtime_error(join_errors(origin, errors)), errors_(std::move(errors)) {}

// ---------------------------------------------------------------------------
// Parsing

namespace {

struct ParseFailure {
  std::string message;
};

int line_of(const YAML::Node& n) { return n.Mark().line + 1; }

[[noreturn]] void fail(const YAML::Node& n, const std::string& what) {
  throw ParseFailure{"line " + std::to_string(line_of(n)) + ": " + what};
}

std::string scalar(const YAML::Node& n, const std::string& key) {
  if (!n.IsScalar()) fail(n, key + ": expected a scalar");
  return n.Scalar();
}

Duration duration(const YAML::Node& n, const std::string& key) {
  try {
    return parse_duration(scalar(n, key));
  } catch (const std::invalid_argument& e) {
    fail(n, key + ": " + e.what());
  }
}

double number(const YAML::Node& n, const std::string& key) {
  const std::string s = scalar(n, key);
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(n, key + ": expected a number, got '" + s + "'");
  }
}

std::int64_t integer(const YAML::Node& n, const std::string& key) {
  const std::string s = scalar(n, key);
  try {
    std::size_t used = 0;
    long long v = std::stoll(s, &used, 0);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(n, key + ": expected an integer, got '" + s + "'");
  }
}

std::uint16_t can_id(const YAML::Node& n, const std::string& key) {
  const std::int64_t v = integer(n, key);
  if (v < 0 || v > ttcan::kMaxStandardId) fail(n, key + ": CAN identifier out of range");
  return static_cast<std::uint16_t>(v);
}

void check_keys(const YAML::Node& map, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!map.IsMap()) fail(map, where + ": expected a mapping");
  for (const auto& kv : map) {
    const std::string k = kv.first.Scalar();
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
      fail(kv.first, where + ": unknown key '" + k + "'");
  }
}

YAML::Node require(const YAML::Node& map, const char* key, const std::string& where) {
  if (!map[key]) fail(map, where + ": missing '" + key + "'");
  return map[key];
}

// A list of CAN ids, or {first, count}.
std::vector<std::uint16_t> can_ids(const YAML::Node& n, const std::string& key) {
  std::vector<std::uint16_t> out;
  if (n.IsSequence()) {
    for (const auto& x : n) out.push_back(can_id(x, key));
    return out;
  }
  check_keys(n, key, {"first", "count"});
  const std::uint16_t first = can_id(require(n, "first", key), key);
  const std::int64_t count = integer(require(n, "count", key), key);
  if (count < 0 || first + count - 1 > ttcan::kMaxStandardId) fail(n, key + ": id range out of bounds");
  for (std::int64_t i = 0; i < count; ++i) out.push_back(static_cast<std::uint16_t>(first + i));
  return out;
}

// A list of durations, or {first, step, count} with an optional outer
// {repeat, every} that copies the whole run. List items may be runs too.
std::vector<Duration> offsets(const YAML::Node& n, const std::string& key) {
  std::vector<Duration> out;
  if (n.IsSequence()) {
    for (const auto& x : n) {
      if (x.IsMap()) {
        auto run = offsets(x, key);
        out.insert(out.end(), run.begin(), run.end());
      } else {
        out.push_back(duration(x, key));
      }
    }
    return out;
  }
  check_keys(n, key, {"first", "step", "count", "repeat", "every"});
  const Duration first = duration(require(n, "first", key), key);
  const Duration step = duration(require(n, "step", key), key);
  const std::int64_t count = integer(require(n, "count", key), key);
  const std::int64_t repeat = n["repeat"] ? integer(n["repeat"], key) : 1;
  const Duration every = n["every"] ? duration(n["every"], key) : 0;
  if (count < 0 || repeat < 1 || count * repeat > 100000) fail(n, key + ": count out of range");
  if (repeat > 1 && !n["every"]) fail(n, key + ": repeat needs every");
  for (std::int64_t r = 0; r < repeat; ++r) {
    for (std::int64_t i = 0; i < count; ++i) out.push_back(r * every + first + i * step);
  }
  return out;
}

tte::SyncRole role(const YAML::Node& n) {
  const std::string s = scalar(n, "role");
  if (s == "cm") return tte::SyncRole::CompressionMaster;
  if (s == "sm") return tte::SyncRole::SynchronizationMaster;
  if (s == "sc") return tte::SyncRole::SynchronizationClient;
  fail(n, "role: expected cm, sm or sc");
}

NodeKind node_kind(const YAML::Node& n) {
  const std::string s = scalar(n, "kind");
  if (s == "switch") return NodeKind::Switch;
  if (s == "end_system") return NodeKind::EndSystem;
  if (s == "gateway") return NodeKind::Gateway;
  if (s == "ecu") return NodeKind::Ecu;
  fail(n, "kind: expected switch, end_system, gateway or ecu");
}

tte::TrafficClass traffic_class(const YAML::Node& n) {
  const std::string s = scalar(n, "class");
  if (s == "TT") return tte::TrafficClass::TT;
  if (s == "RC") return tte::TrafficClass::RC;
  if (s == "BE") return tte::TrafficClass::BE;
  fail(n, "class: expected TT, RC or BE");
}

metrics::Category category(const YAML::Node& n) {
  const std::string s = scalar(n, "category");
  if (s == "TTCAN") return metrics::Category::TTCAN;
  if (s == "TT") return metrics::Category::TT;
  if (s == "RC") return metrics::Category::RC;
  if (s == "BE") return metrics::Category::BE;
  fail(n, "category: expected TTCAN, TT, RC or BE");
}

ttcan::WindowKind window_kind(const YAML::Node& n) {
  const std::string s = scalar(n, "kind");
  if (s == "exclusive") return ttcan::WindowKind::Exclusive;
  if (s == "arbitration") return ttcan::WindowKind::Arbitration;
  if (s == "free") return ttcan::WindowKind::Free;
  fail(n, "kind: expected exclusive, arbitration or free");
}

void parse_tte(const YAML::Node& n, TteParams& p) {
  check_keys(n, "tte", {"integration_period", "max_integration_cycle", "cm_window", "hop_slot", "tt_lead", "be_queue"});
  if (n["integration_period"]) p.integration_period = duration(n["integration_period"], "integration_period");
  if (n["max_integration_cycle"])
    p.max_integration_cycle = static_cast<std::uint32_t>(integer(n["max_integration_cycle"], "max_integration_cycle"));
  if (n["cm_window"]) p.cm_window = duration(n["cm_window"], "cm_window");
  if (n["hop_slot"]) p.hop_slot = duration(n["hop_slot"], "hop_slot");
  if (n["tt_lead"]) p.tt_lead = duration(n["tt_lead"], "tt_lead");
  if (n["be_queue"]) p.be_queue = static_cast<std::size_t>(integer(n["be_queue"], "be_queue"));
}

void parse_ttcan(const YAML::Node& n, TtcanParams& p) {
  check_keys(n, "ttcan", {"ntu", "t_cycle", "reference_window", "rows", "stuffing", "bitrate", "propagation", "lead",
                          "tuple_capacity", "smoothing"});
  if (n["ntu"]) p.ntu = duration(n["ntu"], "ntu");
  if (n["t_cycle"]) p.t_cycle = integer(n["t_cycle"], "t_cycle");
  if (n["reference_window"]) p.reference_window = integer(n["reference_window"], "reference_window");
  if (n["rows"]) p.rows = static_cast<std::size_t>(integer(n["rows"], "rows"));
  if (n["stuffing"]) {
    const std::string s = scalar(n["stuffing"], "stuffing");
    if (s == "nominal") p.stuffing = ttcan::StuffingMode::Nominal;
    else if (s == "worst_case") p.stuffing = ttcan::StuffingMode::WorstCase;
    else if (s == "exact") p.stuffing = ttcan::StuffingMode::Exact;
    else fail(n["stuffing"], "stuffing: expected nominal, worst_case or exact");
  }
  if (n["bitrate"]) p.bitrate = integer(n["bitrate"], "bitrate");
  if (n["propagation"]) p.propagation = duration(n["propagation"], "propagation");
  if (n["lead"]) p.lead = integer(n["lead"], "lead");
  if (n["tuple_capacity"]) p.tuple_capacity = static_cast<std::size_t>(integer(n["tuple_capacity"], "tuple_capacity"));
  if (n["smoothing"]) {
    const std::int64_t pct = integer(n["smoothing"], "smoothing");
    if (pct <= 0 || pct > 100) fail(n["smoothing"], "smoothing: percent weight in (0, 100]");
    p.smoothing = Rational(pct, 100);
  }
}

NodeDef parse_node(const YAML::Node& n) {
  check_keys(n, "node", {"name", "kind", "role", "t_sys", "drift_ppm", "phase", "bus"});
  NodeDef d;
  d.line = line_of(n);
  d.name = scalar(require(n, "name", "node"), "name");
  d.kind = node_kind(require(n, "kind", "node " + d.name));
  if (n["role"]) d.role = role(n["role"]);
  if (n["t_sys"]) d.t_sys = duration(n["t_sys"], "t_sys");
  if (n["drift_ppm"]) d.drift_ppm = number(n["drift_ppm"], "drift_ppm");
  if (n["phase"]) d.phase = static_cast<std::uint64_t>(integer(n["phase"], "phase"));
  if (n["bus"]) d.bus = scalar(n["bus"], "bus");
  return d;
}

LinkDef parse_link(const YAML::Node& n) {
  check_keys(n, "link", {"a", "b", "rate", "propagation"});
  LinkDef d;
  d.line = line_of(n);
  d.a = scalar(require(n, "a", "link"), "a");
  d.b = scalar(require(n, "b", "link"), "b");
  if (n["rate"]) d.rate_bps = integer(n["rate"], "rate");
  if (n["propagation"]) d.propagation = duration(n["propagation"], "propagation");
  return d;
}

BusDef parse_bus(const YAML::Node& n) {
  check_keys(n, "bus", {"name", "gateway", "windows"});
  BusDef d;
  d.line = line_of(n);
  d.name = scalar(require(n, "name", "bus"), "name");
  d.gateway = scalar(require(n, "gateway", "bus " + d.name), "gateway");
  if (n["windows"]) {
    for (const auto& w : n["windows"]) {
      check_keys(w, "window", {"kind", "start", "length", "owner", "row", "repeat", "stride", "owner_step"});
      ttcan::WindowSpec base;
      base.kind = w["kind"] ? window_kind(w["kind"]) : ttcan::WindowKind::Exclusive;
      base.start_offset = integer(require(w, "start", "window"), "start");
      base.length = integer(require(w, "length", "window"), "length");
      if (w["owner"]) base.owner_message = can_id(w["owner"], "owner");
      if (w["row"]) base.row = static_cast<std::size_t>(integer(w["row"], "row"));
      const std::int64_t repeat = w["repeat"] ? integer(w["repeat"], "repeat") : 1;
      const std::int64_t stride = w["stride"] ? integer(w["stride"], "stride") : base.length;
      const std::int64_t owner_step = w["owner_step"] ? integer(w["owner_step"], "owner_step") : 0;
      if (repeat < 1 || repeat > 4096) fail(w, "repeat: expected 1..4096");
      for (std::int64_t i = 0; i < repeat; ++i) {
        ttcan::WindowSpec ws = base;
        ws.start_offset += i * stride;
        if (ws.owner_message) {
          const std::int64_t id = *ws.owner_message + i * owner_step;
          if (id < 0 || id > ttcan::kMaxStandardId) fail(w, "owner_step: identifier out of range");
          ws.owner_message = static_cast<std::uint16_t>(id);
        }
        d.windows.push_back(ws);
      }
    }
  }
  return d;
}

VlDef parse_vl(const YAML::Node& n) {
  check_keys(n, "virtual link", {"id", "class", "sender", "receivers", "payload", "period", "offsets", "bag", "tunnel"});
  VlDef d;
  d.line = line_of(n);
  d.id = static_cast<std::uint32_t>(integer(require(n, "id", "virtual link"), "id"));
  const std::string where = "virtual link " + std::to_string(d.id);
  d.cls = traffic_class(require(n, "class", where));
  d.sender = scalar(require(n, "sender", where), "sender");
  const YAML::Node rx = require(n, "receivers", where);
  if (!rx.IsSequence()) fail(rx, "receivers: expected a list");
  for (const auto& r : rx) d.receivers.push_back(scalar(r, "receivers"));
  d.payload = d.cls == tte::TrafficClass::RC ? metrics::default_payload(metrics::Category::RC)
                                             : metrics::default_payload(metrics::Category::TT);
  if (n["payload"]) d.payload = integer(n["payload"], "payload");
  if (n["period"]) d.period = duration(n["period"], "period");
  if (n["offsets"]) d.offsets = offsets(n["offsets"], "offsets");
  if (n["bag"]) d.bag = duration(n["bag"], "bag");
  if (n["tunnel"]) {
    check_keys(n["tunnel"], "tunnel", {"can_ids"});
    d.tunnel = true;
    d.can_ids = can_ids(require(n["tunnel"], "can_ids", "tunnel"), "can_ids");
  }
  return d;
}

FlowDef parse_flow(const YAML::Node& n) {
  check_keys(n, "flow",
             {"id", "category", "src", "dst", "payload", "period", "offset", "offsets", "rate", "vl", "can_ids"});
  FlowDef d;
  d.line = line_of(n);
  d.id = scalar(require(n, "id", "flow"), "id");
  d.category = category(require(n, "category", "flow " + d.id));
  d.src = scalar(require(n, "src", "flow " + d.id), "src");
  d.dst = scalar(require(n, "dst", "flow " + d.id), "dst");
  d.payload = metrics::default_payload(d.category);
  if (n["payload"]) d.payload = integer(n["payload"], "payload");
  if (n["period"]) d.period = duration(n["period"], "period");
  if (n["offset"]) d.offset = duration(n["offset"], "offset");
  if (n["offsets"]) {
    if (n["offset"]) fail(n["offsets"], "offsets: give either offset or offsets");
    d.offsets = offsets(n["offsets"], "offsets");
  }
  if (n["rate"]) d.rate_bps = number(n["rate"], "rate");
  if (n["vl"]) d.vl = static_cast<std::uint32_t>(integer(n["vl"], "vl"));
  if (n["can_ids"]) d.can_ids = can_ids(n["can_ids"], "can_ids");
  return d;
}

SweepDef parse_sweep(const YAML::Node& n, const std::string& name) {
  check_keys(n, "sweep " + name, {"param", "values", "reference_link", "rc_share"});
  SweepDef d;
  d.param = scalar(require(n, "param", "sweep " + name), "param");
  const YAML::Node v = require(n, "values", "sweep " + name);
  if (v.IsSequence()) {
    for (const auto& x : v) d.values.push_back(number(x, "values"));
  } else {
    check_keys(v, "values", {"first", "step", "last"});
    const double first = number(require(v, "first", "values"), "first");
    const double step = number(require(v, "step", "values"), "step");
    const double last = number(require(v, "last", "values"), "last");
    if (step <= 0) fail(v, "values: step must be positive");
    for (int i = 0; first + i * step <= last + 1e-9; ++i) d.values.push_back(first + i * step);
  }
  if (n["reference_link"]) {
    const YAML::Node& r = n["reference_link"];
    if (!r.IsSequence() || r.size() != 2) fail(r, "reference_link: expected [from, to]");
    d.ref_from = scalar(r[0], "reference_link");
    d.ref_to = scalar(r[1], "reference_link");
  }
  if (n["rc_share"]) d.rc_share = number(n["rc_share"], "rc_share");
  return d;
}

Scenario from_yaml(const YAML::Node& root) {
  check_keys(root, "scenario", {"schema_version", "name", "seed", "duration", "warmup", "drain", "sample_period", "tte",
                                "ttcan", "nodes", "links", "buses", "virtual_links", "flows", "sweeps", "pin"});
  Scenario s;
  s.schema_version = static_cast<int>(integer(require(root, "schema_version", "scenario"), "schema_version"));
  if (s.schema_version != kSchemaVersion)
    fail(root["schema_version"], "unsupported schema_version " + std::to_string(s.schema_version) + " (expected " +
                                     std::to_string(kSchemaVersion) + ")");
  s.name = scalar(require(root, "name", "scenario"), "name");
  if (root["seed"]) s.seed = static_cast<std::uint64_t>(integer(root["seed"], "seed"));
  if (root["duration"]) s.duration = duration(root["duration"], "duration");
  if (root["warmup"]) s.warmup = duration(root["warmup"], "warmup");
  if (root["drain"]) s.drain = duration(root["drain"], "drain");
  if (root["sample_period"]) s.sample_period = duration(root["sample_period"], "sample_period");
  if (root["tte"]) parse_tte(root["tte"], s.tte);
  if (root["ttcan"]) parse_ttcan(root["ttcan"], s.ttcan);
  auto each = [&](const char* key, auto fn) {
    if (!root[key]) return;
    if (!root[key].IsSequence()) fail(root[key], std::string(key) + ": expected a list");
    for (const auto& x : root[key]) fn(x);
  };
  each("nodes", [&](const YAML::Node& x) { s.nodes.push_back(parse_node(x)); });
  each("links", [&](const YAML::Node& x) { s.links.push_back(parse_link(x)); });
  each("buses", [&](const YAML::Node& x) { s.buses.push_back(parse_bus(x)); });
  each("virtual_links", [&](const YAML::Node& x) { s.vls.push_back(parse_vl(x)); });
  each("flows", [&](const YAML::Node& x) { s.flows.push_back(parse_flow(x)); });
  each("pin", [&](const YAML::Node& x) { s.pinned.push_back(scalar(x, "pin")); });
  if (root["sweeps"]) {
    const YAML::Node& sw = root["sweeps"];
    if (!sw.IsMap()) fail(sw, "sweeps: expected a mapping");
    for (const auto& kv : sw) {
      const std::string name = kv.first.Scalar();
      s.sweeps[name] = parse_sweep(kv.second, name);
    }
  }
  return s;
}

}  // namespace

Scenario parse_scenario(const std::string& text, const std::string& origin) {
  try {
    YAML::Node root = YAML::Load(text);
    if (!root.IsMap()) throw ScenarioError(origin, {"top level must be a mapping"});
    return from_yaml(root);
  } catch (const YAML::Exception& e) {
    throw ScenarioError(origin, {"line " + std::to_string(e.mark.line + 1) + ": " + e.msg});
  } catch (const ParseFailure& f) {
    throw ScenarioError(origin, {f.message});
  }
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError(path, {"cannot open file"});
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str(), path);
}

// ---------------------------------------------------------------------------
// Derived quantities

Duration basic_cycle_of(const Scenario& s) { return s.ttcan.t_cycle * s.ttcan.ntu; }

Duration cluster_cycle_of(const Scenario& s) {
  std::vector<Duration> periods;
  for (const auto& v : s.vls) {
    if (v.cls == tte::TrafficClass::TT && !v.tunnel) periods.push_back(v.period);
  }
  return tte::cluster_cycle(periods, s.tte.integration_period);
}

Duration warmup_of(const Scenario& s) {
  if (s.warmup) return *s.warmup;
  return std::max(2 * cluster_cycle_of(s), 2 * basic_cycle_of(s));
}

ttcan::SystemMatrix matrix_of(const Scenario& s, const BusDef& bus) {
  return ttcan::build_system_matrix(bus.windows, s.ttcan.t_cycle, s.ttcan.rows, s.ttcan.reference_window);
}

std::vector<std::string> route_nodes(const Scenario& s, const std::string& from, const std::string& to) {
  std::map<std::string, std::vector<std::string>> adj;
  for (const auto& l : s.links) {
    adj[l.a].push_back(l.b);
    adj[l.b].push_back(l.a);
  }
  std::map<std::string, std::string> parent{{from, from}};
  std::deque<std::string> q{from};
  while (!q.empty()) {
    const std::string u = q.front();
    q.pop_front();
    if (u == to) break;
    for (const auto& v : adj[u]) {
      if (parent.emplace(v, u).second) q.push_back(v);
    }
  }
  if (!parent.count(to)) return {};
  std::vector<std::string> path{to};
  while (path.back() != from) path.push_back(parent[path.back()]);
  std::reverse(path.begin(), path.end());
  return path;
}

// ---------------------------------------------------------------------------
// Validation

namespace {

std::string at(int line) { return line > 0 ? "line " + std::to_string(line) + ": " : ""; }

const LinkDef* find_link(const Scenario& s, const std::string& a, const std::string& b) {
  for (const auto& l : s.links) {
    if ((l.a == a && l.b == b) || (l.a == b && l.b == a)) return &l;
  }
  return nullptr;
}

}  // namespace

std::vector<std::string> validate(const Scenario& s) {
  std::vector<std::string> err;
  auto e = [&](int line, const std::string& msg) { err.push_back(at(line) + msg); };

  if (s.duration <= 0) e(0, "duration must be positive");
  if (s.sample_period <= 0) e(0, "sample_period must be positive");
  if (s.drain < 0) e(0, "drain must not be negative");
  if (s.tte.integration_period <= 0) e(0, "tte.integration_period must be positive");
  if (s.tte.max_integration_cycle == 0) e(0, "tte.max_integration_cycle must be positive");
  if (s.tte.cm_window <= 0 || s.tte.cm_window >= s.tte.integration_period)
    e(0, "tte.cm_window must lie inside the integration period");
  if (s.tte.be_queue == 0) e(0, "tte.be_queue must be positive");
  if (s.ttcan.ntu <= 0 || s.ttcan.bitrate <= 0) e(0, "ttcan.ntu and ttcan.bitrate must be positive");
  else if (s.ttcan.ntu % ttcan::kUnitsPerNtu != 0) e(0, "ttcan.ntu must be a multiple of 8 ps");
  if (s.ttcan.t_cycle <= 0 || s.ttcan.t_cycle * ttcan::kUnitsPerNtu >= ttcan::kModulus / 2)
    e(0, "ttcan.t_cycle must be positive and below half the Local_Time range");
  if (s.ttcan.rows == 0 || s.ttcan.rows > 256) e(0, "ttcan.rows must be 1..256");
  if (s.ttcan.tuple_capacity == 0 ||
      1 + s.ttcan.tuple_capacity * gateway::kTupleBytes > static_cast<std::size_t>(tte::kMaxPayloadBytes))
    e(0, "ttcan.tuple_capacity out of range");

  // nodes
  std::set<std::string> names;
  int cms = 0, sms = 0;
  for (const auto& n : s.nodes) {
    if (!names.insert(n.name).second) e(n.line, "duplicate node name '" + n.name + "'");
    if (n.t_sys <= 0) e(n.line, "node " + n.name + ": t_sys must be positive");
    if (std::abs(n.drift_ppm) * 1000.0 > static_cast<double>(OscillatorState::kMaxDriftPpb))
      e(n.line, "node " + n.name + ": drift outside +-10000 ppm");
    if (is_ethernet(n.kind)) {
      if (n.role == tte::SyncRole::CompressionMaster) ++cms;
      if (n.role == tte::SyncRole::SynchronizationMaster) ++sms;
      if (n.role == tte::SyncRole::CompressionMaster && n.kind != NodeKind::Switch)
        e(n.line, "node " + n.name + ": compression master must be a switch");
      if (n.role == tte::SyncRole::SynchronizationMaster && n.kind == NodeKind::Switch)
        e(n.line, "node " + n.name + ": synchronization master cannot be a switch");
    }
    if (n.kind == NodeKind::Gateway || n.kind == NodeKind::Ecu) {
      const BusDef* b = s.bus(n.bus);
      if (!b) e(n.line, "node " + n.name + ": unknown bus '" + n.bus + "'");
      else if (n.kind == NodeKind::Gateway && b->gateway != n.name)
        e(n.line, "node " + n.name + ": bus " + n.bus + " names gateway " + b->gateway);
    }
  }
  if (cms != 1) e(0, "exactly one compression master required, found " + std::to_string(cms));
  if (sms == 0) e(0, "at least one synchronization master required");

  // links: the Ethernet part must be a tree
  std::size_t eth_nodes = 0;
  for (const auto& n : s.nodes) eth_nodes += is_ethernet(n.kind) ? 1 : 0;
  for (const auto& l : s.links) {
    const NodeDef* a = s.node(l.a);
    const NodeDef* b = s.node(l.b);
    if (!a || !b) {
      e(l.line, "link " + l.a + "-" + l.b + ": unknown endpoint");
      continue;
    }
    if (!is_ethernet(a->kind) || !is_ethernet(b->kind)) e(l.line, "link " + l.a + "-" + l.b + ": ECUs have no Ethernet port");
    if (a->kind != NodeKind::Switch && b->kind != NodeKind::Switch)
      e(l.line, "link " + l.a + "-" + l.b + ": one endpoint must be a switch");
    if (l.rate_bps <= 0 || l.propagation < 0) e(l.line, "link " + l.a + "-" + l.b + ": bad rate or propagation");
    if (l.a == l.b) e(l.line, "link " + l.a + "-" + l.b + ": self loop");
  }
  if (err.empty()) {
    if (s.links.size() + 1 != eth_nodes) e(0, "Ethernet topology must be a tree (links = nodes - 1)");
    for (const auto& n : s.nodes) {
      if (!is_ethernet(n.kind)) continue;
      if (route_nodes(s, s.nodes.front().name, n.name).empty() && is_ethernet(s.nodes.front().kind))
        e(n.line, "node " + n.name + " is not connected");
      if (n.kind != NodeKind::Switch) {
        int deg = 0;
        for (const auto& l : s.links) deg += (l.a == n.name || l.b == n.name) ? 1 : 0;
        if (deg != 1) e(n.line, "node " + n.name + ": end systems and gateways need exactly one link");
      }
    }
  }

  // buses
  std::map<std::string, ttcan::SystemMatrix> matrices;
  for (const auto& b : s.buses) {
    const NodeDef* g = s.node(b.gateway);
    if (!g || g->kind != NodeKind::Gateway) e(b.line, "bus " + b.name + ": '" + b.gateway + "' is not a gateway");
    try {
      matrices[b.name] = matrix_of(s, b);
    } catch (const ttcan::ConfigError& x) {
      e(b.line, "bus " + b.name + ": " + x.what());
    }
    const std::int64_t ref_units =
        ttcan::duration_to_units(ttcan::can_frame_duration(8, ttcan::StuffingMode::WorstCase, s.ttcan.bitrate), s.ttcan.ntu);
    if (s.ttcan.reference_window * ttcan::kUnitsPerNtu < ref_units)
      e(b.line, "bus " + b.name + ": reference window shorter than a reference frame");
  }

  // virtual links
  std::set<std::uint32_t> vl_ids;
  for (const auto& v : s.vls) {
    const std::string w = "virtual link " + std::to_string(v.id) + ": ";
    if (!vl_ids.insert(v.id).second) e(v.line, w + "duplicate id");
    const NodeDef* snd = s.node(v.sender);
    if (!snd || !is_ethernet(snd->kind) || snd->kind == NodeKind::Switch)
      e(v.line, w + "sender '" + v.sender + "' is not an end system or gateway");
    if (v.receivers.empty()) e(v.line, w + "no receivers");
    for (const auto& r : v.receivers) {
      const NodeDef* rn = s.node(r);
      if (!rn || !is_ethernet(rn->kind) || rn->kind == NodeKind::Switch)
        e(v.line, w + "receiver '" + r + "' is not an end system or gateway");
    }
    if (v.payload < 0 || v.payload > tte::kMaxPayloadBytes) e(v.line, w + "payload out of range");
    if (v.cls == tte::TrafficClass::TT) {
      if (v.period <= 0) e(v.line, w + "TT period must be positive");
      if (v.offsets.empty()) e(v.line, w + "TT link needs at least one offset");
      for (Duration o : v.offsets) {
        if (o < 0 || o >= v.period) e(v.line, w + "offset " + std::to_string(o) + " ps outside the period");
      }
      if (!v.tunnel && s.tte.integration_period > 0 && v.period % s.tte.integration_period != 0)
        e(v.line, w + "period is not a multiple of the integration period");
      if (v.tunnel) {
        if (!snd || snd->kind != NodeKind::Gateway) e(v.line, w + "tunnel sender must be a gateway");
        for (const auto& r : v.receivers) {
          const NodeDef* rn = s.node(r);
          if (!rn || rn->kind != NodeKind::Gateway) e(v.line, w + "tunnel receiver must be a gateway");
        }
        if (static_cast<std::int64_t>(1 + s.ttcan.tuple_capacity * gateway::kTupleBytes) > v.payload)
          e(v.line, w + "payload too small for " + std::to_string(s.ttcan.tuple_capacity) + " tunnel tuples");
      }
    } else if (v.cls == tte::TrafficClass::RC) {
      if (v.bag <= 0) e(v.line, w + "RC link needs a positive bag");
      if (v.tunnel) e(v.line, w + "tunnels must be TT");
    } else {
      e(v.line, w + "BE traffic is routed by destination, not by virtual link");
    }
  }

  // TT schedule per directed link
  if (err.empty()) {
    std::map<std::pair<std::string, std::string>, std::vector<tte::TtSlot>> slots;
    std::map<std::pair<std::string, std::string>, std::set<std::uint32_t>> seen;
    for (const auto& v : s.vls) {
      if (v.cls != tte::TrafficClass::TT) continue;
      for (const auto& r : v.receivers) {
        auto path = route_nodes(s, v.sender, r);
        if (path.empty()) {
          e(v.line, "virtual link " + std::to_string(v.id) + ": no path to " + r);
          continue;
        }
        for (std::size_t h = 0; h + 1 < path.size(); ++h) {
          auto key = std::make_pair(path[h], path[h + 1]);
          if (!seen[key].insert(v.id).second) continue;
          const LinkDef* l = find_link(s, path[h], path[h + 1]);
          const Duration wire = tte::eth_frame_duration(v.payload, l->rate_bps);
          if (h > 0 && s.tte.hop_slot < wire + l->propagation)
            e(v.line, "tte.hop_slot shorter than one TT frame on " + path[h] + "->" + path[h + 1]);
          for (Duration o : v.offsets) {
            slots[key].push_back({v.id, v.period, (o + static_cast<Duration>(h) * s.tte.hop_slot) % v.period, wire});
          }
        }
      }
    }
    for (auto& [key, list] : slots) {
      try {
        if (auto clash = tte::find_tt_overlap(list)) e(0, "TT overlap on " + key.first + "->" + key.second + ": " + *clash);
      } catch (const std::exception& x) {
        e(0, "TT schedule on " + key.first + "->" + key.second + ": " + x.what());
      }
    }
  }

  // flows
  std::set<std::string> flow_ids;
  std::set<std::uint32_t> tt_vls;
  std::map<std::string, std::set<std::uint16_t>> bus_ids;  // ids transmitted on each bus
  for (const auto& f : s.flows) {
    const std::string w = "flow " + f.id + ": ";
    if (!flow_ids.insert(f.id).second) e(f.line, w + "duplicate id");
    const NodeDef* src = s.node(f.src);
    const NodeDef* dst = s.node(f.dst);
    if (!src) e(f.line, w + "unknown src '" + f.src + "'");
    if (!dst) e(f.line, w + "unknown dst '" + f.dst + "'");
    if (!src || !dst) continue;
    using metrics::Category;
    if (f.category == Category::TTCAN) {
      if (src->kind != NodeKind::Ecu || dst->kind != NodeKind::Ecu) {
        e(f.line, w + "TTCAN flows run between ECUs");
        continue;
      }
      if (src->bus == dst->bus) e(f.line, w + "src and dst share a bus; nothing to tunnel");
      if (f.can_ids.empty()) e(f.line, w + "no can_ids");
      if (f.payload < 0 || f.payload > 8) e(f.line, w + "CAN payload exceeds 8 bytes");
      const BusDef* sb = s.bus(src->bus);
      const BusDef* db = s.bus(dst->bus);
      if (!sb || !db) continue;
      const VlDef* tunnel = nullptr;
      for (const auto& v : s.vls) {
        if (v.tunnel && v.sender == sb->gateway &&
            std::find(v.receivers.begin(), v.receivers.end(), db->gateway) != v.receivers.end())
          tunnel = &v;
      }
      if (!tunnel) e(f.line, w + "no tunnel from " + sb->gateway + " to " + db->gateway);
      for (std::uint16_t id : f.can_ids) {
        const std::string idw = w + "CAN id " + std::to_string(id) + " ";
        if (id == ttcan::kReferenceId) e(f.line, idw + "is reserved for the reference message");
        auto owns = [&](const BusDef& b) {
          return std::any_of(b.windows.begin(), b.windows.end(), [&](const ttcan::WindowSpec& ws) {
            return ws.kind == ttcan::WindowKind::Exclusive && ws.owner_message == id;
          });
        };
        if (!owns(*sb)) e(f.line, idw + "owns no exclusive window on " + sb->name);
        if (!owns(*db)) e(f.line, idw + "owns no exclusive window on " + db->name);
        if (tunnel && std::find(tunnel->can_ids.begin(), tunnel->can_ids.end(), id) == tunnel->can_ids.end())
          e(f.line, idw + "is not carried by tunnel " + std::to_string(tunnel->id));
        if (!bus_ids[sb->name].insert(id).second) e(f.line, idw + "already used on " + sb->name);
        if (!bus_ids[db->name].insert(id).second) e(f.line, idw + "already used on " + db->name);
      }
      continue;
    }
    if (!is_ethernet(src->kind) || src->kind == NodeKind::Switch || !is_ethernet(dst->kind) ||
        dst->kind == NodeKind::Switch) {
      e(f.line, w + "Ethernet flows run between end systems");
      continue;
    }
    if (f.payload < 0 || f.payload > tte::kMaxPayloadBytes) e(f.line, w + "payload out of range");
    if (f.category == Category::BE) {
      if (f.rate_bps <= 0) e(f.line, w + "BE flow needs a positive rate");
      continue;
    }
    const VlDef* v = s.vl(f.vl);
    if (!v) {
      e(f.line, w + "unknown virtual link " + std::to_string(f.vl));
      continue;
    }
    const auto want = f.category == Category::TT ? tte::TrafficClass::TT : tte::TrafficClass::RC;
    if (v->cls != want || v->tunnel) e(f.line, w + "virtual link " + std::to_string(v->id) + " has the wrong class");
    if (v->sender != f.src) e(f.line, w + "src is not the sender of virtual link " + std::to_string(v->id));
    if (std::find(v->receivers.begin(), v->receivers.end(), f.dst) == v->receivers.end())
      e(f.line, w + "dst is not a receiver of virtual link " + std::to_string(v->id));
    if (f.payload > v->payload) e(f.line, w + "payload larger than the virtual link allows");
    if (f.category == Category::RC && f.period < v->bag) e(f.line, w + "period shorter than the bag");
    if (!f.offsets.empty() && f.category != Category::RC) e(f.line, w + "offsets only apply to RC flows");
    for (Duration o : f.offsets) {
      if (o < 0 || o >= f.period) e(f.line, w + "offset " + std::to_string(o) + " ps outside the period");
    }
    if (f.category == Category::TT && !tt_vls.insert(v->id).second)
      e(f.line, w + "virtual link " + std::to_string(v->id) + " already carries a TT flow");
  }

  // tunnels must carry ids some flow uses on both ends
  for (const auto& v : s.vls) {
    if (!v.tunnel) continue;
    std::set<std::uint16_t> uniq(v.can_ids.begin(), v.can_ids.end());
    if (uniq.size() != v.can_ids.size()) e(v.line, "virtual link " + std::to_string(v.id) + ": duplicate tunnel id");
  }

  // sweeps
  for (const auto& [name, sw] : s.sweeps) {
    const std::string w = "sweep " + name + ": ";
    if (sw.values.empty()) e(0, w + "no values");
    if (sw.param == "utilization") {
      if (!find_link(s, sw.ref_from, sw.ref_to)) e(0, w + "reference_link is not a link");
      for (double v : sw.values) {
        if (v <= 0 || v > 100) e(0, w + "utilization values are percent in (0, 100]");
      }
      if (sw.rc_share < 0 || sw.rc_share > 1) e(0, w + "rc_share must lie in [0, 1]");
    } else if (sw.param == "integration_period") {
      for (double v : sw.values) {
        if (v <= 0) e(0, w + "integration periods are positive milliseconds");
      }
    } else {
      e(0, w + "unknown parameter '" + sw.param + "'");
    }
  }
  for (const auto& p : s.pinned) {
    if (p != "utilization" && p != "integration_period") e(0, "pin: unknown parameter '" + p + "'");
  }

  if (err.empty()) {
    try {
      const Duration wu = warmup_of(s);
      if (wu + s.drain >= s.duration) e(0, "duration must exceed warmup + drain");
    } catch (const std::exception& x) {
      e(0, x.what());
    }
  }
  return err;
}

void require_valid(const Scenario& s, const std::string& origin) {
  auto errors = validate(s);
  if (!errors.empty()) throw ScenarioError(origin, std::move(errors));
}

}  // namespace ttsim::scenario
