#include "ttsim/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

namespace ttsim::experiment {

namespace {

using scenario::Scenario;
using scenario::SweepDef;

const char* param_of(const std::string& experiment) {
  if (experiment == "fig6") return "utilization";
  if (experiment == "fig7") return "integration_period";
  throw ExperimentError("unknown experiment '" + experiment + "' (expected fig6, fig7 or sync-trace)");
}

// True when the directed hop from -> to lies on the path a -> b.
bool crosses(const Scenario& s, const std::string& a, const std::string& b, const std::string& from,
             const std::string& to) {
  const auto path = scenario::route_nodes(s, a, b);
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    if (path[i] == from && path[i + 1] == to) return true;
  }
  return false;
}

bool vl_crosses(const Scenario& s, const scenario::VlDef& v, const std::string& from, const std::string& to) {
  for (const auto& r : v.receivers) {
    if (crosses(s, v.sender, r, from, to)) return true;
  }
  return false;
}

double wire_bits(std::int64_t payload) {
  return static_cast<double>(tte::frame_bytes_for_payload(payload) + tte::kPreambleAndGapBytes) * 8.0;
}

double seconds(Duration d) { return static_cast<double>(d) / kSecond; }

std::int64_t link_rate(const Scenario& s, const std::string& a, const std::string& b) {
  for (const auto& l : s.links) {
    if ((l.a == a && l.b == b) || (l.a == b && l.b == a)) return l.rate_bps;
  }
  throw ExperimentError("no link between " + a + " and " + b);
}

double rc_load(const scenario::FlowDef& f) {
  const double per_period = f.offsets.empty() ? 1.0 : static_cast<double>(f.offsets.size());
  return per_period * wire_bits(f.payload) / seconds(f.period);
}

double be_load(const scenario::FlowDef& f) { return f.rate_bps / (8.0 * f.payload) * wire_bits(f.payload); }

std::string fmt(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string opt_fmt(const std::optional<double>& v, int decimals) { return v ? fmt(*v, decimals) : std::string(); }

std::string sweep_value(double v) {
  // shortest exact-looking form: 10, 2.5, 0.125
  std::string s = fmt(v, 6);
  while (!s.empty() && s.back() == '0') s.pop_back();
  if (!s.empty() && s.back() == '.') s.pop_back();
  return s;
}

void flow_rows(std::ostringstream& os, const net::RunResult& r, const std::string& param, const std::string& value) {
  for (const auto& f : r.flows) {
    const auto& m = f.summary;
    os << r.scenario << ',' << param << ',' << value << ',' << f.flow_id << ',' << metrics::to_string(f.category)
       << ',' << opt_fmt(m.avg_latency_us, 6) << ',' << opt_fmt(m.jitter_range_us, 6) << ','
       << opt_fmt(m.stddev_us, 6) << ',' << fmt(m.throughput_bps, 3) << ',' << m.delivered << ',' << m.dropped
       << '\n';
  }
}

void link_rows(std::ostringstream& os, const net::RunResult& r, const std::string& param, const std::string& value) {
  for (const auto& l : r.links) {
    os << r.scenario << ',' << param << ',' << value << ',' << l.from << ',' << l.to << ',' << fmt(l.utilization, 6)
       << '\n';
  }
}

constexpr const char* kLinkCsvHeader = "scenario,sweep_param,sweep_value,from,to,utilization";

}  // namespace

std::vector<double> default_values(const std::string& experiment) {
  if (experiment == "fig6") {
    std::vector<double> v;
    for (int u = 10; u <= 95; u += 5) v.push_back(u);
    return v;
  }
  if (experiment == "fig7") return {1, 3, 10};
  throw ExperimentError("unknown experiment '" + experiment + "'");
}

double fixed_load_bps(const Scenario& s, const std::string& from, const std::string& to) {
  double bps = 0;
  for (const auto& v : s.vls) {
    if (v.cls != tte::TrafficClass::TT || !vl_crosses(s, v, from, to)) continue;
    bps += static_cast<double>(v.offsets.size()) * wire_bits(v.payload) / seconds(v.period);
  }
  // PCFs: masters towards the compression master, then its broadcast
  std::string cm;
  for (const auto& n : s.nodes) {
    if (n.role == tte::SyncRole::CompressionMaster) cm = n.name;
  }
  int pcfs = 0;
  for (const auto& n : s.nodes) {
    if (!scenario::is_ethernet(n.kind)) continue;
    if (n.role == tte::SyncRole::SynchronizationMaster && crosses(s, n.name, cm, from, to)) ++pcfs;
    if (n.name != cm && crosses(s, cm, n.name, from, to)) {
      const auto path = scenario::route_nodes(s, cm, n.name);
      if (path.size() >= 2 && path[path.size() - 2] == from && path.back() == to) ++pcfs;
    }
  }
  // a switch floods the broadcast once per port, so count each hop once
  bps += pcfs * static_cast<double>(tte::kPcfFrameBytes + tte::kPreambleAndGapBytes) * 8.0 /
         seconds(s.tte.integration_period);
  return bps;
}

Scenario with_utilization(const Scenario& s, const SweepDef& sweep, double percent) {
  const double capacity = static_cast<double>(link_rate(s, sweep.ref_from, sweep.ref_to));
  const double target = percent / 100.0 * capacity - fixed_load_bps(s, sweep.ref_from, sweep.ref_to);
  if (target <= 0) {
    throw ExperimentError("utilization " + sweep_value(percent) + "% is below the fixed TT and PCF load on " +
                          sweep.ref_from + "->" + sweep.ref_to);
  }
  double rc_base = 0, be_base = 0;
  for (const auto& f : s.flows) {
    if (!crosses(s, f.src, f.dst, sweep.ref_from, sweep.ref_to)) continue;
    if (f.category == metrics::Category::RC) rc_base += rc_load(f);
    if (f.category == metrics::Category::BE) be_base += be_load(f);
  }
  if (rc_base == 0 && be_base == 0) {
    throw ExperimentError("no RC or BE flow crosses " + sweep.ref_from + "->" + sweep.ref_to);
  }
  double rc_share = sweep.rc_share;
  if (rc_base == 0) rc_share = 0;
  if (be_base == 0) rc_share = 1;
  const double rc_scale = rc_base > 0 ? rc_share * target / rc_base : 1.0;
  const double be_scale = be_base > 0 ? (1.0 - rc_share) * target / be_base : 1.0;

  Scenario out = s;
  for (auto& f : out.flows) {
    if (!crosses(s, f.src, f.dst, sweep.ref_from, sweep.ref_to)) continue;
    if (f.category == metrics::Category::RC) {
      if (!f.offsets.empty()) throw ExperimentError("flow " + f.id + ": RC flows with offsets cannot be scaled");
      f.period = static_cast<Duration>(std::llround(static_cast<double>(f.period) / rc_scale));
      const Duration bag = s.vl(f.vl) ? s.vl(f.vl)->bag : 0;
      if (f.period < bag) {
        throw ExperimentError("utilization " + sweep_value(percent) + "% needs flow " + f.id +
                              " faster than its bag allows");
      }
      f.offset %= f.period;
    } else if (f.category == metrics::Category::BE) {
      f.rate_bps *= be_scale;
    }
  }
  scenario::require_valid(out, s.name);
  return out;
}

Scenario with_integration_period(const Scenario& s, double ms) {
  Scenario out = s;
  out.tte.integration_period = static_cast<Duration>(std::llround(ms * kMillisecond));
  scenario::require_valid(out, s.name);
  return out;
}

SweepResult run_sweep(const Scenario& s, const std::string& experiment, std::optional<std::vector<double>> values,
                      unsigned threads) {
  const std::string param = param_of(experiment);
  if (std::find(s.pinned.begin(), s.pinned.end(), param) != s.pinned.end()) {
    throw ExperimentError("scenario " + s.name + " pins " + param + "; " + experiment + " cannot sweep it");
  }
  SweepDef sweep;
  sweep.param = param;
  if (auto it = s.sweeps.find(experiment); it != s.sweeps.end()) {
    if (it->second.param != param) {
      throw ExperimentError("sweep " + experiment + " in " + s.name + " varies " + it->second.param + ", expected " +
                            param);
    }
    sweep = it->second;
  } else if (experiment == "fig6") {
    throw ExperimentError("scenario " + s.name + " has no fig6 sweep naming a reference_link");
  }
  if (!values) values = sweep.values.empty() ? default_values(experiment) : sweep.values;
  if (values->empty()) throw ExperimentError("empty sweep");

  // Build every point first so bad values fail before any run starts.
  std::vector<Scenario> inputs;
  for (double v : *values) {
    inputs.push_back(experiment == "fig6" ? with_utilization(s, sweep, v) : with_integration_period(s, v));
  }

  SweepResult out{s.name, experiment, param, std::vector<Point>(values->size())};
  std::vector<std::exception_ptr> errors(values->size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < inputs.size(); i = next++) {
      try {
        out.points[i] = {(*values)[i], net::simulate(inputs[i])};
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(inputs.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::string flows_csv(const SweepResult& r) {
  std::ostringstream os;
  os << kFlowCsvHeader << '\n';
  for (const auto& p : r.points) flow_rows(os, p.run, r.param, sweep_value(p.value));
  return os.str();
}

std::string flows_csv(const net::RunResult& r) {
  std::ostringstream os;
  os << kFlowCsvHeader << '\n';
  flow_rows(os, r, "", "");
  return os.str();
}

std::string links_csv(const SweepResult& r) {
  std::ostringstream os;
  os << kLinkCsvHeader << '\n';
  for (const auto& p : r.points) link_rows(os, p.run, r.param, sweep_value(p.value));
  return os.str();
}

std::string links_csv(const net::RunResult& r) {
  std::ostringstream os;
  os << kLinkCsvHeader << '\n';
  link_rows(os, r, "", "");
  return os.str();
}

std::string sync_csv(const net::RunResult& r) {
  std::ostringstream os;
  os << "scenario,time_us,node,error_vs_cm_us,error_vs_true_us\n";
  for (const auto& x : r.sync) {
    os << r.scenario << ',' << fmt(to_us(x.at.since_start()), 6) << ',' << r.node_names[x.node] << ','
       << fmt(to_us(x.error_vs_cm), 6) << ',' << fmt(to_us(x.error_vs_true), 6) << '\n';
  }
  return os.str();
}

std::string trace_csv(const net::RunResult& r) {
  std::ostringstream os;
  os << "time_ps,node,event\n";
  write_trace(os, r.trace, [&](NodeId n) { return n < r.node_names.size() ? r.node_names[n] : std::string("-"); });
  return os.str();
}

std::filesystem::path output_dir(const std::optional<std::string>& cli) {
  if (cli && !cli->empty()) return *cli;
  if (const char* env = std::getenv("TTSIM_OUT"); env && *env) return env;
  return "out";
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ExperimentError("cannot write " + path.string());
  f << content;
  if (!f) throw ExperimentError("error writing " + path.string());
}

}  // namespace ttsim::experiment
