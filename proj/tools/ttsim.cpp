// ttsim: run scenarios and sweeps, write CSV results.
//
// Errors go to stderr, one per line as `error: <origin>: <message>`, and
// the exit code is 1 (2 for usage errors).

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ttsim/experiment.hpp"
#include "ttsim/network.hpp"
#include "ttsim/scenario.hpp"

namespace {

using namespace ttsim;
namespace ex = ttsim::experiment;

void report(const std::string& origin, const std::string& msg) {
  std::cerr << "error: " << origin << ": " << msg << '\n';
}

std::filesystem::path out_file(const std::optional<std::string>& dir, const std::string& scenario,
                               const std::string& suffix) {
  return ex::output_dir(dir) / (scenario + "_" + suffix + ".csv");
}

int cmd_validate(const std::string& path) {
  const auto s = scenario::load_scenario(path);
  const auto errors = scenario::validate(s);
  for (const auto& e : errors) report(path, e);
  if (!errors.empty()) return 1;
  std::cout << "ok " << s.name << ": " << s.nodes.size() << " nodes, " << s.links.size() << " links, "
            << s.buses.size() << " buses, " << s.vls.size() << " virtual links, " << s.flows.size() << " flows\n";
  return 0;
}

int cmd_run(const std::string& path, std::optional<std::uint64_t> seed, std::optional<std::string> duration,
            std::optional<std::string> out, std::optional<std::string> trace) {
  const auto s = scenario::load_scenario(path);
  scenario::require_valid(s, path);
  net::RunOptions opt;
  opt.seed = seed;
  if (duration) opt.duration = parse_duration(*duration);
  opt.event_trace = trace.has_value();
  const auto r = net::simulate(s, opt);
  const auto flows = out_file(out, s.name, "single");
  ex::write_file(flows, ex::flows_csv(r));
  ex::write_file(out_file(out, s.name, "single_links"), ex::links_csv(r));
  if (trace) ex::write_file(*trace, ex::trace_csv(r));
  std::cout << flows.string() << '\n';
  return 0;
}

int cmd_experiment(const std::string& name, const std::string& path, std::optional<std::vector<double>> sweep,
                   std::optional<std::string> out, unsigned threads) {
  const auto s = scenario::load_scenario(path);
  scenario::require_valid(s, path);
  if (name == "sync-trace") {
    if (sweep) throw ex::ExperimentError("sync-trace takes no --sweep");
    net::RunOptions opt;
    opt.sync_trace = true;
    const auto r = net::simulate(s, opt);
    const auto file = out_file(out, s.name, name);
    ex::write_file(file, ex::sync_csv(r));
    std::cout << file.string() << '\n';
    return 0;
  }
  const auto r = ex::run_sweep(s, name, sweep, threads);
  const auto file = out_file(out, s.name, name);
  ex::write_file(file, ex::flows_csv(r));
  ex::write_file(out_file(out, s.name, name + "_links"), ex::links_csv(r));
  std::cout << file.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time-triggered Ethernet / TT-CAN network simulator"};
  app.require_subcommand(1);

  std::string scn;
  std::optional<std::string> out;

  auto* run = app.add_subcommand("run", "Run one scenario");
  std::optional<std::uint64_t> seed;
  std::optional<std::string> duration, trace;
  run->add_option("scenario", scn, "Scenario file (.scn)")->required();
  run->add_option("--seed", seed, "Override the scenario seed");
  run->add_option("--duration", duration, "Override the simulated time, e.g. 5s or 250ms");
  run->add_option("--out", out, "Output directory (default $TTSIM_OUT or ./out)");
  run->add_option("--trace", trace, "Write an event trace to this file");

  auto* exp = app.add_subcommand("experiment", "Run fig6, fig7 or sync-trace");
  std::string exp_name;
  std::optional<std::vector<double>> sweep;
  unsigned threads = 0;
  exp->add_option("name", exp_name, "fig6 | fig7 | sync-trace")
      ->required()
      ->check(CLI::IsMember({"fig6", "fig7", "sync-trace"}));
  exp->add_option("scenario", scn, "Scenario file (.scn)")->required();
  exp->add_option("--sweep", sweep, "Sweep values: percent for fig6, ms for fig7")->delimiter(',');
  exp->add_option("--out", out, "Output directory (default $TTSIM_OUT or ./out)");
  exp->add_option("--threads", threads, "Parallel sweep points (0: all cores)");

  auto* val = app.add_subcommand("validate", "Check a scenario and exit");
  val->add_option("scenario", scn, "Scenario file (.scn)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*run) return cmd_run(scn, seed, duration, out, trace);
    if (*exp) return cmd_experiment(exp_name, scn, sweep, out, threads);
    return cmd_validate(scn);
  } catch (const scenario::ScenarioError& e) {
    for (const auto& msg : e.errors()) report(scn, msg);
    if (e.errors().empty()) report(scn, e.what());
  } catch (const std::exception& e) {
    report(scn, e.what());
  }
  return 1;
}
