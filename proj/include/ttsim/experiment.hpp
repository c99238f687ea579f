#pragma once

// Sweeps and output files on top of net::simulate.

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ttsim/network.hpp"
#include "ttsim/scenario.hpp"

namespace ttsim::experiment {

class ExperimentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kFlowCsvHeader =
    "scenario,sweep_param,sweep_value,flow_id,category,avg_latency_us,jitter_range_us,stddev_us,throughput_bps,"
    "delivered,dropped";

struct Point {
  double value = 0;  // percent for utilization, milliseconds for integration_period
  net::RunResult run;
};

struct SweepResult {
  std::string scenario;
  std::string experiment;
  std::string param;
  std::vector<Point> points;
};

/// Default sweep values when neither the CLI nor the scenario gives any.
std::vector<double> default_values(const std::string& experiment);

/// Copy of `s` with RC and BE load on the reference link scaled so the link
/// is `percent` busy. TT, tunnel and PCF load stay as they are.
scenario::Scenario with_utilization(const scenario::Scenario& s, const scenario::SweepDef& sweep, double percent);
scenario::Scenario with_integration_period(const scenario::Scenario& s, double ms);

/// Wire load on a directed link that the sweep does not touch, bits/s.
double fixed_load_bps(const scenario::Scenario& s, const std::string& from, const std::string& to);

/// Runs fig6 or fig7. Points run on up to `threads` threads (0: hardware
/// concurrency); results do not depend on it.
SweepResult run_sweep(const scenario::Scenario& s, const std::string& experiment,
                      std::optional<std::vector<double>> values = std::nullopt, unsigned threads = 0);

std::string flows_csv(const SweepResult& r);
std::string flows_csv(const net::RunResult& r);  // single run, empty sweep columns
std::string links_csv(const SweepResult& r);
std::string links_csv(const net::RunResult& r);
std::string sync_csv(const net::RunResult& r);
std::string trace_csv(const net::RunResult& r);

/// `--out` if given, else $TTSIM_OUT, else ./out.
std::filesystem::path output_dir(const std::optional<std::string>& cli);
void write_file(const std::filesystem::path& path, const std::string& content);

}  // namespace ttsim::experiment
