#pragma once

// Scenario matrix: {scheduler} x {technique, none} x {process count} x
// {seed} per regime, plus optional stress scenarios.
//
// Config schema (YAML):
//
//   schedulers: [biscuit, baseline]
//   techniques: [flush_reload, flush_flush, prime_probe, none]
//   counts: [3, 6, 12, 18]
//   seeds: [1, 2, 3]            # or  seed_range: [1, 10]
//   regimes: [accurate, degraded]
//   degraded_data_scale: 0.75   # data-dependent bounds scaled at run time
//   flush_rate: 5               # induction rate of flush techniques
//   max_ticks: 200000
//   workers: 0                  # 0: OpenMP default
//   machine:
//     sockets: 2
//     cores_per_socket: 14
//     llc_capacity: auto        # or a number
//     capacity_factor: 9        # auto = factor x mean typical footprint
//     monitor_tax: 0.05
//     attacker_footprint: 2000
//     rewarm_fraction: 0.05
//   scheduler:
//     drop_delta: 0.15
//     halving_window: 10
//     linear_window: 2
//     mitigation: true
//   train: {seed: 1, grid_repeats: 2, k_repeats: 8, per_loop_k: false}
//   stress:                     # optional; flush_reload vs none, accurate
//     counts: [6, 12]
//     seeds: [1, 2, 3]

#include <optional>
#include <string>
#include <vector>

#include "biscuit/metrics.hpp"
#include "biscuit/scenario.hpp"

namespace biscuit {

struct StressConfig {
  std::vector<int> counts;
  std::vector<std::uint64_t> seeds;
};

struct MatrixConfig {
  std::vector<SchedulerKind> schedulers{SchedulerKind::Biscuit, SchedulerKind::Baseline};
  std::vector<std::optional<Technique>> techniques{Technique::FlushReload, Technique::FlushFlush,
                                                   Technique::PrimeProbe, std::nullopt};
  std::vector<int> counts{3, 6, 12, 18};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<Regime> regimes{Regime::Accurate};
  double degraded_data_scale = 0.65;
  double flush_rate = 5.0;
  std::int64_t max_ticks = 200000;
  int workers = 0;
  MachineConfig machine;
  bool capacity_auto = true;
  double capacity_factor = 15.0;
  SchedulerParams params;
  TrainOptions train;
  std::optional<StressConfig> stress;
};

/// The configuration used when no file is given.
MatrixConfig default_matrix_config();
/// Throws ConfigError with "line N:" context on schema errors.
MatrixConfig parse_matrix_config(const std::string& yaml_text);
MatrixConfig load_matrix_config(const std::string& path);

/// Mean CM(U) of the instrumented segments the regime's programs execute at
/// their default bindings.
double typical_footprint(const Node& node, Regime regime);

std::vector<Scenario> build_scenarios(const MatrixConfig& config, const Node& node);

/// Scenarios run on OpenMP workers; output order follows the input.
std::vector<ScenarioReport> run_matrix(const Node& node, const std::vector<Scenario>& scenarios,
                                       int workers = 0);
/// Single-threaded reference for run_matrix.
std::vector<ScenarioReport> run_matrix_serial(const Node& node, const std::vector<Scenario>& scenarios);

/// Writes <id>.csv per scenario and summary.csv; returns the summary, which
/// is computed from the re-parsed report text.
Score write_reports(const std::string& dir, const std::vector<ScenarioReport>& reports);

/// Reads every report in `dir` (files other than summary.csv).
std::vector<ScenarioReport> read_reports(const std::string& dir);

}  // namespace biscuit
