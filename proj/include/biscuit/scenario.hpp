#pragma once

// One simulated run: a trained node, a composed process mix, an optional
// attacker and a scheduler. Results are reported as key,value CSV that
// round-trips through parse_report.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "biscuit/machine.hpp"
#include "biscuit/scheduler.hpp"
#include "biscuit/suite.hpp"
#include "biscuit/training.hpp"

namespace biscuit {

/// Instrumented programs plus the model set trained on all of them.
struct Node {
  std::map<std::string, std::shared_ptr<const InstrumentedProgram>> programs;
  std::shared_ptr<const ModelSet> models;
  std::vector<SiteDiagnostics> diagnostics;

  std::shared_ptr<const InstrumentedProgram> program(const std::string& name) const;
};

Node make_node(const std::vector<Program>& programs, const TrainOptions& options);
/// Node over previously trained models; every site needs a model.
Node make_node(const std::vector<Program>& programs, ModelSet models);

enum class SchedulerKind { Biscuit, Baseline };
std::string_view to_string(SchedulerKind k);
SchedulerKind scheduler_from_string(std::string_view s);

enum class Role { Victim, Attacker, CoRunner };
std::string_view to_string(Role r);

struct ProcessSpec {
  std::string program;  ///< ignored for the attacker
  Role role = Role::CoRunner;
  std::int64_t arrival = 0;
  std::optional<int> pin_socket;
};

struct Scenario {
  std::string id;
  Regime regime = Regime::Accurate;
  MachineConfig machine;
  SchedulerParams params;
  SchedulerKind scheduler = SchedulerKind::Biscuit;
  std::optional<AttackerSpec> attacker;
  /// pid order; the victim is pid 0 and the attacker, if any, pid 1.
  std::vector<ProcessSpec> processes;
  std::uint64_t seed = 1;
  double data_scale = 1.0;
  std::int64_t max_ticks = 200000;
  /// Attacker length relative to the victim's instruction count.
  double attacker_length = 1.1;
  bool stress = false;
};

/// Victim pinned to socket 0, attacker next to it, co-runners drawn from the
/// regime's list; `count` includes victim and attacker.
Scenario compose_scenario(Regime regime, std::optional<Technique> technique, int count,
                          std::uint64_t seed, SchedulerKind scheduler,
                          const std::string& victim_override = {});

struct ProcessRecord {
  int pid = 0;
  std::string program;
  Role role = Role::CoRunner;
  std::int64_t arrival = 0;
  std::int64_t finish = -1;
  double instructions = 0.0;
  double misses = 0.0;
  bool flagged = false;
};

struct EpisodeSummary {
  int id = 0;
  int victim = -1;
  std::size_t suspects = 0;
  int halving_probes = 0;  ///< counted from the schedule log
  int linear_probes = 0;
  int flagged = -1;
  bool aborted = false;
};

struct ScenarioReport {
  std::string id;
  std::string scheduler;
  std::string regime;
  std::string technique;  ///< "none" without an attacker
  std::uint64_t seed = 0;
  int count = 0;
  bool stress = false;
  std::string victim_program;
  int victim = 0;
  int attacker = -1;
  double data_scale = 1.0;
  double llc_capacity = 0.0;
  double monitor_tax = 0.0;
  std::int64_t ticks = 0;
  std::int64_t victim_ticks = 0;
  std::vector<int> flagged;
  int tp = 0, fp = 0, fn = 0, tn = 0;
  std::int64_t attack_active = 0;
  std::int64_t attack_full = 0;
  std::optional<double> detection_efficiency;
  bool exonerated = true;  ///< every falsely flagged process finished
  std::vector<EpisodeSummary> episodes;
  std::vector<ProcessRecord> processes;
  std::int64_t capacity_violations = 0;
  /// Placement actions taken by the scheduler.
  int parks = 0, migrations = 0, swaps = 0;
  std::vector<std::string> assertion_failures;
};

struct ScenarioTraces {
  std::string beacons;
  std::string counters;
  std::string schedule;
};

struct ScenarioResult {
  ScenarioReport report;
  std::optional<ScenarioTraces> traces;
};

/// Runs the scenario. Attacked Biscuit runs also execute their baseline twin
/// to obtain the attack's full active duration.
ScenarioResult run_scenario(const Node& node, const Scenario& scenario, bool record_traces = false);

/// D = 1 - active_when_thwarted / active_when_successful, clamped to [0, 1].
double detection_efficiency(std::int64_t attack_start, std::int64_t attack_end,
                            std::int64_t full_duration);

/// Largest number of halving probes an episode with `suspects` may take.
int halving_probe_bound(std::size_t suspects);

std::string report_csv(const ScenarioReport& r);
/// Throws ConfigError on malformed input.
ScenarioReport parse_report(const std::string& text);

}  // namespace biscuit
