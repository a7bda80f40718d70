#pragma once

// One server node at 1 ms ticks: sockets with cores and a shared LLC,
// processes that replay their execution plans, and an abstract attacker that
// induces misses in a co-socket victim.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "biscuit/beacon.hpp"

namespace biscuit {

struct MachineConfig {
  int sockets = 2;
  int cores_per_socket = 14;
  /// LLC capacity per socket in footprint units (predicted misses).
  double llc_capacity = 1.0e7;
  /// Instructions one core retires in an unperturbed tick.
  double instructions_per_tick = 2.0e6;
  /// Fraction of each tick lost to counter reads while monitored.
  double monitor_tax = 0.0;
  /// Cache footprint the attacker occupies while running.
  double attacker_footprint = 0.0;
  /// Misses charged on resume after a long de-schedule, as a fraction of the
  /// open nest's miss mass.
  double rewarm_fraction = 0.05;
};

enum class Technique { FlushReload, FlushFlush, PrimeProbe };

std::string_view to_string(Technique t);
Technique technique_from_string(std::string_view s);

struct AttackerSpec {
  Technique technique = Technique::FlushReload;
  /// Induced misses per tick as a multiple of the victim's mean baseline rate.
  double induction_rate = 5.0;
  int ramp_ticks = 5;
  int victim_pid = 0;
  int attacker_pid = 1;

  /// Default parameters: flush-based at `flush_rate`, Prime+Probe at a fifth
  /// of it with a longer ramp.
  static AttackerSpec make(Technique t, double flush_rate = 5.0);
};

enum class ProcStatus { Pending, Running, Descheduled, Finished, Quarantined };

std::string_view to_string(ProcStatus s);

struct Placement {
  int socket = 0;
  int core = 0;
};

struct TickSample {
  double base = 0.0;
  double contention = 0.0;
  double attack = 0.0;
  double instructions = 0.0;
};

struct OpenNest {
  std::string loop_id;
  double predicted_upper = 0.0;
};

struct ProcessState {
  int pid = 0;
  std::string name;
  std::shared_ptr<const InstrumentedProgram> program;
  std::shared_ptr<const ModelSet> models;  ///< null: not instrumented
  std::vector<Segment> plan;
  std::size_t segment = 0;
  double segment_done = 0.0;  ///< instructions retired in the current segment
  bool entered = false;       ///< Enter emitted for the current segment
  bool beaconless = false;

  std::optional<Placement> placement;
  ProcStatus status = ProcStatus::Pending;
  std::int64_t arrival = 0;
  std::optional<int> pin_socket;
  double sensitivity = 0.0;
  /// Baseline misses per instruction over the whole plan.
  double mean_miss_rate = 0.0;

  double instructions_retired = 0.0;
  double misses_accumulated = 0.0;
  double misses_in_current_nest = 0.0;
  TickSample totals;
  std::optional<OpenNest> open_nest;
  std::vector<TickSample> history;  ///< one entry per simulated tick
  std::int64_t finish_tick = -1;
  std::int64_t descheduled_since = -1;
  double rewarm_due = 0.0;  ///< extra misses charged on the next running tick
  bool arrived = false;

  bool done() const { return segment >= plan.size(); }
  const Segment* current() const { return done() ? nullptr : &plan[segment]; }
  /// Ground-truth cache footprint while inside an instrumented segment.
  double true_footprint() const;
};

struct ScheduleEvent {
  std::int64_t tick = 0;
  int pid = 0;
  std::string action;  ///< place, migrate, swap, deschedule, resume, flag
  int socket = -1;
  std::string reason;
};

class UndefinedMpki : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class World;

/// Hooks the tick loop calls into; implemented by the schedulers.
class SchedulerPolicy {
 public:
  virtual ~SchedulerPolicy() = default;
  virtual void on_arrival(World& world, int pid) = 0;
  virtual void on_beacons(World& world, std::vector<BeaconEvent> events) = 0;
  virtual void on_finish(World& world, int pid) = 0;
  virtual void after_tick(World& world) = 0;
  virtual bool monitored() const = 0;
};

/// Per-process extra misses for one tick: zero while the summed footprints
/// fit, else overflow fraction (excess / capacity) times each base rate.
std::vector<double> contention_misses(std::span<const double> footprints,
                                      std::span<const double> base_rates, double capacity);

class World {
 public:
  World(MachineConfig config, std::vector<ProcessState> processes,
        std::optional<AttackerSpec> attacker);

  const MachineConfig& config() const { return config_; }
  std::int64_t tick() const { return tick_; }
  std::vector<ProcessState>& processes() { return procs_; }
  const std::vector<ProcessState>& processes() const { return procs_; }
  ProcessState& proc(int pid) { return procs_.at(static_cast<std::size_t>(pid)); }
  const ProcessState& proc(int pid) const { return procs_.at(static_cast<std::size_t>(pid)); }
  const std::optional<AttackerSpec>& attacker() const { return attacker_; }

  bool all_finished() const;
  /// Advances the clock by one tick.
  void step(SchedulerPolicy& policy);

  // Placement primitives used by the schedulers; each logs its action.
  std::optional<int> free_core(int socket) const;
  int free_cores(int socket) const;
  void place(int pid, int socket, const std::string& reason);
  void migrate(int pid, int socket, const std::string& reason);
  void swap(int a, int b, const std::string& reason);
  /// Stops the process; `keep_core` keeps its core reserved.
  void deschedule(int pid, bool keep_core, const std::string& reason,
                  ProcStatus status = ProcStatus::Descheduled);
  void resume(int pid, const std::string& reason);
  void log(int pid, const std::string& action, int socket, const std::string& reason);
  /// Pids running on the socket, ascending.
  std::vector<int> running_on(int socket) const;

  /// 1000 * misses / instructions over the trailing `window` ticks.
  double read_mpki(int pid, int window) const;
  /// As read_mpki over ticks [from, to).
  double read_mpki_range(int pid, std::int64_t from, std::int64_t to) const;

  const std::vector<ScheduleEvent>& schedule_log() const { return log_; }
  const std::vector<BeaconEvent>& beacon_trace() const { return beacon_trace_; }
  void set_record_beacons(bool on) { record_beacons_ = on; }

  // Attack bookkeeping.
  std::int64_t attack_first_tick() const { return attack_first_; }
  std::int64_t attack_last_tick() const { return attack_last_; }
  std::int64_t attack_active_span() const;

 private:
  void emit_enters();
  bool advance(int pid, double contention_ratio, double attack_misses, bool taxed);
  double attack_misses_for(int pid);

  MachineConfig config_;
  std::vector<ProcessState> procs_;
  std::optional<AttackerSpec> attacker_;
  std::vector<std::vector<int>> cores_;  ///< socket -> core -> pid or -1
  std::int64_t tick_ = 0;
  BeaconChannel channel_;
  std::vector<ScheduleEvent> log_;
  std::vector<BeaconEvent> beacon_trace_;
  bool record_beacons_ = false;
  std::int64_t attack_first_ = -1;
  std::int64_t attack_last_ = -1;
};

/// tick,pid,misses_base,misses_contention,misses_attack,instructions
std::string counter_trace_csv(const World& world);

/// tick,pid,action,socket,reason
std::string schedule_log_csv(std::span<const ScheduleEvent> events);

}  // namespace biscuit
