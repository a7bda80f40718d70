#pragma once

// Footprint-fitting placement, miss monitoring against CM(U), the
// halving/linear suspect search, and a footprint-blind baseline.

#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "biscuit/machine.hpp"

namespace biscuit {

class SocketLedger {
 public:
  SocketLedger(int socket_id, double capacity);

  int socket_id() const { return socket_id_; }
  double capacity() const { return capacity_; }
  double available() const { return capacity_ - used_; }
  double used() const { return used_; }
  bool fits(double footprint) const { return footprint <= available(); }
  bool holds(int pid) const { return residents_.contains(pid); }
  double footprint_of(int pid) const;
  const std::map<int, double>& residents() const { return residents_; }

  void reserve(int pid, double footprint);
  /// Returns the released footprint (0 if the pid held none).
  double release(int pid);

 private:
  void recompute();

  int socket_id_;
  double capacity_;
  double used_ = 0.0;
  std::map<int, double> residents_;
};

struct SchedulerParams {
  /// Relative MPKI drop that counts as "dropped".
  double drop_delta = 0.15;
  int halving_window = 10;
  int linear_window = 2;
  int widen_ticks = 2;
  std::size_t linear_limit = 8;
  bool mitigation = true;
};

enum class MitigationPhase { BinaryHalving, LinearScan, Resolved };

struct MitigationState {
  int victim = -1;
  std::vector<int> suspects;
  MitigationPhase phase = MitigationPhase::BinaryHalving;
  int probes_taken = 0;
  std::optional<int> flagged;
};

struct EpisodeRecord {
  int id = 0;
  int victim = -1;
  std::size_t suspects = 0;
  int halving_probes = 0;
  int linear_probes = 0;
  int deschedules = 0;
  std::optional<int> flagged;
  bool victim_flagged = false;
  bool aborted = false;
  std::int64_t start_tick = 0;
  std::int64_t end_tick = -1;
};

class BiscuitScheduler : public SchedulerPolicy {
 public:
  BiscuitScheduler(const MachineConfig& machine, SchedulerParams params = {});

  void on_arrival(World& world, int pid) override;
  void on_beacons(World& world, std::vector<BeaconEvent> events) override;
  void on_finish(World& world, int pid) override;
  void after_tick(World& world) override;
  bool monitored() const override { return true; }

  const std::vector<SocketLedger>& ledgers() const { return ledgers_; }
  const std::vector<EpisodeRecord>& episodes() const { return episodes_; }
  const std::vector<int>& flagged() const { return flagged_order_; }
  std::int64_t capacity_violations() const { return capacity_violations_; }
  const std::vector<std::string>& protocol_violations() const { return protocol_violations_; }
  std::optional<MitigationState> mitigation() const;

  /// Pids reported as victims by the miss check this tick (strict >).
  static std::vector<int> detect(const World& world, const std::set<int>& paused);

 private:
  enum class Step { MeasurePrev, Wait };

  struct Episode {
    EpisodeRecord record;
    MitigationState state;
    Step step = Step::MeasurePrev;
    std::vector<int> away;  ///< suspects currently de-scheduled by the probe
    std::int64_t clean_from = 0;
    std::int64_t window_start = 0;
    int window = 0;
    double prev = 0.0;
    bool prev_defined = true;
    bool widened = false;
    std::vector<int> scan_order;
    std::size_t scan_next = 0;
  };

  void handle_enter(World& world, const BeaconEvent& ev);
  void handle_complete(World& world, const BeaconEvent& ev);
  bool try_fit(World& world, int pid, double footprint, bool allow_swap, const std::string& why);
  void retry_parked(World& world);
  void place_waiting(World& world);
  void start_episode(World& world, int victim);
  void progress_episode(World& world);
  void begin_linear(World& world, Episode& ep);
  void finish_episode(World& world, Episode& ep);
  void flag(World& world, Episode& ep, int pid, bool victim_fallback);
  void reschedule_flagged(World& world);
  bool pinned(const World& world, int pid) const;
  bool in_episode(int pid) const;
  std::optional<double> mpki(const World& world, int pid, std::int64_t from, std::int64_t to) const;

  MachineConfig machine_;
  SchedulerParams params_;
  std::vector<SocketLedger> ledgers_;
  int next_socket_ = 0;
  std::deque<int> waiting_;
  std::deque<int> parked_;
  std::map<int, double> parked_footprint_;
  std::set<int> paused_;
  std::optional<Episode> episode_;
  std::deque<int> victim_queue_;
  std::set<int> flagged_;
  std::vector<int> flagged_order_;
  std::optional<int> resumed_flagged_;
  std::map<int, int> offences_;
  std::vector<EpisodeRecord> episodes_;
  std::int64_t capacity_violations_ = 0;
  std::vector<std::string> protocol_violations_;
};

/// Round-robin, footprint-blind placement; no monitoring or mitigation.
class BaselineScheduler : public SchedulerPolicy {
 public:
  BaselineScheduler() = default;

  void on_arrival(World& world, int pid) override;
  void on_beacons(World&, std::vector<BeaconEvent>) override {}
  void on_finish(World& world, int pid) override;
  void after_tick(World&) override {}
  bool monitored() const override { return false; }

 private:
  void place_waiting(World& world);

  int next_socket_ = 0;
  std::deque<int> waiting_;
};

}  // namespace biscuit
