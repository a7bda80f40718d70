#include "biscuit/scheduler.hpp"

#include <algorithm>

namespace biscuit {

SocketLedger::SocketLedger(int socket_id, double capacity)
    : socket_id_(socket_id), capacity_(capacity) {}

double SocketLedger::footprint_of(int pid) const {
  auto it = residents_.find(pid);
  return it == residents_.end() ? 0.0 : it->second;
}

void SocketLedger::reserve(int pid, double footprint) {
  residents_[pid] += footprint;
  recompute();
}

double SocketLedger::release(int pid) {
  auto it = residents_.find(pid);
  if (it == residents_.end()) return 0.0;
  double fp = it->second;
  residents_.erase(it);
  recompute();
  return fp;
}

// Summing in pid order keeps `available` independent of event order.
void SocketLedger::recompute() {
  used_ = 0.0;
  for (const auto& [pid, fp] : residents_) used_ += fp;
}

// ---------------------------------------------------------------------------

namespace {

std::optional<int> pick_round_robin(const World& world, int& next, const ProcessState& p) {
  if (p.pin_socket) {
    return world.free_core(*p.pin_socket) ? std::optional<int>(*p.pin_socket) : std::nullopt;
  }
  int n = world.config().sockets;
  for (int i = 0; i < n; ++i) {
    int s = (next + i) % n;
    if (world.free_core(s)) {
      next = (s + 1) % n;
      return s;
    }
  }
  return std::nullopt;
}

bool active(ProcStatus s) { return s != ProcStatus::Finished; }

}  // namespace

BiscuitScheduler::BiscuitScheduler(const MachineConfig& machine, SchedulerParams params)
    : machine_(machine), params_(params) {
  for (int s = 0; s < machine.sockets; ++s) ledgers_.emplace_back(s, machine.llc_capacity);
}

bool BiscuitScheduler::pinned(const World& world, int pid) const {
  return world.proc(pid).pin_socket.has_value();
}

bool BiscuitScheduler::in_episode(int pid) const {
  if (!episode_) return false;
  const auto& s = episode_->state.suspects;
  return episode_->state.victim == pid || std::find(s.begin(), s.end(), pid) != s.end();
}

std::optional<MitigationState> BiscuitScheduler::mitigation() const {
  if (!episode_) return std::nullopt;
  return episode_->state;
}

std::optional<double> BiscuitScheduler::mpki(const World& world, int pid, std::int64_t from,
                                             std::int64_t to) const {
  try {
    return world.read_mpki_range(pid, from, to);
  } catch (const UndefinedMpki&) {
    return std::nullopt;
  }
}

void BiscuitScheduler::on_arrival(World& world, int pid) {
  if (resumed_flagged_ && world.proc(*resumed_flagged_).status == ProcStatus::Running) {
    int f = *resumed_flagged_;
    for (auto& l : ledgers_) l.release(f);
    ++offences_[f];
    world.deschedule(f, false, "flagged_preempted offences=" + std::to_string(offences_[f]),
                     ProcStatus::Quarantined);
    resumed_flagged_.reset();
  }
  auto s = pick_round_robin(world, next_socket_, world.proc(pid));
  if (s) {
    world.place(pid, *s, "arrival");
  } else {
    waiting_.push_back(pid);
  }
}

void BiscuitScheduler::place_waiting(World& world) {
  for (std::size_t n = waiting_.size(); n > 0; --n) {
    int pid = waiting_.front();
    waiting_.pop_front();
    auto s = pick_round_robin(world, next_socket_, world.proc(pid));
    if (s) {
      world.place(pid, *s, "core_available");
    } else {
      waiting_.push_back(pid);
    }
  }
}

void BiscuitScheduler::on_beacons(World& world, std::vector<BeaconEvent> events) {
  for (const auto& ev : events) {
    if (ev.phase == BeaconPhase::Enter) {
      handle_enter(world, ev);
    } else {
      handle_complete(world, ev);
    }
  }
}

bool BiscuitScheduler::try_fit(World& world, int pid, double fp, bool allow_swap,
                               const std::string& why) {
  const auto& p = world.proc(pid);
  int here = p.placement->socket;
  if (ledgers_[static_cast<std::size_t>(here)].fits(fp)) {
    ledgers_[static_cast<std::size_t>(here)].reserve(pid, fp);
    return true;
  }
  if (pinned(world, pid) || in_episode(pid)) return false;

  std::optional<int> best;
  for (int t = 0; t < machine_.sockets; ++t) {
    const auto& l = ledgers_[static_cast<std::size_t>(t)];
    if (t == here || !world.free_core(t) || !l.fits(fp)) continue;
    if (!best || l.available() > ledgers_[static_cast<std::size_t>(*best)].available()) best = t;
  }
  if (best) {
    world.migrate(pid, *best, why);
    ledgers_[static_cast<std::size_t>(*best)].reserve(pid, fp);
    return true;
  }
  if (!allow_swap) return false;

  auto& mine = ledgers_[static_cast<std::size_t>(here)];
  for (int t = 0; t < machine_.sockets; ++t) {
    if (t == here) continue;
    auto& theirs = ledgers_[static_cast<std::size_t>(t)];
    for (int q : world.running_on(t)) {
      if (pinned(world, q) || in_episode(q) || flagged_.contains(q)) continue;
      double fq = theirs.footprint_of(q);
      if (mine.available() >= fq && theirs.available() + fq >= fp) {
        theirs.release(q);
        if (fq > 0.0) mine.reserve(q, fq);
        theirs.reserve(pid, fp);
        world.swap(pid, q, why);
        return true;
      }
    }
  }
  return false;
}

void BiscuitScheduler::handle_enter(World& world, const BeaconEvent& ev) {
  const auto& p = world.proc(ev.pid);
  if (p.status != ProcStatus::Running || !p.placement) return;
  if (!flagged_.contains(ev.pid)) paused_.erase(ev.pid);
  if (try_fit(world, ev.pid, ev.predicted_upper, true, "enter " + ev.loop_id)) return;
  world.deschedule(ev.pid, true, "insufficient_cache cluster_reschedule");
  parked_.push_back(ev.pid);
  parked_footprint_[ev.pid] = ev.predicted_upper;
}

void BiscuitScheduler::handle_complete(World& world, const BeaconEvent& ev) {
  bool held = false;
  for (auto& l : ledgers_) {
    if (l.holds(ev.pid)) {
      l.release(ev.pid);
      held = true;
    }
  }
  if (!held) {
    protocol_violations_.push_back("tick " + std::to_string(ev.tick) + ": completion of '" +
                                   ev.loop_id + "' by pid " + std::to_string(ev.pid) +
                                   " without a reservation");
  }
  paused_.insert(ev.pid);
  retry_parked(world);
}

void BiscuitScheduler::retry_parked(World& world) {
  for (std::size_t n = parked_.size(); n > 0; --n) {
    int pid = parked_.front();
    parked_.pop_front();
    auto& p = world.proc(pid);
    if (p.status != ProcStatus::Descheduled || !p.placement) continue;
    double fp = parked_footprint_[pid];
    if (try_fit(world, pid, fp, false, "capacity_available")) {
      parked_footprint_.erase(pid);
      world.resume(pid, "capacity_available");
    } else {
      parked_.push_back(pid);
    }
  }
}

void BiscuitScheduler::on_finish(World& world, int pid) {
  for (auto& l : ledgers_) l.release(pid);
  std::erase(parked_, pid);
  std::erase(waiting_, pid);
  paused_.erase(pid);
  if (resumed_flagged_ == pid) resumed_flagged_.reset();
  if (episode_) {
    auto& ep = *episode_;
    if (ep.state.victim == pid) {
      for (int a : ep.away) {
        if (world.proc(a).status == ProcStatus::Descheduled) world.resume(a, "episode_aborted");
      }
      ep.away.clear();
      ep.record.aborted = true;
      finish_episode(world, ep);
    } else {
      std::erase(ep.state.suspects, pid);
      std::erase(ep.away, pid);
    }
  }
  place_waiting(world);
  retry_parked(world);
}

std::vector<int> BiscuitScheduler::detect(const World& world, const std::set<int>& paused) {
  std::vector<int> out;
  for (const auto& p : world.processes()) {
    if (p.status != ProcStatus::Running || p.beaconless || !p.open_nest) continue;
    if (paused.contains(p.pid)) continue;
    if (p.misses_in_current_nest > p.open_nest->predicted_upper) out.push_back(p.pid);
  }
  return out;
}

void BiscuitScheduler::after_tick(World& world) {
  for (const auto& l : ledgers_) {
    if (l.used() > l.capacity() * (1.0 + 1e-12)) ++capacity_violations_;
  }
  if (params_.mitigation) {
    for (int v : detect(world, paused_)) {
      paused_.insert(v);
      if (!episode_) {
        start_episode(world, v);
      } else {
        victim_queue_.push_back(v);
      }
    }
    if (episode_) progress_episode(world);
    while (!episode_ && !victim_queue_.empty()) {
      int v = victim_queue_.front();
      victim_queue_.pop_front();
      if (world.proc(v).status == ProcStatus::Running && !flagged_.contains(v)) {
        start_episode(world, v);
        progress_episode(world);
      }
    }
  }
  reschedule_flagged(world);
}

void BiscuitScheduler::start_episode(World& world, int victim) {
  Episode ep;
  ep.record.id = static_cast<int>(episodes_.size());
  ep.record.victim = victim;
  ep.record.start_tick = world.tick();
  ep.state.victim = victim;
  for (int pid : world.running_on(world.proc(victim).placement->socket)) {
    if (pid != victim && !flagged_.contains(pid)) ep.state.suspects.push_back(pid);
  }
  ep.record.suspects = ep.state.suspects.size();
  episode_ = std::move(ep);
  if (episode_->state.suspects.size() <= params_.linear_limit) begin_linear(world, *episode_);
}

void BiscuitScheduler::begin_linear(World& world, Episode& ep) {
  ep.state.phase = MitigationPhase::LinearScan;
  const std::int64_t t = world.tick();
  std::vector<std::pair<double, int>> ranked;
  for (int s : ep.state.suspects) {
    auto m = mpki(world, s, t + 1 - params_.halving_window, t + 1);
    ranked.emplace_back(m.value_or(-1.0), s);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  ep.scan_order.clear();
  for (const auto& [m, s] : ranked) ep.scan_order.push_back(s);
  ep.scan_next = 0;
  ep.step = Step::MeasurePrev;
}

void BiscuitScheduler::progress_episode(World& world) {
  Episode& ep = *episode_;
  const std::int64_t t = world.tick();
  const int victim = ep.state.victim;
  const bool halving = ep.state.phase == MitigationPhase::BinaryHalving;
  const int w = halving ? params_.halving_window : params_.linear_window;
  const std::string tag = "ep=" + std::to_string(ep.record.id) +
                          " n=" + std::to_string(ep.record.suspects);

  auto skip_finished = [&] {
    while (ep.scan_next < ep.scan_order.size() &&
           world.proc(ep.scan_order[ep.scan_next]).status == ProcStatus::Finished) {
      ++ep.scan_next;
    }
  };

  if (ep.step == Step::MeasurePrev) {
    skip_finished();
    if (!halving && ep.scan_next >= ep.scan_order.size()) {
      flag(world, ep, victim, true);
      return;
    }
    if (t + 1 - w < ep.clean_from) return;
    auto prev = mpki(world, victim, t + 1 - w, t + 1);
    if (!prev) prev = mpki(world, victim, t + 1 - w - params_.widen_ticks, t + 1);
    ep.prev_defined = prev.has_value();
    ep.prev = prev.value_or(0.0);

    ep.away.clear();
    if (halving) {
      const auto& s = ep.state.suspects;
      ep.away.assign(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(s.size() / 2));
      for (int a : ep.away) {
        world.deschedule(a, true,
                         "probe " + tag + " kind=halving round=" +
                             std::to_string(ep.record.halving_probes));
      }
    } else {
      int s = ep.scan_order[ep.scan_next++];
      ep.away.push_back(s);
      world.deschedule(s, true,
                       "probe " + tag + " kind=linear round=" +
                           std::to_string(ep.record.linear_probes));
    }
    ep.record.deschedules += static_cast<int>(ep.away.size());
    ep.window_start = t + 1;
    ep.window = w;
    ep.widened = false;
    ep.step = Step::Wait;
    return;
  }

  if (t < ep.window_start + ep.window - 1) return;
  auto now = mpki(world, victim, ep.window_start, t + 1);
  if (!now && !ep.widened) {
    ep.widened = true;
    ep.window += params_.widen_ticks;
    return;
  }
  bool dropped = ep.prev_defined && now && *now < ep.prev * (1.0 - params_.drop_delta);

  if (halving) {
    ++ep.record.halving_probes;
    ++ep.state.probes_taken;
    std::vector<int> a = ep.away, b;
    for (int s : ep.state.suspects) {
      if (std::find(a.begin(), a.end(), s) == a.end()) b.push_back(s);
    }
    for (int s : a) {
      if (world.proc(s).status == ProcStatus::Descheduled) world.resume(s, "probe_resume " + tag);
    }
    ep.away.clear();
    ep.state.suspects = dropped ? a : b;
    ep.clean_from = t + 1;
    ep.step = Step::MeasurePrev;
    if (ep.state.suspects.size() <= params_.linear_limit) begin_linear(world, ep);
    return;
  }

  ++ep.record.linear_probes;
  ++ep.state.probes_taken;
  int s = ep.away.front();
  ep.away.clear();
  if (dropped) {
    flag(world, ep, s, false);
    return;
  }
  if (world.proc(s).status == ProcStatus::Descheduled) world.resume(s, "probe_resume " + tag);
  ep.clean_from = t + 1;
  ep.step = Step::MeasurePrev;
  skip_finished();
  if (ep.scan_next >= ep.scan_order.size() ||
      ep.record.linear_probes >= static_cast<int>(params_.linear_limit)) {
    flag(world, ep, victim, true);
  }
}

void BiscuitScheduler::flag(World& world, Episode& ep, int pid, bool victim_fallback) {
  auto& p = world.proc(pid);
  int socket = p.placement ? p.placement->socket : -1;
  world.log(pid, "flag", socket,
            std::string(victim_fallback ? "suspected_victim" : "attacker") +
                " ep=" + std::to_string(ep.record.id) +
                " suspects=" + std::to_string(ep.record.suspects));
  for (auto& l : ledgers_) l.release(pid);
  std::erase(parked_, pid);
  world.deschedule(pid, false, "flagged ep=" + std::to_string(ep.record.id));
  flagged_.insert(pid);
  flagged_order_.push_back(pid);
  paused_.insert(pid);
  ep.state.flagged = pid;
  ep.state.phase = MitigationPhase::Resolved;
  ep.record.flagged = pid;
  ep.record.victim_flagged = victim_fallback;
  finish_episode(world, ep);
}

void BiscuitScheduler::finish_episode(World& world, Episode& ep) {
  ep.record.end_tick = world.tick();
  episodes_.push_back(ep.record);
  episode_.reset();
}

void BiscuitScheduler::reschedule_flagged(World& world) {
  if (resumed_flagged_) return;
  std::optional<int> next;
  for (int f : flagged_order_) {
    const auto& p = world.proc(f);
    if (active(p.status) && !p.placement) {
      next = f;
      break;
    }
  }
  if (!next) return;
  for (const auto& p : world.processes()) {
    if (flagged_.contains(p.pid)) {
      if (p.status == ProcStatus::Running) return;
      continue;
    }
    if (p.arrived && active(p.status)) return;
  }
  auto& p = world.proc(*next);
  int socket = p.pin_socket.value_or(0);
  if (!world.free_core(socket)) return;
  world.place(*next, socket, "flagged_idle");
  if (p.open_nest) ledgers_[static_cast<std::size_t>(socket)].reserve(*next, p.open_nest->predicted_upper);
  resumed_flagged_ = *next;
}

// ---------------------------------------------------------------------------

void BaselineScheduler::on_arrival(World& world, int pid) {
  auto s = pick_round_robin(world, next_socket_, world.proc(pid));
  if (s) {
    world.place(pid, *s, "arrival");
  } else {
    waiting_.push_back(pid);
  }
}

void BaselineScheduler::place_waiting(World& world) {
  for (std::size_t n = waiting_.size(); n > 0; --n) {
    int pid = waiting_.front();
    waiting_.pop_front();
    auto s = pick_round_robin(world, next_socket_, world.proc(pid));
    if (s) {
      world.place(pid, *s, "core_available");
    } else {
      waiting_.push_back(pid);
    }
  }
}

void BaselineScheduler::on_finish(World& world, int) { place_waiting(world); }

}  // namespace biscuit
