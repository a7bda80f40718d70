#include "biscuit/machine.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace biscuit {

namespace {
constexpr double kSegmentEps = 1e-6;
// A de-schedule shorter than this leaves the cache warm (probe windows are
// at most 12 ticks).
constexpr std::int64_t kRewarmAfterTicks = 20;
}  // namespace

std::string_view to_string(Technique t) {
  switch (t) {
    case Technique::FlushReload: return "flush_reload";
    case Technique::FlushFlush: return "flush_flush";
    case Technique::PrimeProbe: return "prime_probe";
  }
  return "?";
}

Technique technique_from_string(std::string_view s) {
  if (s == "flush_reload") return Technique::FlushReload;
  if (s == "flush_flush") return Technique::FlushFlush;
  if (s == "prime_probe") return Technique::PrimeProbe;
  throw std::invalid_argument("unknown technique '" + std::string(s) + "'");
}

AttackerSpec AttackerSpec::make(Technique t, double flush_rate) {
  AttackerSpec a;
  a.technique = t;
  if (t == Technique::PrimeProbe) {
    a.induction_rate = flush_rate / 5.0;
    a.ramp_ticks = 40;
  } else {
    a.induction_rate = flush_rate;
    a.ramp_ticks = 5;
  }
  return a;
}

std::string_view to_string(ProcStatus s) {
  switch (s) {
    case ProcStatus::Pending: return "pending";
    case ProcStatus::Running: return "running";
    case ProcStatus::Descheduled: return "descheduled";
    case ProcStatus::Finished: return "finished";
    case ProcStatus::Quarantined: return "quarantined";
  }
  return "?";
}

double ProcessState::true_footprint() const {
  const Segment* s = current();
  return s != nullptr && !s->site_id.empty() ? s->misses : 0.0;
}

std::vector<double> contention_misses(std::span<const double> footprints,
                                      std::span<const double> base_rates, double capacity) {
  double total = 0.0;
  for (double f : footprints) total += f;
  double overflow = capacity > 0.0 ? std::max(0.0, total - capacity) / capacity : 0.0;
  std::vector<double> out(base_rates.size());
  for (std::size_t i = 0; i < base_rates.size(); ++i) out[i] = overflow * base_rates[i];
  return out;
}

World::World(MachineConfig config, std::vector<ProcessState> processes,
             std::optional<AttackerSpec> attacker)
    : config_(config), procs_(std::move(processes)), attacker_(attacker) {
  if (config_.sockets < 1 || config_.cores_per_socket < 1) {
    throw std::invalid_argument("machine needs at least one socket and core");
  }
  cores_.assign(static_cast<std::size_t>(config_.sockets),
                std::vector<int>(static_cast<std::size_t>(config_.cores_per_socket), -1));
  for (std::size_t i = 0; i < procs_.size(); ++i) {
    auto& p = procs_[i];
    if (p.pid != static_cast<int>(i)) throw std::invalid_argument("pids must be 0..n-1 in order");
    double instr = 0.0, misses = 0.0;
    for (const auto& s : p.plan) {
      instr += s.instructions;
      misses += s.misses;
    }
    p.mean_miss_rate = instr > 0.0 ? misses / instr : 0.0;
    if (!p.models) p.beaconless = true;
  }
}

bool World::all_finished() const {
  return std::all_of(procs_.begin(), procs_.end(),
                     [](const ProcessState& p) { return p.status == ProcStatus::Finished; });
}

std::optional<int> World::free_core(int socket) const {
  const auto& row = cores_.at(static_cast<std::size_t>(socket));
  for (std::size_t c = 0; c < row.size(); ++c) {
    if (row[c] < 0) return static_cast<int>(c);
  }
  return std::nullopt;
}

int World::free_cores(int socket) const {
  const auto& row = cores_.at(static_cast<std::size_t>(socket));
  return static_cast<int>(std::count(row.begin(), row.end(), -1));
}

void World::log(int pid, const std::string& action, int socket, const std::string& reason) {
  log_.push_back({tick_, pid, action, socket, reason});
}

namespace {
void charge_rewarm(ProcessState& p, std::int64_t now, double fraction) {
  if (p.descheduled_since >= 0 && now - p.descheduled_since > kRewarmAfterTicks) {
    p.rewarm_due += fraction * p.true_footprint();
  }
  p.descheduled_since = -1;
}
}  // namespace

void World::place(int pid, int socket, const std::string& reason) {
  auto& p = proc(pid);
  if (p.placement) throw std::logic_error("place: pid " + std::to_string(pid) + " already placed");
  auto core = free_core(socket);
  if (!core) throw std::logic_error("place: no free core on socket " + std::to_string(socket));
  cores_[static_cast<std::size_t>(socket)][static_cast<std::size_t>(*core)] = pid;
  p.placement = Placement{socket, *core};
  p.status = ProcStatus::Running;
  charge_rewarm(p, tick_, config_.rewarm_fraction);
  log(pid, "place", socket, reason);
}

void World::migrate(int pid, int socket, const std::string& reason) {
  auto& p = proc(pid);
  auto core = free_core(socket);
  if (!p.placement || !core) throw std::logic_error("migrate: invalid move");
  cores_[static_cast<std::size_t>(p.placement->socket)][static_cast<std::size_t>(p.placement->core)] = -1;
  cores_[static_cast<std::size_t>(socket)][static_cast<std::size_t>(*core)] = pid;
  p.placement = Placement{socket, *core};
  log(pid, "migrate", socket, reason);
}

void World::swap(int a, int b, const std::string& reason) {
  auto& pa = proc(a);
  auto& pb = proc(b);
  if (!pa.placement || !pb.placement) throw std::logic_error("swap: unplaced process");
  std::swap(pa.placement, pb.placement);
  cores_[static_cast<std::size_t>(pa.placement->socket)][static_cast<std::size_t>(pa.placement->core)] = a;
  cores_[static_cast<std::size_t>(pb.placement->socket)][static_cast<std::size_t>(pb.placement->core)] = b;
  log(a, "swap", pa.placement->socket, reason + " with=" + std::to_string(b));
  log(b, "swap", pb.placement->socket, reason + " with=" + std::to_string(a));
}

void World::deschedule(int pid, bool keep_core, const std::string& reason, ProcStatus status) {
  auto& p = proc(pid);
  int socket = p.placement ? p.placement->socket : -1;
  if (!keep_core && p.placement) {
    cores_[static_cast<std::size_t>(p.placement->socket)][static_cast<std::size_t>(p.placement->core)] = -1;
    p.placement.reset();
  }
  p.status = status;
  p.descheduled_since = tick_;
  log(pid, "deschedule", socket, reason);
}

void World::resume(int pid, const std::string& reason) {
  auto& p = proc(pid);
  if (!p.placement) throw std::logic_error("resume: pid " + std::to_string(pid) + " has no core");
  p.status = ProcStatus::Running;
  charge_rewarm(p, tick_, config_.rewarm_fraction);
  log(pid, "resume", p.placement->socket, reason);
}

std::vector<int> World::running_on(int socket) const {
  std::vector<int> out;
  for (const auto& p : procs_) {
    if (p.status == ProcStatus::Running && p.placement && p.placement->socket == socket) {
      out.push_back(p.pid);
    }
  }
  return out;
}

double World::read_mpki_range(int pid, std::int64_t from, std::int64_t to) const {
  const auto& h = proc(pid).history;
  from = std::max<std::int64_t>(0, from);
  to = std::min<std::int64_t>(static_cast<std::int64_t>(h.size()), to);
  double misses = 0.0, instr = 0.0;
  for (std::int64_t t = from; t < to; ++t) {
    const auto& s = h[static_cast<std::size_t>(t)];
    misses += s.base + s.contention + s.attack;
    instr += s.instructions;
  }
  if (instr <= 0.0) {
    throw UndefinedMpki("pid " + std::to_string(pid) + ": no instructions in window");
  }
  return 1000.0 * misses / instr;
}

double World::read_mpki(int pid, int window) const {
  auto end = static_cast<std::int64_t>(proc(pid).history.size());
  return read_mpki_range(pid, end - window, end);
}

std::int64_t World::attack_active_span() const {
  return attack_first_ < 0 ? 0 : attack_last_ + 1 - attack_first_;
}

void World::emit_enters() {
  for (auto& p : procs_) {
    if (p.status != ProcStatus::Running || p.beaconless || p.entered) continue;
    const Segment* s = p.current();
    if (s == nullptr || s->site_id.empty()) continue;
    const BeaconSite* site = p.program->site(s->site_id);
    if (site == nullptr) {
      p.beaconless = true;
      continue;
    }
    try {
      auto ev = emit_enter(p.pid, *site, *p.models, s->visible_bounds, tick_, channel_);
      p.open_nest = OpenNest{ev.loop_id, ev.predicted_upper};
      if (record_beacons_) beacon_trace_.push_back(ev);
    } catch (const ProtocolError&) {
      // A process whose beacons cannot be evaluated is treated as
      // non-instrumented.
      p.beaconless = true;
      continue;
    }
    p.entered = true;
    p.misses_in_current_nest = 0.0;
  }
}

double World::attack_misses_for(int pid) {
  if (!attacker_ || attacker_->victim_pid != pid) return 0.0;
  const auto& v = proc(attacker_->victim_pid);
  const auto& a = proc(attacker_->attacker_pid);
  bool active = v.status == ProcStatus::Running && a.status == ProcStatus::Running &&
                v.placement && a.placement && v.placement->socket == a.placement->socket;
  if (!active) return 0.0;
  if (attack_first_ < 0) attack_first_ = tick_;
  attack_last_ = tick_;
  // The ramp models set-up (e.g. eviction-set construction) and is paid once.
  double ramp = std::min(1.0, static_cast<double>(tick_ - attack_first_ + 1) /
                                  std::max(1, attacker_->ramp_ticks));
  return ramp * attacker_->induction_rate * v.mean_miss_rate * config_.instructions_per_tick;
}

bool World::advance(int pid, double contention_ratio, double attack_misses, bool taxed) {
  auto& p = proc(pid);
  TickSample sample;
  double nominal = config_.instructions_per_tick * (taxed ? 1.0 - config_.monitor_tax : 1.0);

  const Segment* seg = p.current();
  double rate = seg != nullptr && seg->instructions > 0.0 ? seg->misses / seg->instructions : 0.0;
  double ref = rate > 0.0 ? rate : p.mean_miss_rate;
  double extra = contention_ratio;
  if (ref > 0.0) extra += attack_misses / (ref * nominal);
  double budget = nominal / (1.0 + p.sensitivity * extra);
  const double full_budget = budget;

  double rewarm = p.rewarm_due;
  p.rewarm_due = 0.0;
  bool finished = p.done();
  while (budget > 0.0 && !p.done()) {
    const Segment& s = p.plan[p.segment];
    double r = s.instructions > 0.0 ? s.misses / s.instructions : 0.0;
    double take = std::min(budget, s.instructions - p.segment_done);
    double share = full_budget > 0.0 ? take / full_budget : 0.0;
    double base = take * r;
    double cont = contention_ratio * base + share * rewarm;
    double att = share * attack_misses;
    sample.base += base;
    sample.contention += cont;
    sample.attack += att;
    sample.instructions += take;
    if (p.entered) p.misses_in_current_nest += base + cont + att;
    budget -= take;
    p.segment_done += take;

    if (p.segment_done >= s.instructions - kSegmentEps) {
      if (p.entered) {
        auto ev = emit_complete(pid, s.site_id, tick_, channel_);
        if (record_beacons_) beacon_trace_.push_back(ev);
      }
      p.entered = false;
      p.open_nest.reset();
      ++p.segment;
      p.segment_done = 0.0;
      if (p.done()) {
        finished = true;
      } else if (!p.beaconless && !p.plan[p.segment].site_id.empty()) {
        break;  // the next Enter is handled at the start of the next tick
      }
    }
  }

  p.history.back() = sample;
  p.totals.base += sample.base;
  p.totals.contention += sample.contention;
  p.totals.attack += sample.attack;
  p.totals.instructions += sample.instructions;
  p.instructions_retired += sample.instructions;
  p.misses_accumulated += sample.base + sample.contention + sample.attack;
  if (finished) {
    p.status = ProcStatus::Finished;
    p.finish_tick = tick_ + 1;
    if (p.placement) {
      cores_[static_cast<std::size_t>(p.placement->socket)][static_cast<std::size_t>(p.placement->core)] = -1;
      p.placement.reset();
    }
  }
  return finished;
}

void World::step(SchedulerPolicy& policy) {
  for (auto& p : procs_) {
    if (!p.arrived && p.arrival <= tick_) {
      p.arrived = true;
      policy.on_arrival(*this, p.pid);
    }
  }

  emit_enters();
  if (!channel_.empty()) policy.on_beacons(*this, channel_.drain());

  for (auto& p : procs_) p.history.emplace_back();

  // Contention ratio per socket from ground-truth footprints.
  std::vector<double> ratio(static_cast<std::size_t>(config_.sockets), 0.0);
  for (int s = 0; s < config_.sockets; ++s) {
    std::vector<double> fp;
    for (int pid : running_on(s)) {
      const auto& p = proc(pid);
      fp.push_back(attacker_ && attacker_->attacker_pid == pid ? config_.attacker_footprint
                                                                : p.true_footprint());
    }
    std::vector<double> unit{1.0};
    ratio[static_cast<std::size_t>(s)] = contention_misses(fp, unit, config_.llc_capacity)[0];
  }

  std::vector<double> attack(procs_.size(), 0.0);
  for (auto& p : procs_) attack[static_cast<std::size_t>(p.pid)] = attack_misses_for(p.pid);

  std::vector<int> finished;
  for (auto& p : procs_) {
    if (p.status != ProcStatus::Running) continue;
    bool taxed = policy.monitored() && !p.beaconless;
    double r = ratio[static_cast<std::size_t>(p.placement->socket)];
    if (advance(p.pid, r, attack[static_cast<std::size_t>(p.pid)], taxed)) finished.push_back(p.pid);
  }

  if (!channel_.empty()) policy.on_beacons(*this, channel_.drain());
  for (int pid : finished) policy.on_finish(*this, pid);
  policy.after_tick(*this);
  ++tick_;
}

std::string counter_trace_csv(const World& world) {
  std::ostringstream out;
  out << "tick,pid,misses_base,misses_contention,misses_attack,instructions\n";
  char buf[160];
  std::size_t ticks = 0;
  for (const auto& p : world.processes()) ticks = std::max(ticks, p.history.size());
  for (std::size_t t = 0; t < ticks; ++t) {
    for (const auto& p : world.processes()) {
      if (t >= p.history.size()) continue;
      const auto& s = p.history[t];
      if (s.instructions <= 0.0 && s.base + s.contention + s.attack <= 0.0) continue;
      std::snprintf(buf, sizeof buf, "%zu,%d,%.3f,%.3f,%.3f,%.1f\n", t, p.pid, s.base,
                    s.contention, s.attack, s.instructions);
      out << buf;
    }
  }
  return out.str();
}

std::string schedule_log_csv(std::span<const ScheduleEvent> events) {
  std::ostringstream out;
  out << "tick,pid,action,socket,reason\n";
  for (const auto& e : events) {
    out << e.tick << ',' << e.pid << ',' << e.action << ',' << e.socket << ',' << e.reason << '\n';
  }
  return out.str();
}

}  // namespace biscuit
