#include "biscuit/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <regex>
#include <set>
#include <sstream>

#include "biscuit/program_io.hpp"

namespace biscuit {

std::shared_ptr<const InstrumentedProgram> Node::program(const std::string& name) const {
  auto it = programs.find(name);
  if (it == programs.end()) throw ConfigError("unknown program '" + name + "'");
  return it->second;
}

Node make_node(const std::vector<Program>& programs, const TrainOptions& options) {
  std::vector<InstrumentedProgram> hoisted;
  hoisted.reserve(programs.size());
  for (const auto& p : programs) hoisted.push_back(hoist(p));
  TrainResult tr = train(hoisted, options);
  Node node;
  node.models = std::make_shared<const ModelSet>(std::move(tr.models));
  node.diagnostics = std::move(tr.sites);
  for (auto& ip : hoisted) {
    std::string name = ip.program.name;
    node.programs[name] = std::make_shared<const InstrumentedProgram>(std::move(ip));
  }
  return node;
}

Node make_node(const std::vector<Program>& programs, ModelSet models) {
  Node node;
  for (const auto& p : programs) {
    auto ip = std::make_shared<const InstrumentedProgram>(hoist(p));
    for (const auto& site : ip->sites) {
      if (models.find(site.loop_id) == nullptr) {
        throw ConfigError("model set has no entry for site '" + site.loop_id + "'");
      }
    }
    node.programs[p.name] = ip;
  }
  node.models = std::make_shared<const ModelSet>(std::move(models));
  return node;
}

std::string_view to_string(SchedulerKind k) {
  return k == SchedulerKind::Biscuit ? "biscuit" : "baseline";
}

SchedulerKind scheduler_from_string(std::string_view s) {
  if (s == "biscuit") return SchedulerKind::Biscuit;
  if (s == "baseline") return SchedulerKind::Baseline;
  throw ConfigError("unknown scheduler '" + std::string(s) + "'");
}

std::string_view to_string(Role r) {
  switch (r) {
    case Role::Victim: return "victim";
    case Role::Attacker: return "attacker";
    case Role::CoRunner: return "corunner";
  }
  return "?";
}

namespace {

Role role_from_string(std::string_view s) {
  if (s == "victim") return Role::Victim;
  if (s == "attacker") return Role::Attacker;
  if (s == "corunner") return Role::CoRunner;
  throw ConfigError("unknown role '" + std::string(s) + "'");
}

Rng seeded(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

constexpr std::uint64_t kCompositionStream = 0xC0FFEEull;

}  // namespace

Scenario compose_scenario(Regime regime, std::optional<Technique> technique, int count,
                          std::uint64_t seed, SchedulerKind scheduler,
                          const std::string& victim_override) {
  if (count < 2) throw ConfigError("process count must be at least 2");
  Scenario sc;
  sc.regime = regime;
  sc.scheduler = scheduler;
  sc.seed = seed;
  if (technique) sc.attacker = AttackerSpec::make(*technique);

  // Composition depends only on (regime, count, seed) so attacked and
  // no-attack runs share co-runners; the attacker replaces one co-runner.
  Rng rng = seeded(seed, kCompositionStream + static_cast<std::uint64_t>(count));
  std::uniform_int_distribution<std::int64_t> jitter(0, 2);
  const auto victims = suite_victims(regime);
  const auto corunners = suite_corunners(regime);
  std::uniform_int_distribution<std::size_t> pick_v(0, victims.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_c(0, corunners.size() - 1);

  std::string victim = victims[pick_v(rng)];
  if (!victim_override.empty()) {
    victim = victim_override;
    sc.stress = true;
  }
  sc.processes.push_back({victim, Role::Victim, 0, 0});
  std::int64_t attacker_arrival = jitter(rng);
  std::vector<ProcessSpec> others;
  for (int i = 1; i < count; ++i) others.push_back({corunners[pick_c(rng)], Role::CoRunner, jitter(rng), {}});
  if (technique) {
    others.front() = {"attacker", Role::Attacker, attacker_arrival, 0};
  }
  for (auto& o : others) sc.processes.push_back(o);

  char buf[160];
  std::snprintf(buf, sizeof buf, "%s_%s_%s_n%d_s%llu%s", std::string(to_string(scheduler)).c_str(),
                std::string(to_string(regime)).c_str(),
                technique ? std::string(to_string(*technique)).c_str() : "none", count,
                static_cast<unsigned long long>(seed), sc.stress ? "_stress" : "");
  sc.id = buf;
  return sc;
}

double detection_efficiency(std::int64_t attack_start, std::int64_t attack_end,
                            std::int64_t full_duration) {
  if (full_duration <= 0) return 0.0;
  double active = static_cast<double>(std::max<std::int64_t>(0, attack_end - attack_start));
  return std::clamp(1.0 - active / static_cast<double>(full_duration), 0.0, 1.0);
}

int halving_probe_bound(std::size_t suspects) {
  double n = static_cast<double>(std::max<std::size_t>(suspects, 8));
  return static_cast<int>(std::ceil(std::log2(n / 8.0) - 1e-12));
}

namespace {

struct Built {
  std::vector<ProcessState> procs;
};

Built build_processes(const Node& node, const Scenario& sc) {
  Built b;
  double victim_instructions = 0.0;
  for (std::size_t i = 0; i < sc.processes.size(); ++i) {
    const auto& spec = sc.processes[i];
    ProcessState p;
    p.pid = static_cast<int>(i);
    p.arrival = spec.arrival;
    p.pin_socket = spec.pin_socket;
    // Plans depend on (seed, count, pid): attacked and clean runs of one
    // mix share them, different mixes do not.
    Rng rng = seeded(sc.seed, (static_cast<std::uint64_t>(sc.processes.size()) << 32) | i);
    if (spec.role == Role::Attacker) {
      if (victim_instructions <= 0.0) throw ConfigError("attacker needs a preceding victim");
      auto ip = std::make_shared<const InstrumentedProgram>(
          hoist(attacker_program(sc.attacker_length * victim_instructions)));
      p.name = "attacker";
      p.program = ip;
      p.plan = build_plan(*ip, default_bindings(ip->program), rng);
      p.sensitivity = 0.0;
    } else {
      auto ip = node.program(spec.program);
      p.name = spec.program;
      p.program = ip;
      p.models = node.models;
      Bindings bind = draw_bindings(ip->program, rng, sc.data_scale);
      p.plan = build_plan(*ip, bind, rng);
      p.sensitivity = ip->program.sensitivity;
    }
    if (spec.role == Role::Victim) {
      for (const auto& s : p.plan) victim_instructions += s.instructions;
    }
    b.procs.push_back(std::move(p));
  }
  return b;
}

struct RunOutput {
  World world;
  std::vector<int> flagged;
  std::vector<EpisodeRecord> episodes;
  std::int64_t capacity_violations = 0;
  std::vector<std::string> failures;
};

RunOutput simulate(const Node& node, const Scenario& sc, SchedulerKind kind, bool record) {
  Built built = build_processes(node, sc);
  std::optional<AttackerSpec> attacker = sc.attacker;
  if (attacker) {
    auto it = std::find_if(sc.processes.begin(), sc.processes.end(),
                           [](const ProcessSpec& s) { return s.role == Role::Attacker; });
    if (it == sc.processes.end()) throw ConfigError("attack configured without an attacker process");
    attacker->attacker_pid = static_cast<int>(it - sc.processes.begin());
    attacker->victim_pid = 0;
  }
  MachineConfig mc = sc.machine;
  if (kind == SchedulerKind::Baseline) mc.monitor_tax = 0.0;
  RunOutput out{World(mc, std::move(built.procs), attacker), {}, {}, 0, {}};
  World& w = out.world;
  w.set_record_beacons(record);

  BiscuitScheduler biscuit(mc, sc.params);
  BaselineScheduler baseline;
  SchedulerPolicy& policy = kind == SchedulerKind::Biscuit ? static_cast<SchedulerPolicy&>(biscuit)
                                                           : static_cast<SchedulerPolicy&>(baseline);
  std::int64_t independent_violations = 0;
  while (!w.all_finished() && w.tick() < sc.max_ticks) {
    w.step(policy);
    if (kind != SchedulerKind::Biscuit) continue;
    for (int s = 0; s < mc.sockets; ++s) {
      double used = 0.0;
      for (int pid : w.running_on(s)) {
        const auto& p = w.proc(pid);
        if (!p.beaconless && p.open_nest) used += p.open_nest->predicted_upper;
      }
      if (used > mc.llc_capacity * (1.0 + 1e-9)) ++independent_violations;
    }
  }

  if (!w.all_finished()) {
    out.failures.push_back("unfinished processes at max_ticks " + std::to_string(sc.max_ticks));
  }
  if (kind == SchedulerKind::Biscuit) {
    out.flagged = biscuit.flagged();
    out.episodes = biscuit.episodes();
    out.capacity_violations = independent_violations + biscuit.capacity_violations();
    if (out.capacity_violations > 0) {
      out.failures.push_back("capacity exceeded on " + std::to_string(out.capacity_violations) +
                             " socket-ticks");
    }
    for (const auto& v : biscuit.protocol_violations()) out.failures.push_back("bracket: " + v);
  }
  for (const auto& p : w.processes()) {
    double instr = 0.0, misses = 0.0, plan_instr = 0.0;
    for (const auto& h : p.history) {
      instr += h.instructions;
      misses += h.base + h.contention + h.attack;
    }
    for (const auto& s : p.plan) plan_instr += s.instructions;
    auto off = [](double a, double b) { return std::abs(a - b) > 1e-6 * std::max(1.0, std::abs(b)); };
    if (off(instr, p.instructions_retired) || off(misses, p.misses_accumulated) ||
        (p.status == ProcStatus::Finished && off(instr, plan_instr))) {
      out.failures.push_back("conservation: pid " + std::to_string(p.pid));
    }
  }
  return out;
}

std::vector<EpisodeSummary> episodes_from_log(const std::vector<ScheduleEvent>& log,
                                              const std::vector<EpisodeRecord>& records) {
  static const std::regex probe(R"(^probe ep=(\d+) n=(\d+) kind=(halving|linear) round=(\d+)$)");
  std::map<int, EpisodeSummary> eps;
  std::map<int, std::set<std::pair<std::string, int>>> rounds;
  for (const auto& r : records) {
    auto& e = eps[r.id];
    e.id = r.id;
    e.victim = r.victim;
    e.suspects = r.suspects;
    e.flagged = r.flagged.value_or(-1);
    e.aborted = r.aborted;
  }
  for (const auto& ev : log) {
    std::smatch m;
    if (ev.action != "deschedule" || !std::regex_match(ev.reason, m, probe)) continue;
    int id = std::stoi(m[1]);
    auto& e = eps[id];
    e.id = id;
    e.suspects = std::stoul(m[2]);
    if (rounds[id].insert({m[3], std::stoi(m[4])}).second) {
      (m[3] == "halving" ? e.halving_probes : e.linear_probes) += 1;
    }
  }
  std::vector<EpisodeSummary> out;
  for (auto& [id, e] : eps) out.push_back(e);
  return out;
}

}  // namespace

ScenarioResult run_scenario(const Node& node, const Scenario& sc, bool record_traces) {
  if (sc.processes.empty() || sc.processes.front().role != Role::Victim) {
    throw ConfigError("scenario '" + sc.id + "': pid 0 must be the victim");
  }
  RunOutput run = simulate(node, sc, sc.scheduler, record_traces);
  const World& w = run.world;

  ScenarioReport r;
  r.id = sc.id;
  r.scheduler = to_string(sc.scheduler);
  r.regime = to_string(sc.regime);
  r.technique = sc.attacker ? std::string(to_string(sc.attacker->technique)) : "none";
  r.seed = sc.seed;
  r.count = static_cast<int>(sc.processes.size());
  r.stress = sc.stress;
  r.victim_program = sc.processes.front().program;
  r.attacker = w.attacker() ? w.attacker()->attacker_pid : -1;
  r.data_scale = sc.data_scale;
  r.llc_capacity = sc.machine.llc_capacity;
  r.monitor_tax = sc.scheduler == SchedulerKind::Biscuit ? sc.machine.monitor_tax : 0.0;
  r.ticks = w.tick();
  r.flagged = run.flagged;
  r.capacity_violations = run.capacity_violations;
  r.assertion_failures = run.failures;

  for (const auto& p : w.processes()) {
    ProcessRecord pr;
    pr.pid = p.pid;
    pr.program = p.name;
    pr.role = sc.processes[static_cast<std::size_t>(p.pid)].role;
    pr.arrival = p.arrival;
    pr.finish = p.finish_tick;
    pr.instructions = p.instructions_retired;
    pr.misses = p.misses_accumulated;
    pr.flagged = std::find(r.flagged.begin(), r.flagged.end(), p.pid) != r.flagged.end();
    r.processes.push_back(pr);
  }
  const auto& v = w.proc(0);
  r.victim_ticks = v.finish_tick >= 0 ? v.finish_tick - v.arrival + 1 : -1;

  // Confusion over attacker identification.
  if (r.attacker >= 0) {
    bool hit = std::find(r.flagged.begin(), r.flagged.end(), r.attacker) != r.flagged.end();
    r.tp = hit ? 1 : 0;
    r.fp = std::any_of(r.flagged.begin(), r.flagged.end(), [&](int f) { return f != r.attacker; }) ? 1 : 0;
    r.fn = hit ? 0 : 1;
  } else {
    r.fp = r.flagged.empty() ? 0 : 1;
    r.tn = r.flagged.empty() ? 1 : 0;
  }
  for (int f : r.flagged) {
    if (f != r.attacker && w.proc(f).status != ProcStatus::Finished) r.exonerated = false;
  }

  if (r.attacker >= 0) {
    r.attack_active = w.attack_active_span();
    if (sc.scheduler == SchedulerKind::Biscuit) {
      RunOutput twin = simulate(node, sc, SchedulerKind::Baseline, false);
      r.attack_full = twin.world.attack_active_span();
    } else {
      r.attack_full = r.attack_active;
    }
    r.detection_efficiency = detection_efficiency(0, r.attack_active, r.attack_full);
  } else if (!r.flagged.empty()) {
    r.detection_efficiency = 0.0;
  }

  for (const auto& ev : w.schedule_log()) {
    if (ev.action == "deschedule" && ev.reason.rfind("insufficient_cache", 0) == 0) ++r.parks;
    if (ev.action == "migrate") ++r.migrations;
    if (ev.action == "swap") ++r.swaps;
  }
  r.swaps /= 2;  // both partners log the swap
  r.episodes = episodes_from_log(w.schedule_log(), run.episodes);
  for (const auto& e : r.episodes) {
    if (e.halving_probes > halving_probe_bound(e.suspects) ||
        e.linear_probes > static_cast<int>(sc.params.linear_limit)) {
      r.assertion_failures.push_back("probe bound: episode " + std::to_string(e.id));
    }
  }

  ScenarioResult result{std::move(r), std::nullopt};
  if (record_traces) {
    result.traces = ScenarioTraces{beacon_trace_csv(w.beacon_trace()), counter_trace_csv(w),
                                   schedule_log_csv(w.schedule_log())};
  }
  return result;
}

// ---------------------------------------------------------------------------

namespace {

std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

std::string report_csv(const ScenarioReport& r) {
  std::ostringstream o;
  auto kv = [&](const std::string& k, const std::string& v) { o << k << ',' << v << '\n'; };
  kv("report_version", "1");
  kv("id", r.id);
  kv("scheduler", r.scheduler);
  kv("regime", r.regime);
  kv("technique", r.technique);
  kv("seed", std::to_string(r.seed));
  kv("count", std::to_string(r.count));
  kv("stress", r.stress ? "1" : "0");
  kv("victim_program", r.victim_program);
  kv("victim", std::to_string(r.victim));
  kv("attacker", std::to_string(r.attacker));
  kv("data_scale", num(r.data_scale));
  kv("llc_capacity", num(r.llc_capacity));
  kv("monitor_tax", num(r.monitor_tax));
  kv("ticks", std::to_string(r.ticks));
  kv("victim_ticks", std::to_string(r.victim_ticks));
  kv("flagged", join_ints(r.flagged));
  kv("tp", std::to_string(r.tp));
  kv("fp", std::to_string(r.fp));
  kv("fn", std::to_string(r.fn));
  kv("tn", std::to_string(r.tn));
  kv("attack_active", std::to_string(r.attack_active));
  kv("attack_full", std::to_string(r.attack_full));
  kv("detection_efficiency", r.detection_efficiency ? num(*r.detection_efficiency) : "na");
  kv("exonerated", r.exonerated ? "1" : "0");
  kv("capacity_violations", std::to_string(r.capacity_violations));
  kv("placement", std::to_string(r.parks) + ';' + std::to_string(r.migrations) + ';' + std::to_string(r.swaps));
  kv("episodes", std::to_string(r.episodes.size()));
  for (const auto& e : r.episodes) {
    kv("episode." + std::to_string(e.id),
       std::to_string(e.victim) + ';' + std::to_string(e.suspects) + ';' +
           std::to_string(e.halving_probes) + ';' + std::to_string(e.linear_probes) + ';' +
           std::to_string(e.flagged) + ';' + (e.aborted ? "1" : "0"));
  }
  for (const auto& p : r.processes) {
    kv("proc." + std::to_string(p.pid),
       p.program + ';' + std::string(to_string(p.role)) + ';' + std::to_string(p.arrival) + ';' +
           std::to_string(p.finish) + ';' + num(p.instructions) + ';' + num(p.misses) + ';' +
           (p.flagged ? "1" : "0"));
  }
  kv("assertion_failures", std::to_string(r.assertion_failures.size()));
  for (std::size_t i = 0; i < r.assertion_failures.size(); ++i) {
    std::string msg = r.assertion_failures[i];
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    kv("assertion." + std::to_string(i), msg);
  }
  return o.str();
}

ScenarioReport parse_report(const std::string& text) {
  std::map<std::string, std::string> f;
  std::vector<std::pair<std::string, std::string>> ordered;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    auto comma = line.find(',');
    if (comma == std::string::npos) throw ConfigError("report line " + std::to_string(n) + ": no comma");
    std::string k = line.substr(0, comma), v = line.substr(comma + 1);
    if (n == 1 && (k != "report_version" || v != "1")) throw ConfigError("not a version 1 report");
    f[k] = v;
    ordered.emplace_back(k, v);
  }
  auto at = [&](const std::string& k) -> const std::string& {
    auto it = f.find(k);
    if (it == f.end()) throw ConfigError("report missing key '" + k + "'");
    return it->second;
  };
  auto i64 = [&](const std::string& k) { return std::stoll(at(k)); };
  try {
    ScenarioReport r;
    r.id = at("id");
    r.scheduler = at("scheduler");
    r.regime = at("regime");
    r.technique = at("technique");
    r.seed = std::stoull(at("seed"));
    r.count = static_cast<int>(i64("count"));
    r.stress = at("stress") == "1";
    r.victim_program = at("victim_program");
    r.victim = static_cast<int>(i64("victim"));
    r.attacker = static_cast<int>(i64("attacker"));
    r.data_scale = std::stod(at("data_scale"));
    r.llc_capacity = std::stod(at("llc_capacity"));
    r.monitor_tax = std::stod(at("monitor_tax"));
    r.ticks = i64("ticks");
    r.victim_ticks = i64("victim_ticks");
    if (!at("flagged").empty()) {
      for (const auto& s : split(at("flagged"), ';')) r.flagged.push_back(std::stoi(s));
    }
    r.tp = static_cast<int>(i64("tp"));
    r.fp = static_cast<int>(i64("fp"));
    r.fn = static_cast<int>(i64("fn"));
    r.tn = static_cast<int>(i64("tn"));
    r.attack_active = i64("attack_active");
    r.attack_full = i64("attack_full");
    if (at("detection_efficiency") != "na") r.detection_efficiency = std::stod(at("detection_efficiency"));
    r.exonerated = at("exonerated") == "1";
    r.capacity_violations = i64("capacity_violations");
    {
      auto pl = split(at("placement"), ';');
      if (pl.size() != 3) throw ConfigError("bad placement");
      r.parks = std::stoi(pl[0]);
      r.migrations = std::stoi(pl[1]);
      r.swaps = std::stoi(pl[2]);
    }
    for (const auto& [k, v] : ordered) {
      if (k.rfind("episode.", 0) == 0) {
        auto p = split(v, ';');
        if (p.size() != 6) throw ConfigError("bad " + k);
        r.episodes.push_back({std::stoi(k.substr(8)), std::stoi(p[0]), std::stoul(p[1]),
                              std::stoi(p[2]), std::stoi(p[3]), std::stoi(p[4]), p[5] == "1"});
      } else if (k.rfind("proc.", 0) == 0) {
        auto p = split(v, ';');
        if (p.size() != 7) throw ConfigError("bad " + k);
        r.processes.push_back({std::stoi(k.substr(5)), p[0], role_from_string(p[1]), std::stoll(p[2]),
                               std::stoll(p[3]), std::stod(p[4]), std::stod(p[5]), p[6] == "1"});
      } else if (k.rfind("assertion.", 0) == 0) {
        r.assertion_failures.push_back(v);
      }
    }
    if (r.episodes.size() != static_cast<std::size_t>(i64("episodes"))) throw ConfigError("episode count mismatch");
    return r;
  } catch (const std::invalid_argument&) {
    throw ConfigError("report has a non-numeric value");
  } catch (const std::out_of_range&) {
    throw ConfigError("report value out of range");
  }
}

}  // namespace biscuit
