#pragma once

// Hand-built processes for machine and scheduler tests. Every instrumented
// segment belongs to site "L", whose model predicts CM(U) = bound * (1 + k).

#include <memory>
#include <optional>
#include <vector>

#include "biscuit/beacon.hpp"
#include "biscuit/machine.hpp"
#include "biscuit/suite.hpp"

namespace fx {

using namespace biscuit;

inline std::shared_ptr<const InstrumentedProgram> program() {
  static const auto ip = [] {
    Program p;
    p.name = "fx";
    Function main;
    main.name = "main";
    main.body.push_back({make_nest({{"L", BoundSpec::param("N")}}, 1, 0, 0)});
    p.functions["main"] = main;
    p.params["N"] = ParamDef{10, {5, 10}, 0, 0};
    return std::make_shared<const InstrumentedProgram>(hoist(p));
  }();
  return ip;
}

inline std::shared_ptr<const ModelSet> models(double k = 0.0) {
  auto m = std::make_shared<ModelSet>();
  m->k = k;
  m->models["L"] = MissModel{"L", {0.0, 1.0}, k, BeaconKind::Precise, {}};
  return m;
}

inline Segment nest(double instructions, double misses, double bound) {
  return {"L", instructions, misses, {bound}, {bound}};
}

inline Segment plain(double instructions, double misses) { return {"", instructions, misses, {}, {}}; }

inline ProcessState proc(int pid, std::vector<Segment> plan, bool instrumented,
                         std::optional<int> pin = std::nullopt, double sensitivity = 0.02) {
  ProcessState p;
  p.pid = pid;
  p.name = "p" + std::to_string(pid);
  p.program = program();
  if (instrumented) p.models = models();
  p.plan = std::move(plan);
  p.pin_socket = pin;
  p.sensitivity = sensitivity;
  return p;
}

inline MachineConfig machine(double capacity, int cores = 8) {
  MachineConfig m;
  m.sockets = 2;
  m.cores_per_socket = cores;
  m.llc_capacity = capacity;
  return m;
}

/// Steps until every process finished or `limit` ticks passed.
inline void run(World& w, SchedulerPolicy& policy, std::int64_t limit = 100000) {
  while (!w.all_finished() && w.tick() < limit) w.step(policy);
}

inline int count_actions(const World& w, int pid, const std::string& action) {
  int n = 0;
  for (const auto& e : w.schedule_log()) n += e.pid == pid && e.action == action ? 1 : 0;
  return n;
}

}  // namespace fx
