#include "biscuit/beacon.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>

namespace biscuit {

namespace {

struct ChainCall {
  const Function* callee = nullptr;
  const LoopNest* nest = nullptr;
  const CallSite* call = nullptr;
};

// The callee nest that extends a nest's feature chain: the innermost loop
// body holds exactly one unconditional call, to a non-recursive function
// whose body is one loop nest plus straight-line work.
std::optional<ChainCall> chain_call(const Program& p, const CallGraph& g, const LoopNest& nest) {
  const Loop* inner = loop_chain(nest.root).back();
  const CallSite* only = nullptr;
  int calls = 0;
  for (const auto& s : inner->body) {
    if (const auto* c = std::get_if<CallSite>(&s.node)) {
      ++calls;
      only = c;
    }
  }
  if (calls != 1 || only->conditional() || only->rounds || g.recursive(only->target)) {
    return std::nullopt;
  }
  const Function& callee = p.functions.at(only->target);
  const LoopNest* found = nullptr;
  for (const auto& item : callee.body) {
    if (const auto* n = std::get_if<LoopNest>(&item.node)) {
      if (found != nullptr) return std::nullopt;
      found = n;
    } else if (std::holds_alternative<CallSite>(item.node)) {
      return std::nullopt;
    }
  }
  if (found == nullptr) return std::nullopt;
  return ChainCall{&callee, found, only};
}

void loop_ids(const Loop& l, std::vector<std::string>& out) {
  out.push_back(l.id);
  for (const auto& s : l.body) {
    if (const auto* inner = std::get_if<Loop>(&s.node)) loop_ids(*inner, out);
  }
}

void calls_in(const Loop& l, std::vector<const CallSite*>& out) {
  for (const auto& s : l.body) {
    if (const auto* inner = std::get_if<Loop>(&s.node)) {
      calls_in(*inner, out);
    } else if (const auto* c = std::get_if<CallSite>(&s.node)) {
      out.push_back(c);
    }
  }
}

std::set<std::string> reachable_from(const CallGraph& g, const std::string& start) {
  std::set<std::string> seen{start};
  std::vector<std::string> stack{start};
  while (!stack.empty()) {
    std::string f = stack.back();
    stack.pop_back();
    for (const auto& e : g.edges) {
      if (e.caller == f && seen.insert(e.callee).second) stack.push_back(e.callee);
    }
  }
  return seen;
}

// Adds every loop (and its pre-header location) of the given functions.
void absorb_functions(const Program& p, const std::set<std::string>& fns, BeaconSite& site) {
  for (const auto& name : fns) {
    for (const auto& item : p.functions.at(name).body) {
      if (const auto* n = std::get_if<LoopNest>(&item.node)) {
        site.hoisted_from.push_back({name, "preheader:" + n->root.id});
        loop_ids(n->root, site.covers);
      }
    }
  }
}

bool bound_visible(const BoundSpec& b, const std::set<std::string>& hidden) {
  if (b.is_constant()) return true;
  if (const auto* p = std::get_if<ParamBound>(&b.source)) return !hidden.contains(p->name);
  return false;
}

BeaconSite nest_site(const Program& p, const CallGraph& g, const Function& fn,
                     const LoopNest& nest) {
  BeaconSite site;
  site.loop_id = nest.root.id;
  site.location = {fn.name, "preheader:" + nest.root.id};
  site.exits.push_back({fn.name, "exit:" + nest.root.id});
  site.kind = classify(nest);
  for (const Loop* l : loop_chain(nest.root)) {
    site.levels.push_back({l->id, l->bound, !l->bound.is_data_dependent()});
  }
  loop_ids(nest.root, site.covers);

  std::vector<const CallSite*> folded;
  std::set<std::string> hidden;
  const LoopNest* cur = &nest;
  while (auto link = chain_call(p, g, *cur)) {
    folded.push_back(link->call);
    hidden.insert(link->callee->local_params.begin(), link->callee->local_params.end());
    for (const Loop* l : loop_chain(link->nest->root)) {
      bool visible = bound_visible(l->bound, hidden);
      if (!visible) site.kind = BeaconKind::Expected;
      site.levels.push_back({l->id, l->bound, visible});
    }
    site.hoisted_from.push_back({link->callee->name, "preheader:" + link->nest->root.id});
    loop_ids(link->nest->root, site.covers);
    cur = link->nest;
  }

  // Calls that cannot extend the chain are folded in as per-iteration
  // aggregates; their cost is only known on average.
  std::vector<const CallSite*> all_calls;
  calls_in(nest.root, all_calls);
  // Calls inside chained callee nests are aggregated the same way.
  cur = &nest;
  while (auto link = chain_call(p, g, *cur)) {
    calls_in(link->nest->root, all_calls);
    cur = link->nest;
  }
  for (const CallSite* c : all_calls) {
    if (std::find(folded.begin(), folded.end(), c) != folded.end()) continue;
    site.kind = BeaconKind::Expected;
    absorb_functions(p, reachable_from(g, c->target), site);
  }
  return site;
}

std::vector<const Loop*> all_loops(const Loop& root) {
  std::vector<const Loop*> out{&root};
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (const auto& s : out[i]->body) {
      if (const auto* l = std::get_if<Loop>(&s.node)) out.push_back(l);
    }
  }
  return out;
}

BeaconSite region_site(const Program& p, const CallGraph& g, const Function& caller,
                       std::size_t index, const CallSite& call) {
  BeaconSite site;
  site.loop_id = recursion_site_id(caller.name, index, call.target);
  site.location = {caller.name, "call:" + std::to_string(index)};
  site.exits.push_back({caller.name, "return:" + std::to_string(index)});
  BoundSpec rounds = call.rounds.value_or(BoundSpec::constant(1));
  bool visible = bound_visible(rounds, {});
  site.levels.push_back({site.loop_id, rounds, visible});
  absorb_functions(p, reachable_from(g, call.target), site);

  bool constant_body = true;
  for (const auto& name : reachable_from(g, call.target)) {
    for (const auto& item : p.functions.at(name).body) {
      if (const auto* n = std::get_if<LoopNest>(&item.node)) {
        for (const Loop* l : all_loops(n->root)) constant_body &= l->bound.is_constant();
      }
    }
  }
  site.kind = visible && constant_body ? BeaconKind::Precise : BeaconKind::Expected;
  return site;
}

}  // namespace

const BeaconSite* InstrumentedProgram::site(const std::string& id) const {
  for (const auto& s : sites) {
    if (s.loop_id == id) return &s;
  }
  return nullptr;
}

BeaconKind classify(const LoopNest& nest) {
  return nest.root.bound.is_data_dependent() ? BeaconKind::Expected : BeaconKind::Precise;
}

std::string recursion_site_id(const std::string& caller, std::size_t index,
                              const std::string& callee) {
  return "rec:" + caller + "#" + std::to_string(index) + "->" + callee;
}

InstrumentedProgram hoist(const Program& input) {
  validate(input);
  InstrumentedProgram out;
  out.program = input;
  for (auto& [name, fn] : out.program.functions) {
    for (auto& item : fn.body) {
      if (auto* nest = std::get_if<LoopNest>(&item.node)) *nest = normalize_nest(*nest);
    }
  }
  const Program& program = out.program;
  out.graph = build_call_graph(program);
  const auto& g = out.graph;
  if (g.recursive(program.entry)) {
    throw WorkloadError("entry function '" + program.entry + "' is part of a recursion cycle");
  }

  std::set<std::string> visited;
  std::function<void(const std::string&)> visit = [&](const std::string& name) {
    if (!visited.insert(name).second) return;
    const Function& fn = program.functions.at(name);
    for (std::size_t i = 0; i < fn.body.size(); ++i) {
      const auto& item = fn.body[i];
      if (const auto* nest = std::get_if<LoopNest>(&item.node)) {
        out.sites.push_back(nest_site(program, g, fn, *nest));
      } else if (const auto* call = std::get_if<CallSite>(&item.node)) {
        if (g.recursive(call->target) && !g.same_cycle(name, call->target)) {
          out.sites.push_back(region_site(program, g, fn, i, *call));
        } else if (!g.recursive(call->target)) {
          visit(call->target);
        }
      }
    }
  };
  visit(program.entry);
  return out;
}

std::vector<std::string> reachable_loop_ids(const Program& program) {
  CallGraph g = build_call_graph(program);
  std::vector<std::string> ids;
  for (const auto& name : reachable_from(g, program.entry)) {
    for (const auto& item : program.functions.at(name).body) {
      if (const auto* n = std::get_if<LoopNest>(&item.node)) loop_ids(n->root, ids);
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

// ---------------------------------------------------------------------------

namespace {

struct Totals {
  double instructions = 0.0;
  double misses = 0.0;
  Totals& operator+=(const Totals& o) {
    instructions += o.instructions;
    misses += o.misses;
    return *this;
  }
  Totals scaled(double f) const { return {instructions * f, misses * f}; }
};

class Executor {
 public:
  Executor(const InstrumentedProgram& ip, const Bindings& b, Rng& rng)
      : ip_(ip), p_(ip.program), g_(ip.graph), b_(b), rng_(rng) {}

  std::vector<Segment> run() {
    top_level(p_.entry);
    flush_plain();
    return std::move(plan_);
  }

 private:
  double plain_misses(double instructions) const { return instructions * p_.plain_mpki / 1000.0; }

  bool taken(const CallSite& c) {
    if (!c.conditional()) return true;
    std::bernoulli_distribution d(c.probability);
    return d(rng_);
  }

  std::int64_t call_count(std::int64_t iterations, const CallSite& c) {
    if (!c.conditional()) return iterations;
    std::binomial_distribution<std::int64_t> d(iterations, c.probability);
    return d(rng_);
  }

  void flush_plain() {
    if (plain_.instructions > 0.0) {
      Segment s;
      s.instructions = plain_.instructions;
      s.misses = plain_.misses;
      plan_.push_back(std::move(s));
    }
    plain_ = {};
  }

  void top_level(const std::string& name) {
    const Function& fn = p_.functions.at(name);
    for (std::size_t i = 0; i < fn.body.size(); ++i) {
      const auto& item = fn.body[i];
      if (const auto* w = std::get_if<Work>(&item.node)) {
        auto instr = static_cast<double>(w->instructions);
        plain_ += Totals{instr, plain_misses(instr)};
      } else if (const auto* nest = std::get_if<LoopNest>(&item.node)) {
        std::vector<double> levels;
        Totals t = nest_totals(name, *nest, &levels);
        if (t.instructions <= 0.0) continue;  // zero-trip nest
        flush_plain();
        emit_segment(nest->root.id, t, std::move(levels));
      } else {
        const auto& call = std::get<CallSite>(item.node);
        if (!taken(call)) continue;
        if (g_.recursive(call.target) && !g_.same_cycle(name, call.target)) {
          std::int64_t rounds = 0;
          Totals t = region_totals(call, &rounds);
          flush_plain();
          emit_segment(recursion_site_id(name, i, call.target), t,
                       {static_cast<double>(rounds)});
        } else if (!g_.recursive(call.target)) {
          top_level(call.target);
        }
      }
    }
  }

  void emit_segment(const std::string& id, Totals t, std::vector<double> levels) {
    Segment s;
    s.site_id = id;
    s.instructions = t.instructions;
    s.misses = t.misses;
    if (const BeaconSite* site = ip_.site(id)) {
      for (std::size_t i = 0; i < site->levels.size() && i < levels.size(); ++i) {
        s.visible_bounds.push_back(site->levels[i].visible ? std::optional<double>(levels[i])
                                                           : std::nullopt);
      }
    }
    s.level_bounds = std::move(levels);
    plan_.push_back(std::move(s));
  }

  // Totals of one nest execution. When `levels` is non-null the resolved
  // bounds of the feature chain (caller levels, then chained callee levels)
  // are appended to it.
  Totals nest_totals(const std::string& fn, const LoopNest& nest, std::vector<double>* levels) {
    auto bounds = resolve_bounds(nest, b_, rng_);
    Totals t{0.0, ground_truth_misses(nest, bounds, rng_)};
    if (levels != nullptr) levels->insert(levels->end(), bounds.begin(), bounds.end());

    auto link = chain_call(p_, g_, nest);
    auto chain = loop_chain(nest.root);
    double iterations = 1.0;
    for (std::size_t d = 0; d < chain.size(); ++d) {
      iterations *= static_cast<double>(bounds[d]);
      for (const auto& s : chain[d]->body) {
        if (const auto* w = std::get_if<Work>(&s.node)) {
          t.instructions += iterations * static_cast<double>(w->instructions);
        } else if (const auto* c = std::get_if<CallSite>(&s.node)) {
          if (link && link->call == c) {
            Totals per_call = nest_totals(c->target, *link->nest, levels);
            for (const auto& item : link->callee->body) {
              if (const auto* w = std::get_if<Work>(&item.node)) {
                auto instr = static_cast<double>(w->instructions);
                per_call += Totals{instr, plain_misses(instr)};
              }
            }
            t += per_call.scaled(iterations);
          } else {
            auto count = call_count(static_cast<std::int64_t>(iterations), *c);
            if (count > 0) t += call_totals(fn, *c).scaled(static_cast<double>(count));
          }
        }
      }
    }
    return t;
  }

  // Cost of one invocation of a call made from inside a loop.
  Totals call_totals(const std::string& caller, const CallSite& c) {
    if (g_.same_cycle(caller, c.target)) return {};  // accounted by the region's rounds
    if (g_.recursive(c.target)) return region_totals(c, nullptr);
    return function_totals(c.target);
  }

  Totals function_totals(const std::string& name) {
    Totals t;
    for (const auto& item : p_.functions.at(name).body) {
      if (const auto* w = std::get_if<Work>(&item.node)) {
        auto instr = static_cast<double>(w->instructions);
        t += Totals{instr, plain_misses(instr)};
      } else if (const auto* nest = std::get_if<LoopNest>(&item.node)) {
        t += nest_totals(name, *nest, nullptr);
      } else {
        const auto& call = std::get<CallSite>(item.node);
        if (taken(call)) t += call_totals(name, call);
      }
    }
    return t;
  }

  Totals region_totals(const CallSite& entry, std::int64_t* rounds_out) {
    std::int64_t rounds =
        entry.rounds ? resolve_bound(*entry.rounds, b_, rng_) : std::int64_t{1};
    if (rounds_out != nullptr) *rounds_out = rounds;
    auto members = g_.members(g_.scc.at(entry.target));
    Totals t;
    for (std::int64_t r = 0; r < rounds; ++r) {
      for (const auto& m : members) t += function_totals(m);
    }
    return t;
  }

  const InstrumentedProgram& ip_;
  const Program& p_;
  const CallGraph& g_;
  const Bindings& b_;
  Rng& rng_;
  std::vector<Segment> plan_;
  Totals plain_;
};

}  // namespace

std::vector<Segment> build_plan(const InstrumentedProgram& program, const Bindings& bindings,
                                Rng& rng) {
  return Executor(program, bindings, rng).run();
}

// ---------------------------------------------------------------------------

void BeaconChannel::send(BeaconEvent event) { queue_.push_back(std::move(event)); }

std::vector<BeaconEvent> BeaconChannel::drain() {
  std::vector<BeaconEvent> out(std::make_move_iterator(queue_.begin()),
                               std::make_move_iterator(queue_.end()));
  queue_.clear();
  return out;
}

BeaconEvent emit_enter(int pid, const BeaconSite& site, const ModelSet& models,
                       std::span<const std::optional<double>> visible_bounds, std::int64_t tick,
                       BeaconChannel& channel) {
  const MissModel* model = models.find(site.loop_id);
  if (model == nullptr) {
    throw ProtocolError("pid " + std::to_string(pid) + ": no model for loop '" + site.loop_id +
                        "'");
  }
  BeaconEvent ev{pid, site.loop_id, BeaconPhase::Enter, predict_upper(*model, visible_bounds),
                 tick};
  channel.send(ev);
  return ev;
}

BeaconEvent emit_complete(int pid, const std::string& loop_id, std::int64_t tick,
                          BeaconChannel& channel) {
  BeaconEvent ev{pid, loop_id, BeaconPhase::Complete, 0.0, tick};
  channel.send(ev);
  return ev;
}

bool BracketValidator::accept(const BeaconEvent& event) {
  auto& stack = open_[event.pid];
  if (event.phase == BeaconPhase::Enter) {
    if (std::find(stack.begin(), stack.end(), event.loop_id) != stack.end()) {
      violations_.push_back("pid " + std::to_string(event.pid) + ": second Enter for '" +
                            event.loop_id + "' at tick " + std::to_string(event.tick));
      return false;
    }
    if (event.predicted_upper < 0.0) {
      violations_.push_back("pid " + std::to_string(event.pid) + ": negative prediction");
      return false;
    }
    stack.push_back(event.loop_id);
    return true;
  }
  if (stack.empty() || stack.back() != event.loop_id) {
    violations_.push_back("pid " + std::to_string(event.pid) + ": unmatched Complete for '" +
                          event.loop_id + "' at tick " + std::to_string(event.tick));
    return false;
  }
  stack.pop_back();
  return true;
}

bool BracketValidator::balanced() const {
  return std::all_of(open_.begin(), open_.end(), [](const auto& kv) { return kv.second.empty(); });
}

std::string_view to_string(BeaconPhase phase) {
  return phase == BeaconPhase::Enter ? "enter" : "complete";
}

std::string beacon_trace_csv(std::span<const BeaconEvent> events) {
  std::ostringstream out;
  out << "tick,pid,loop_id,phase,predicted_upper\n";
  char buf[40];
  for (const auto& e : events) {
    std::snprintf(buf, sizeof buf, "%.6f", e.predicted_upper);
    out << e.tick << ',' << e.pid << ',' << e.loop_id << ',' << to_string(e.phase) << ','
        << (e.phase == BeaconPhase::Enter ? buf : "") << '\n';
  }
  return out.str();
}

}  // namespace biscuit
