#include "biscuit/workload.hpp"

#include <boost/graph/adjacency_list.hpp>
#include <boost/graph/strong_components.hpp>

#include <cmath>

namespace biscuit {

namespace {

// Ceiling of the real quotient a / b for any nonzero b.
std::int64_t ceil_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  std::int64_t r = a % b;
  if (r != 0 && ((r > 0) == (b > 0))) ++q;
  return q;
}

std::int64_t apply_transform(const BoundSpec& b, std::int64_t limit) {
  return std::max<std::int64_t>(0, ceil_div(limit - b.offset, b.stride));
}

void collect_loop_ids(const Loop& loop, std::set<std::string>& seen, const std::string& fn) {
  if (!seen.insert(loop.id).second) {
    throw WorkloadError("duplicate loop id '" + loop.id + "' in function '" + fn + "'");
  }
  for (const auto& s : loop.body) {
    if (const auto* inner = std::get_if<Loop>(&s.node)) collect_loop_ids(*inner, seen, fn);
  }
}

void check_bound(const BoundSpec& b, const std::string& where) {
  if (b.stride == 0) throw MalformedLoop(where + ": zero stride in bound transform");
  if (const auto* c = std::get_if<ConstantBound>(&b.source)) {
    if (c->value < 1 && !(c->value == 0 && b.identity_transform())) {
      throw WorkloadError(where + ": constant bound must be >= 1");
    }
  } else if (const auto* d = std::get_if<DataDependentBound>(&b.source)) {
    if (d->min < 1 || d->mean <= 0.0 || d->stddev < 0.0) {
      throw WorkloadError(where + ": data-dependent bound needs mean > 0, stddev >= 0, min >= 1");
    }
  }
}

void check_loop(const Loop& loop, const Program& p, const std::string& fn) {
  if (loop.step == 0) throw MalformedLoop("loop '" + loop.id + "': step of 0");
  check_bound(loop.bound, "loop '" + loop.id + "'");
  for (const auto& s : loop.body) {
    if (const auto* inner = std::get_if<Loop>(&s.node)) {
      check_loop(*inner, p, fn);
    } else if (const auto* call = std::get_if<CallSite>(&s.node)) {
      if (!p.functions.contains(call->target)) {
        throw WorkloadError("function '" + fn + "' calls unknown '" + call->target + "'");
      }
      if (call->probability <= 0.0 || call->probability > 1.0) {
        throw WorkloadError("call probability must be in (0, 1]");
      }
    } else if (std::get<Work>(s.node).instructions <= 0) {
      throw WorkloadError("loop '" + loop.id + "': work must be positive");
    }
  }
}

void add_edges(const std::string& caller, const std::vector<Stmt>& body, bool in_loop,
               std::vector<CallEdge>& out) {
  for (const auto& s : body) {
    if (const auto* l = std::get_if<Loop>(&s.node)) {
      add_edges(caller, l->body, true, out);
    } else if (const auto* c = std::get_if<CallSite>(&s.node)) {
      out.push_back({caller, c->target, in_loop, c->conditional()});
    }
  }
}

}  // namespace

int LoopNest::depth() const { return static_cast<int>(loop_chain(root).size()); }

bool CallGraph::recursive(const std::string& fn) const {
  auto it = scc.find(fn);
  return it != scc.end() && recursive_sccs.contains(it->second);
}

bool CallGraph::same_cycle(const std::string& a, const std::string& b) const {
  return recursive(a) && recursive(b) && scc.at(a) == scc.at(b);
}

std::vector<std::string> CallGraph::members(int scc_id) const {
  std::vector<std::string> out;
  for (const auto& f : functions) {
    if (scc.at(f) == scc_id) out.push_back(f);
  }
  return out;
}

std::int64_t trip_count(std::int64_t start, std::int64_t limit, std::int64_t step) {
  if (step == 0) throw MalformedLoop("step of 0");
  return std::max<std::int64_t>(0, ceil_div(limit - start, step));
}

Loop normalize_loop(const Loop& loop) {
  if (loop.step == 0) throw MalformedLoop("loop '" + loop.id + "': step of 0");
  if (loop.start == 0 && loop.step == 1) return loop;

  Loop out = loop;
  out.start = 0;
  out.step = 1;
  out.induction_base = loop.induction_base + loop.start * loop.induction_scale;
  out.induction_scale = loop.induction_scale * loop.step;

  if (const auto* c = std::get_if<ConstantBound>(&loop.bound.source)) {
    std::int64_t limit = loop.bound.identity_transform() ? c->value : apply_transform(loop.bound, c->value);
    out.bound = BoundSpec::constant(trip_count(loop.start, limit, loop.step));
    return out;
  }
  if (!loop.bound.identity_transform()) {
    throw MalformedLoop("loop '" + loop.id + "': symbolic bound already transformed");
  }
  out.bound.offset = loop.start;
  out.bound.stride = loop.step;
  return out;
}

namespace {
Loop normalize_recursive(const Loop& loop) {
  Loop out = normalize_loop(loop);
  for (auto& s : out.body) {
    if (auto* inner = std::get_if<Loop>(&s.node)) *inner = normalize_recursive(*inner);
  }
  return out;
}
}  // namespace

LoopNest normalize_nest(const LoopNest& nest) {
  LoopNest out = nest;
  out.root = normalize_recursive(nest.root);
  return out;
}

std::vector<const Loop*> loop_chain(const Loop& root) {
  std::vector<const Loop*> chain{&root};
  for (;;) {
    const Loop* next = nullptr;
    for (const auto& s : chain.back()->body) {
      if (const auto* l = std::get_if<Loop>(&s.node)) {
        if (next != nullptr) {
          throw WorkloadError("loop '" + chain.back()->id +
                              "' holds several inner loops; only rectangular chains are supported");
        }
        next = l;
      }
    }
    if (next == nullptr) return chain;
    chain.push_back(next);
  }
}

std::int64_t resolve_bound(const BoundSpec& bound, const Bindings& bindings, Rng& rng) {
  std::int64_t limit = 0;
  if (const auto* c = std::get_if<ConstantBound>(&bound.source)) {
    limit = c->value;
  } else if (const auto* p = std::get_if<ParamBound>(&bound.source)) {
    auto it = bindings.params.find(p->name);
    if (it == bindings.params.end()) throw UnresolvedBound("unresolved param '" + p->name + "'");
    if (it->second < 1) throw UnresolvedBound("param '" + p->name + "' resolved below 1");
    limit = it->second;
  } else {
    const auto& d = std::get<DataDependentBound>(bound.source);
    double mean = d.mean * bindings.data_scale;
    double draw = mean;
    if (d.stddev > 0.0) {
      std::normal_distribution<double> dist(mean, d.stddev * bindings.data_scale);
      draw = dist(rng);
    }
    limit = std::max<std::int64_t>(d.min, std::llround(draw));
  }
  return apply_transform(bound, limit);
}

std::vector<std::int64_t> resolve_bounds(const LoopNest& nest, const Bindings& bindings,
                                         Rng& rng) {
  std::vector<std::int64_t> out;
  for (const Loop* l : loop_chain(nest.root)) out.push_back(resolve_bound(l->bound, bindings, rng));
  return out;
}

double miss_polynomial(std::span<const double> coeffs, std::span<const std::int64_t> bounds) {
  if (coeffs.size() != bounds.size() + 1) {
    throw WorkloadError("coefficient count must equal depth + 1");
  }
  double total = coeffs[0];
  double product = 1.0;
  for (std::size_t i = 0; i < bounds.size(); ++i) {
    product *= static_cast<double>(bounds[i]);
    total += coeffs[i + 1] * product;
  }
  return total;
}

double ground_truth_misses(const LoopNest& nest, std::span<const std::int64_t> bounds,
                           Rng& rng) {
  double clean = miss_polynomial(nest.true_coeffs, bounds);
  std::uniform_real_distribution<double> noise(1.0 - nest.noise_frac, 1.0 + nest.noise_frac);
  return std::max(0.0, clean * noise(rng));
}

CallGraph build_call_graph(const Program& program) {
  CallGraph g;
  std::map<std::string, int> index;
  for (const auto& [name, fn] : program.functions) {
    index[name] = static_cast<int>(g.functions.size());
    g.functions.push_back(name);
  }
  for (const auto& [name, fn] : program.functions) {
    for (const auto& item : fn.body) {
      if (const auto* nest = std::get_if<LoopNest>(&item.node)) {
        add_edges(name, nest->root.body, true, g.edges);
      } else if (const auto* c = std::get_if<CallSite>(&item.node)) {
        g.edges.push_back({name, c->target, false, c->conditional()});
      }
    }
  }

  using Graph = boost::adjacency_list<boost::vecS, boost::vecS, boost::directedS>;
  Graph graph(g.functions.size());
  for (const auto& e : g.edges) {
    if (!index.contains(e.callee)) continue;
    boost::add_edge(index.at(e.caller), index.at(e.callee), graph);
  }
  std::vector<int> component(g.functions.size());
  boost::strong_components(graph, component.data());

  std::map<int, int> sizes;
  for (std::size_t i = 0; i < g.functions.size(); ++i) {
    g.scc[g.functions[i]] = component[i];
    ++sizes[component[i]];
  }
  for (const auto& [c, n] : sizes) {
    if (n > 1) g.recursive_sccs.insert(c);
  }
  for (const auto& e : g.edges) {
    if (e.caller == e.callee) g.recursive_sccs.insert(g.scc.at(e.caller));
  }
  return g;
}

void validate(const Program& program) {
  if (!program.functions.contains(program.entry)) {
    throw WorkloadError("program '" + program.name + "': entry '" + program.entry + "' missing");
  }
  std::set<std::string> loop_ids;
  for (const auto& [name, fn] : program.functions) {
    if (fn.name != name) throw WorkloadError("function key/name mismatch for '" + name + "'");
    for (const auto& item : fn.body) {
      if (const auto* nest = std::get_if<LoopNest>(&item.node)) {
        collect_loop_ids(nest->root, loop_ids, name);
        check_loop(nest->root, program, name);
        auto depth = static_cast<std::size_t>(nest->depth());
        if (nest->true_coeffs.size() != depth + 1) {
          throw WorkloadError("nest '" + nest->root.id + "': true_coeffs length must be depth + 1");
        }
        for (double c : nest->true_coeffs) {
          if (c < 0.0) throw WorkloadError("nest '" + nest->root.id + "': negative coefficient");
        }
        if (nest->noise_frac < 0.0 || nest->noise_frac > 0.5) {
          throw WorkloadError("nest '" + nest->root.id + "': noise_frac outside [0, 0.5]");
        }
      } else if (const auto* c = std::get_if<CallSite>(&item.node)) {
        if (!program.functions.contains(c->target)) {
          throw WorkloadError("function '" + name + "' calls unknown '" + c->target + "'");
        }
        if (c->probability <= 0.0 || c->probability > 1.0) {
          throw WorkloadError("call probability must be in (0, 1]");
        }
        if (c->rounds) check_bound(*c->rounds, "call to '" + c->target + "'");
      } else if (std::get<Work>(item.node).instructions <= 0) {
        throw WorkloadError("function '" + name + "': work must be positive");
      }
    }
  }
}

Bindings default_bindings(const Program& program) {
  Bindings b;
  for (const auto& [name, def] : program.params) b.params[name] = def.value;
  return b;
}

Bindings draw_bindings(const Program& program, Rng& rng, double data_scale) {
  Bindings b;
  b.data_scale = data_scale;
  for (const auto& [name, def] : program.params) {
    if (def.run_lo == 0 && def.run_hi == 0) {
      b.params[name] = def.value;
    } else {
      std::uniform_int_distribution<std::int64_t> d(def.run_lo, def.run_hi);
      b.params[name] = d(rng);
    }
  }
  return b;
}

}  // namespace biscuit
