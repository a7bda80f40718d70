#include "biscuit/training.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "biscuit/program_io.hpp"

namespace biscuit {

std::uint64_t fnv1a(std::string_view s, std::uint64_t h) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

Rng task_rng(std::uint64_t seed, const std::string& program, const std::string& site,
             std::uint64_t a, std::uint64_t b) {
  std::uint64_t h = fnv1a(program, fnv1a(site, seed ^ 0x9e3779b97f4a7c15ull));
  std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return Rng(seq);
}

void collect_params(const Loop& l, std::set<std::string>& out) {
  if (const auto* p = std::get_if<ParamBound>(&l.bound.source)) out.insert(p->name);
  for (const auto& s : l.body) {
    if (const auto* inner = std::get_if<Loop>(&s.node)) {
      collect_params(*inner, out);
    } else if (const auto* c = std::get_if<CallSite>(&s.node)) {
      if (c->rounds) {
        if (const auto* p = std::get_if<ParamBound>(&c->rounds->source)) out.insert(p->name);
      }
    }
  }
}

constexpr std::size_t kMinSamples = 12;

struct SiteTask {
  const InstrumentedProgram* program;
  const BeaconSite* site;
};

struct SiteOutcome {
  MissModel model;
  SiteDiagnostics diag;
  std::string error;
};

std::vector<Bindings> grid(const InstrumentedProgram& ip, const std::vector<std::string>& params) {
  Bindings base = default_bindings(ip.program);
  std::vector<Bindings> out{base};
  for (const auto& name : params) {
    const auto& def = ip.program.params.at(name);
    std::vector<std::int64_t> values = def.train.empty() ? std::vector<std::int64_t>{def.value} : def.train;
    std::vector<Bindings> next;
    for (const auto& b : out) {
      for (auto v : values) {
        Bindings nb = b;
        nb.params[name] = v;
        next.push_back(std::move(nb));
      }
    }
    out = std::move(next);
  }
  return out;
}

SiteOutcome train_site(const SiteTask& task, const TrainOptions& opt) {
  const auto& ip = *task.program;
  const auto& site = *task.site;
  SiteOutcome out;
  out.diag.program = ip.program.name;
  out.diag.site = site.loop_id;
  out.diag.kind = site.kind;

  auto params = site_params(ip, site);
  auto points = grid(ip, params);
  // Small grids (sites driven by data-dependent bounds) repeat until there
  // are enough samples to fit.
  const int repeats = std::max<int>(opt.grid_repeats,
                                    static_cast<int>((kMinSamples + points.size() - 1) / points.size()));
  std::vector<TrainingSample> samples;
  for (std::size_t g = 0; g < points.size(); ++g) {
    for (int r = 0; r < repeats; ++r) {
      Rng rng = task_rng(opt.seed, ip.program.name, site.loop_id, g, static_cast<std::uint64_t>(r));
      for (const auto& seg : build_plan(ip, points[g], rng)) {
        if (seg.site_id == site.loop_id) samples.push_back({site.loop_id, seg.level_bounds, seg.misses});
      }
    }
  }
  out.diag.samples = samples.size();
  if (samples.empty()) {
    out.error = "site '" + site.loop_id + "' never executed during training";
    return out;
  }

  const std::size_t terms = samples.front().bounds.size() + 1;
  std::vector<bool> active(terms, true);
  try {
    out.model.coeffs = fit(samples, active);
  } catch (const DegenerateFit& e) {
    for (auto t : e.collinear_terms) active[t] = false;
    out.diag.dropped_terms = e.collinear_terms;
    for (auto t : e.collinear_terms) {
      if (t == 0 || t > site.levels.size()) continue;
      if (!std::holds_alternative<ConstantBound>(site.levels[t - 1].bound.source)) out.diag.grid_gaps.push_back(t);
    }
    try {
      out.model.coeffs = fit(samples, active);
    } catch (const ModelError& e2) {
      out.error = std::string(e2.what());
      return out;
    }
  } catch (const ModelError& e) {
    out.error = std::string(e.what()) + " (widen the training grid)";
    return out;
  }
  out.model.loop_id = site.loop_id;
  out.model.kind = site.kind;
  out.model.expected_bounds.assign(terms - 1, 0.0);
  for (const auto& s : samples) {
    for (std::size_t i = 0; i + 1 < terms; ++i) out.model.expected_bounds[i] += s.bounds[i];
  }
  for (auto& e : out.model.expected_bounds) e /= static_cast<double>(samples.size());

  // Variability at the largest grid point.
  Bindings top = default_bindings(ip.program);
  for (const auto& name : params) {
    const auto& def = ip.program.params.at(name);
    top.params[name] = def.train.empty() ? def.value : *std::max_element(def.train.begin(), def.train.end());
  }
  std::vector<double> runs;
  for (int r = 0; r < opt.k_repeats; ++r) {
    Rng rng = task_rng(opt.seed, ip.program.name, site.loop_id, 0xffffffffu, static_cast<std::uint64_t>(r));
    for (const auto& seg : build_plan(ip, top, rng)) {
      if (seg.site_id == site.loop_id) {
        runs.push_back(seg.misses);
        break;
      }
    }
  }
  try {
    out.diag.ratio = variability_ratio(runs);
  } catch (const ModelError& e) {
    out.error = "site '" + site.loop_id + "': " + e.what();
  }
  return out;
}

}  // namespace

std::vector<std::string> site_params(const InstrumentedProgram& program, const BeaconSite& site) {
  std::set<std::string> names;
  for (const auto& lv : site.levels) {
    if (const auto* p = std::get_if<ParamBound>(&lv.bound.source)) names.insert(p->name);
  }
  std::set<std::string> covered(site.covers.begin(), site.covers.end());
  for (const auto& [fname, fn] : program.program.functions) {
    for (const auto& item : fn.body) {
      if (const auto* n = std::get_if<LoopNest>(&item.node)) {
        if (covered.contains(n->root.id)) collect_params(n->root, names);
      }
    }
  }
  return {names.begin(), names.end()};
}

TrainResult train(const std::vector<InstrumentedProgram>& programs, const TrainOptions& opt) {
  if (opt.grid_repeats < 1 || opt.k_repeats < 2) throw ConfigError("training needs repeats >= 1 and k repeats >= 2");
  std::vector<SiteTask> tasks;
  std::set<std::string> ids;
  for (const auto& ip : programs) {
    for (const auto& site : ip.sites) {
      if (!ids.insert(site.loop_id).second) {
        throw ConfigError("site id '" + site.loop_id + "' appears in more than one program");
      }
      for (const auto& name : site_params(ip, site)) {
        const auto& def = ip.program.params.at(name);
        if (def.train.empty() && def.value < 1) throw ConfigError("param '" + name + "' has an empty grid");
      }
      tasks.push_back({&ip, &site});
    }
  }
  if (tasks.empty()) throw ConfigError("nothing to train: no beacon sites");

  std::vector<SiteOutcome> outcomes(tasks.size());
  const auto n = static_cast<std::ptrdiff_t>(tasks.size());
#pragma omp parallel for schedule(dynamic) if (opt.parallel)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    outcomes[static_cast<std::size_t>(i)] = train_site(tasks[static_cast<std::size_t>(i)], opt);
  }

  TrainResult result;
  for (const auto& o : outcomes) {
    if (!o.error.empty()) throw ConfigError("training " + o.diag.program + ": " + o.error);
    result.models.k = std::max(result.models.k, o.diag.ratio);
  }
  for (auto& o : outcomes) {
    o.model.k = opt.per_loop_k ? o.diag.ratio : result.models.k;
    result.models.models[o.model.loop_id] = o.model;
    result.sites.push_back(o.diag);
  }
  return result;
}

HeldoutStats evaluate_heldout(const std::vector<InstrumentedProgram>& programs,
                              const ModelSet& models, std::uint64_t seed, int runs,
                              double data_scale, std::optional<BeaconKind> kind) {
  HeldoutStats st;
  for (const auto& ip : programs) {
    for (int r = 0; r < runs; ++r) {
      Rng rng = task_rng(seed, ip.program.name, "heldout", static_cast<std::uint64_t>(r), 7);
      Bindings b = draw_bindings(ip.program, rng, data_scale);
      for (const auto& seg : build_plan(ip, b, rng)) {
        if (seg.site_id.empty()) continue;
        const MissModel* m = models.find(seg.site_id);
        if (m == nullptr) throw ModelError("no model for site '" + seg.site_id + "'");
        if (kind && m->kind != *kind) continue;
        double cm = predict(*m, seg.visible_bounds);
        ++st.samples;
        if (seg.misses <= (1.0 + m->k) * cm) ++st.covered;
        st.band_error_sum += band_error(seg.misses, cm, m->k);
      }
    }
  }
  return st;
}

}  // namespace biscuit
