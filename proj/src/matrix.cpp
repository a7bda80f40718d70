#include "biscuit/matrix.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "biscuit/program_io.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace biscuit {

namespace fs = std::filesystem;

MatrixConfig default_matrix_config() {
  MatrixConfig c;
  c.machine.monitor_tax = 0.05;
  c.machine.attacker_footprint = 2000.0;
  return c;
}

namespace {

[[noreturn]] void fail(const YAML::Node& n, const std::string& why) {
  const auto mark = n.Mark();
  if (mark.is_null()) throw ConfigError(why);
  throw ConfigError("line " + std::to_string(mark.line + 1) + ": " + why);
}

template <typename T>
T get(const YAML::Node& n, const std::string& what) {
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    fail(n, "bad value for '" + what + "'");
  }
}

template <typename T, typename F>
std::vector<T> list(const YAML::Node& n, const std::string& what, F convert) {
  if (!n.IsSequence() || n.size() == 0) fail(n, "'" + what + "' must be a non-empty list");
  std::vector<T> out;
  for (const auto& item : n) {
    try {
      out.push_back(convert(item));
    } catch (const std::invalid_argument& e) {
      fail(item, e.what());
    } catch (const ConfigError& e) {
      fail(item, e.what());
    }
  }
  return out;
}

void check_keys(const YAML::Node& n, std::initializer_list<const char*> allowed) {
  for (const auto& kv : n) {
    auto k = kv.first.as<std::string>();
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; })) {
      fail(kv.first, "unknown key '" + k + "'");
    }
  }
}

std::vector<std::uint64_t> parse_seeds(const YAML::Node& root) {
  if (root["seeds"]) {
    return list<std::uint64_t>(root["seeds"], "seeds", [](const YAML::Node& x) { return get<std::uint64_t>(x, "seeds"); });
  }
  auto r = root["seed_range"];
  auto v = get<std::vector<std::uint64_t>>(r, "seed_range");
  if (v.size() != 2 || v[0] > v[1]) fail(r, "seed_range must be [first, last]");
  std::vector<std::uint64_t> out;
  for (auto s = v[0]; s <= v[1]; ++s) out.push_back(s);
  return out;
}

}  // namespace

MatrixConfig parse_matrix_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError("line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  MatrixConfig c = default_matrix_config();
  if (root.IsNull()) return c;
  if (!root.IsMap()) throw ConfigError("matrix config must be a map");
  check_keys(root, {"schedulers", "techniques", "counts", "seeds", "seed_range", "regimes",
                    "degraded_data_scale", "flush_rate", "max_ticks", "workers", "machine",
                    "scheduler", "train", "stress"});

  if (root["schedulers"]) {
    c.schedulers = list<SchedulerKind>(root["schedulers"], "schedulers", [](const YAML::Node& x) {
      return scheduler_from_string(get<std::string>(x, "schedulers"));
    });
  }
  if (root["techniques"]) {
    c.techniques = list<std::optional<Technique>>(root["techniques"], "techniques", [](const YAML::Node& x) {
      auto s = get<std::string>(x, "techniques");
      return s == "none" ? std::optional<Technique>{} : std::optional<Technique>{technique_from_string(s)};
    });
  }
  if (root["counts"]) {
    c.counts = list<int>(root["counts"], "counts", [](const YAML::Node& x) {
      int v = get<int>(x, "counts");
      if (v < 2) fail(x, "process counts must be at least 2");
      return v;
    });
  }
  if (root["seeds"] || root["seed_range"]) c.seeds = parse_seeds(root);
  if (root["regimes"]) {
    c.regimes = list<Regime>(root["regimes"], "regimes", [](const YAML::Node& x) {
      return regime_from_string(get<std::string>(x, "regimes"));
    });
  }
  if (root["degraded_data_scale"]) {
    c.degraded_data_scale = get<double>(root["degraded_data_scale"], "degraded_data_scale");
    if (c.degraded_data_scale <= 0.0) fail(root["degraded_data_scale"], "degraded_data_scale must be positive");
  }
  if (root["flush_rate"]) c.flush_rate = get<double>(root["flush_rate"], "flush_rate");
  if (root["max_ticks"]) c.max_ticks = get<std::int64_t>(root["max_ticks"], "max_ticks");
  if (root["workers"]) c.workers = get<int>(root["workers"], "workers");

  if (auto m = root["machine"]) {
    check_keys(m, {"sockets", "cores_per_socket", "llc_capacity", "capacity_factor", "monitor_tax",
                   "attacker_footprint", "rewarm_fraction", "instructions_per_tick"});
    if (m["sockets"]) c.machine.sockets = get<int>(m["sockets"], "sockets");
    if (m["cores_per_socket"]) c.machine.cores_per_socket = get<int>(m["cores_per_socket"], "cores_per_socket");
    if (m["llc_capacity"]) {
      if (m["llc_capacity"].IsScalar() && m["llc_capacity"].Scalar() == "auto") {
        c.capacity_auto = true;
      } else {
        c.capacity_auto = false;
        c.machine.llc_capacity = get<double>(m["llc_capacity"], "llc_capacity");
      }
    }
    if (m["capacity_factor"]) c.capacity_factor = get<double>(m["capacity_factor"], "capacity_factor");
    if (m["monitor_tax"]) c.machine.monitor_tax = get<double>(m["monitor_tax"], "monitor_tax");
    if (m["attacker_footprint"]) c.machine.attacker_footprint = get<double>(m["attacker_footprint"], "attacker_footprint");
    if (m["rewarm_fraction"]) c.machine.rewarm_fraction = get<double>(m["rewarm_fraction"], "rewarm_fraction");
    if (m["instructions_per_tick"]) {
      c.machine.instructions_per_tick = get<double>(m["instructions_per_tick"], "instructions_per_tick");
    }
    if (c.machine.sockets < 1 || c.machine.cores_per_socket < 1) fail(m, "machine needs sockets and cores");
    if (c.machine.monitor_tax < 0.0 || c.machine.monitor_tax >= 1.0) fail(m, "monitor_tax must be in [0, 1)");
  }
  if (auto s = root["scheduler"]) {
    check_keys(s, {"drop_delta", "halving_window", "linear_window", "widen_ticks", "mitigation"});
    if (s["drop_delta"]) c.params.drop_delta = get<double>(s["drop_delta"], "drop_delta");
    if (s["halving_window"]) c.params.halving_window = get<int>(s["halving_window"], "halving_window");
    if (s["linear_window"]) c.params.linear_window = get<int>(s["linear_window"], "linear_window");
    if (s["widen_ticks"]) c.params.widen_ticks = get<int>(s["widen_ticks"], "widen_ticks");
    if (s["mitigation"]) c.params.mitigation = get<bool>(s["mitigation"], "mitigation");
    if (c.params.halving_window < 1 || c.params.linear_window < 1) fail(s, "probe windows must be >= 1 tick");
  }
  if (auto t = root["train"]) {
    check_keys(t, {"seed", "grid_repeats", "k_repeats", "per_loop_k"});
    if (t["seed"]) c.train.seed = get<std::uint64_t>(t["seed"], "seed");
    if (t["grid_repeats"]) c.train.grid_repeats = get<int>(t["grid_repeats"], "grid_repeats");
    if (t["k_repeats"]) c.train.k_repeats = get<int>(t["k_repeats"], "k_repeats");
    if (t["per_loop_k"]) c.train.per_loop_k = get<bool>(t["per_loop_k"], "per_loop_k");
  }
  if (auto s = root["stress"]) {
    check_keys(s, {"counts", "seeds", "seed_range"});
    StressConfig sc;
    sc.counts = list<int>(s["counts"], "stress.counts", [](const YAML::Node& x) { return get<int>(x, "counts"); });
    sc.seeds = parse_seeds(s);
    c.stress = sc;
  }
  return c;
}

MatrixConfig load_matrix_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_matrix_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

double typical_footprint(const Node& node, Regime regime) {
  auto names = suite_victims(regime);
  for (const auto& c : suite_corunners(regime)) names.push_back(c);
  double sum = 0.0;
  int programs = 0;
  for (const auto& name : names) {
    auto ip = node.program(name);
    Rng rng(fnv1a(name));
    double total = 0.0;
    int segs = 0;
    for (const auto& seg : build_plan(*ip, default_bindings(ip->program), rng)) {
      if (seg.site_id.empty()) continue;
      const MissModel* m = node.models->find(seg.site_id);
      if (m == nullptr) continue;
      total += predict_upper(*m, seg.visible_bounds);
      ++segs;
    }
    if (segs > 0) {
      sum += total / segs;
      ++programs;
    }
  }
  if (programs == 0) throw ConfigError("no instrumented programs to size the cache from");
  return sum / programs;
}

std::vector<Scenario> build_scenarios(const MatrixConfig& c, const Node& node) {
  std::vector<Scenario> out;
  auto finish = [&](Scenario sc, Regime regime, double data_scale) {
    sc.machine = c.machine;
    if (c.capacity_auto) sc.machine.llc_capacity = c.capacity_factor * typical_footprint(node, regime);
    sc.params = c.params;
    sc.data_scale = data_scale;
    sc.max_ticks = c.max_ticks;
    if (sc.attacker) *sc.attacker = AttackerSpec::make(sc.attacker->technique, c.flush_rate);
    return sc;
  };
  for (Regime regime : c.regimes) {
    double scale = regime == Regime::Degraded ? c.degraded_data_scale : 1.0;
    for (auto sched : c.schedulers) {
      for (const auto& tech : c.techniques) {
        for (int n : c.counts) {
          for (auto seed : c.seeds) {
            out.push_back(finish(compose_scenario(regime, tech, n, seed, sched), regime, scale));
          }
        }
      }
    }
  }
  if (c.stress) {
    for (auto sched : c.schedulers) {
      for (auto tech : {std::optional<Technique>{Technique::FlushReload}, std::optional<Technique>{}}) {
        for (int n : c.stress->counts) {
          for (auto seed : c.stress->seeds) {
            out.push_back(finish(compose_scenario(Regime::Accurate, tech, n, seed, sched, stress_program()),
                                 Regime::Accurate, 1.0));
          }
        }
      }
    }
  }
  return out;
}

std::vector<ScenarioReport> run_matrix(const Node& node, const std::vector<Scenario>& scenarios, int workers) {
  std::vector<ScenarioReport> out(scenarios.size());
  std::vector<std::string> errors(scenarios.size());
  const auto n = static_cast<std::ptrdiff_t>(scenarios.size());
#ifdef _OPENMP
  const int threads = workers > 0 ? workers : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads)
#endif
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    try {
      out[u] = run_scenario(node, scenarios[u]).report;
    } catch (const std::exception& e) {
      errors[u] = scenarios[u].id + ": " + e.what();
    }
  }
  (void)workers;
  for (const auto& e : errors) {
    if (!e.empty()) throw ConfigError(e);
  }
  return out;
}

std::vector<ScenarioReport> run_matrix_serial(const Node& node, const std::vector<Scenario>& scenarios) {
  std::vector<ScenarioReport> out;
  out.reserve(scenarios.size());
  for (const auto& sc : scenarios) out.push_back(run_scenario(node, sc).report);
  return out;
}

Score write_reports(const std::string& dir, const std::vector<ScenarioReport>& reports) {
  fs::create_directories(dir);
  std::vector<ScenarioReport> reparsed;
  reparsed.reserve(reports.size());
  for (const auto& r : reports) {
    const std::string text = report_csv(r);
    std::ofstream(fs::path(dir) / (r.id + ".csv"), std::ios::binary) << text;
    reparsed.push_back(parse_report(text));
  }
  Score s = score(reparsed);
  std::ofstream(fs::path(dir) / "summary.csv", std::ios::binary) << summary_csv(s);
  return s;
}

std::vector<ScenarioReport> read_reports(const std::string& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".csv" && e.path().filename() != "summary.csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<ScenarioReport> out;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      out.push_back(parse_report(ss.str()));
    } catch (const ConfigError& e) {
      throw ConfigError(f.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace biscuit
