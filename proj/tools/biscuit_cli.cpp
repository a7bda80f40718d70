// Command-line driver: train models, run scenario matrices, score report
// directories and dump per-tick traces of a single scenario.
//
// Exit codes: 0 success, 2 invariant assertion failed, 3 configuration error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "biscuit/matrix.hpp"
#include "biscuit/metrics.hpp"
#include "biscuit/program_io.hpp"
#include "biscuit/scenario.hpp"

namespace fs = std::filesystem;
using namespace biscuit;

namespace {

constexpr int kAssertionFailed = 2;
constexpr int kConfigError = 3;

std::vector<Program> programs_from(const std::vector<std::string>& files) {
  if (files.empty()) return reference_suite();
  std::vector<Program> out;
  for (const auto& f : files) out.push_back(load_program(f));
  return out;
}

Node node_for(const std::vector<std::string>& program_files, const std::string& models_path,
              const TrainOptions& train) {
  auto programs = programs_from(program_files);
  if (!models_path.empty()) return make_node(programs, read_models(models_path));
  return make_node(programs, train);
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + p.string());
  out << text;
}

int report_failures(const std::vector<ScenarioReport>& reports) {
  int bad = 0;
  for (const auto& r : reports) {
    for (const auto& f : r.assertion_failures) {
      std::cerr << "assertion failed in " << r.id << ": " << f << '\n';
      ++bad;
    }
  }
  return bad;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cache-attack-aware scheduling simulator"};
  app.require_subcommand(1);

  std::vector<std::string> program_files;
  std::string models_path, out_dir = "out", config_path, scheduler_override;
  std::optional<std::uint64_t> seed_override;
  TrainOptions topt;
  bool serial = false;

  auto* train_cmd = app.add_subcommand("train", "profile programs and fit miss models");
  train_cmd->add_option("--program", program_files, "program YAML files (default: reference suite)");
  train_cmd->add_option("-o,--out", out_dir, "output directory");
  train_cmd->add_option("--seed", topt.seed, "training seed");
  train_cmd->add_option("--grid-repeats", topt.grid_repeats);
  train_cmd->add_option("--k-repeats", topt.k_repeats);
  train_cmd->add_flag("--per-loop-k", topt.per_loop_k, "keep each site's own k");
  int heldout_runs = 20;
  train_cmd->add_option("--heldout-runs", heldout_runs, "held-out executions per program");

  auto* run_cmd = app.add_subcommand("run", "run a scenario matrix and write reports");
  run_cmd->add_option("-c,--config", config_path, "matrix config YAML (default config if omitted)");
  run_cmd->add_option("-o,--out", out_dir, "report directory");
  run_cmd->add_option("--seed", seed_override, "run only this seed");
  run_cmd->add_option("--scheduler", scheduler_override, "biscuit or baseline")
      ->check(CLI::IsMember({"biscuit", "baseline"}));
  run_cmd->add_option("--models", models_path, "use a trained model file");
  run_cmd->add_option("--program", program_files, "program YAML files (default: reference suite)");
  run_cmd->add_flag("--serial", serial, "single-threaded reference runner");

  auto* score_cmd = app.add_subcommand("score", "recompute the summary from a report directory");
  std::string reports_dir;
  score_cmd->add_option("reports", reports_dir, "report directory")->required();

  auto* trace_cmd = app.add_subcommand("trace", "run one scenario and dump its traces");
  std::string regime = "accurate", technique = "flush_reload", trace_sched = "biscuit", victim;
  int count = 6;
  std::uint64_t trace_seed = 1;
  trace_cmd->add_option("-c,--config", config_path, "matrix config for machine and scheduler settings");
  trace_cmd->add_option("-o,--out", out_dir, "output directory");
  trace_cmd->add_option("--regime", regime)->check(CLI::IsMember({"accurate", "degraded"}));
  trace_cmd->add_option("--technique", technique)
      ->check(CLI::IsMember({"flush_reload", "flush_flush", "prime_probe", "none"}));
  trace_cmd->add_option("--scheduler", trace_sched)->check(CLI::IsMember({"biscuit", "baseline"}));
  trace_cmd->add_option("--count", count, "processes including victim and attacker");
  trace_cmd->add_option("--seed", trace_seed);
  trace_cmd->add_option("--victim", victim, "victim program override");
  trace_cmd->add_option("--models", models_path, "use a trained model file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kConfigError;
  }

  try {
    if (*train_cmd) {
      auto programs = programs_from(program_files);
      std::vector<InstrumentedProgram> hoisted;
      for (const auto& p : programs) hoisted.push_back(hoist(p));
      TrainResult tr = train(hoisted, topt);
      fs::create_directories(out_dir);
      write_models((fs::path(out_dir) / "models.txt").string(), tr.models);
      std::ostringstream diag;
      diag << "program,site,kind,samples,dropped_terms,ratio\n";
      for (const auto& d : tr.sites) {
        diag << d.program << ',' << d.site << ',' << to_string(d.kind) << ',' << d.samples << ','
             << d.dropped_terms.size() << ',' << d.ratio << '\n';
        for (auto t : d.grid_gaps) {
          std::cerr << "warning: " << d.program << " site " << d.site << ": term " << t
                    << " is collinear and was dropped; widen its training grid\n";
        }
      }
      write_file(fs::path(out_dir) / "training.csv", diag.str());
      auto held = evaluate_heldout(hoisted, tr.models, topt.seed + 1, heldout_runs, 1.0);
      std::cout << "sites " << tr.sites.size() << " k " << tr.models.k << " heldout_samples "
                << held.samples << " coverage " << held.coverage() << " accuracy " << held.accuracy()
                << '\n';
      return 0;
    }

    if (*score_cmd) {
      auto reports = read_reports(reports_dir);
      std::cout << summary_csv(score(reports));
      return report_failures(reports) > 0 ? kAssertionFailed : 0;
    }

    MatrixConfig cfg = config_path.empty() ? default_matrix_config() : load_matrix_config(config_path);

    if (*trace_cmd) {
      Node node = node_for(program_files, models_path, cfg.train);
      std::optional<Technique> tech;
      if (technique != "none") tech = technique_from_string(technique);
      Regime rg = regime_from_string(regime);
      cfg.regimes = {rg};
      cfg.schedulers = {scheduler_from_string(trace_sched)};
      cfg.techniques = {tech};
      cfg.counts = {count};
      cfg.seeds = {trace_seed};
      cfg.stress.reset();
      Scenario sc = build_scenarios(cfg, node).front();
      if (!victim.empty()) {
        Scenario v = compose_scenario(rg, tech, count, trace_seed, sc.scheduler, victim);
        v.machine = sc.machine;
        v.params = sc.params;
        v.data_scale = sc.data_scale;
        v.max_ticks = sc.max_ticks;
        v.attacker = sc.attacker;
        sc = v;
      }
      ScenarioResult res = run_scenario(node, sc, true);
      fs::create_directories(out_dir);
      const fs::path dir(out_dir);
      write_file(dir / "report.csv", report_csv(res.report));
      write_file(dir / "beacons.csv", res.traces->beacons);
      write_file(dir / "counters.csv", res.traces->counters);
      write_file(dir / "schedule.csv", res.traces->schedule);
      std::cout << sc.id << " ticks " << res.report.ticks << " flagged " << res.report.flagged.size() << '\n';
      return report_failures({res.report}) > 0 ? kAssertionFailed : 0;
    }

    // run
    if (seed_override) cfg.seeds = {*seed_override};
    if (!scheduler_override.empty()) cfg.schedulers = {scheduler_from_string(scheduler_override)};
    Node node = node_for(program_files, models_path, cfg.train);
    auto scenarios = build_scenarios(cfg, node);
    auto reports = serial ? run_matrix_serial(node, scenarios) : run_matrix(node, scenarios, cfg.workers);
    Score s = write_reports(out_dir, reports);
    std::cout << "wrote " << reports.size() << " reports and summary.csv to " << out_dir << '\n';
    std::cout << summary_csv(s);
    return report_failures(reports) > 0 ? kAssertionFailed : 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const ModelError& e) {
    std::cerr << "model error: " << e.what() << '\n';
    return kConfigError;
  }
}
