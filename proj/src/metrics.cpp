#include "biscuit/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>
#include <tuple>

namespace biscuit {

const RegimeScore* Score::regime(const std::string& name) const {
  for (const auto& r : regimes) {
    if (r.regime == name) return &r;
  }
  return nullptr;
}

std::optional<double> f_score(int tp, int fp, int fn) {
  if (tp + fp == 0 || tp + fn == 0) return std::nullopt;
  double p = static_cast<double>(tp) / (tp + fp);
  double r = static_cast<double>(tp) / (tp + fn);
  if (p + r == 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

std::optional<double> fp_rate(int fp, int tn) {
  if (fp + tn == 0) return std::nullopt;
  return static_cast<double>(fp) / (fp + tn);
}

namespace {

using PairKey = std::tuple<std::string, std::string, int, std::uint64_t, bool>;

PairKey key(const ScenarioReport& r) { return {r.regime, r.technique, r.count, r.seed, r.stress}; }

}  // namespace

Score score(const std::vector<ScenarioReport>& reports) {
  Score s;
  s.scenarios = static_cast<int>(reports.size());
  std::map<std::string, RegimeScore> regimes;
  std::map<PairKey, const ScenarioReport*> biscuit, baseline;

  for (const auto& r : reports) {
    s.assertion_failures += static_cast<int>(r.assertion_failures.size());
    s.capacity_violations += r.capacity_violations;
    s.parks += r.parks;
    s.migrations += r.migrations;
    s.swaps += r.swaps;
    for (const auto& e : r.episodes) {
      ++s.episodes;
      if (e.halving_probes > halving_probe_bound(e.suspects) || e.linear_probes > 8) ++s.probe_bound_violations;
    }
    (r.scheduler == "biscuit" ? biscuit : baseline)[key(r)] = &r;
    if (r.stress) continue;

    auto& g = regimes[r.regime];
    g.regime = r.regime;
    const bool attacked = r.attacker >= 0;
    if (r.scheduler == "baseline") {
      if (attacked) {
        ++g.baseline_attacked;
        g.max_baseline_d = std::max(g.max_baseline_d, r.detection_efficiency.value_or(0.0));
      }
      continue;
    }
    g.tp += r.tp;
    g.fp += r.fp;
    g.fn += r.fn;
    g.tn += r.tn;
    if (r.fp > 0) {
      ++g.fp_cases;
      if (r.exonerated) ++g.fp_exonerated;
    }
    if (attacked) {
      ++g.attacked;
      if (r.flagged.size() == 1 && r.flagged.front() == r.attacker) ++g.attacker_exact;
      double d = r.detection_efficiency.value_or(0.0);
      g.mean_d[r.technique] += d;
      ++g.d_count[r.technique];
      g.min_biscuit_d = std::min(g.min_biscuit_d, d);
    } else {
      ++g.no_attack;
    }
  }

  for (auto& [name, g] : regimes) {
    if (g.tp + g.fp > 0) g.precision = static_cast<double>(g.tp) / (g.tp + g.fp);
    if (g.tp + g.fn > 0) g.recall = static_cast<double>(g.tp) / (g.tp + g.fn);
    g.f_score = f_score(g.tp, g.fp, g.fn);
    // FP rate counts only scenarios without an attacker.
    int fp_clean = 0, tn = 0;
    for (const auto& r : reports) {
      if (r.stress || r.scheduler != "biscuit" || r.regime != name || r.attacker >= 0) continue;
      fp_clean += r.fp;
      tn += r.tn;
    }
    g.fp_rate = fp_rate(fp_clean, tn);
    for (auto& [t, sum] : g.mean_d) sum /= g.d_count[t];
  }

  // Overhead over matched pairs.
  std::map<std::string, std::pair<double, int>> ov_none, ov_att;
  for (const auto& [k, b] : biscuit) {
    auto it = baseline.find(k);
    if (it == baseline.end() || std::get<4>(k)) continue;
    if (b->victim_ticks <= 0 || it->second->victim_ticks <= 0) continue;
    double ratio = static_cast<double>(b->victim_ticks) / static_cast<double>(it->second->victim_ticks) - 1.0;
    auto& acc = (b->attacker >= 0 ? ov_att : ov_none)[b->regime];
    acc.first += ratio;
    ++acc.second;
  }
  for (auto& [name, g] : regimes) {
    if (auto it = ov_none.find(name); it != ov_none.end() && it->second.second > 0) {
      g.overhead_no_attack = it->second.first / it->second.second;
      g.pairs_no_attack = it->second.second;
    }
    if (auto it = ov_att.find(name); it != ov_att.end() && it->second.second > 0) {
      g.overhead_attacked = it->second.first / it->second.second;
      g.pairs_attacked = it->second.second;
    }
    s.regimes.push_back(g);
  }

  // Stress program: attack-induced slowdown relative to each scheduler's own
  // no-attack run, matched on (regime, count, seed).
  double sb = 0.0, sbase = 0.0;
  int n = 0;
  for (const auto& [k, b_att] : biscuit) {
    if (!std::get<4>(k) || b_att->attacker < 0) continue;
    PairKey none{std::get<0>(k), "none", std::get<2>(k), std::get<3>(k), true};
    auto b_none = biscuit.find(none);
    auto x_att = baseline.find(k);
    auto x_none = baseline.find(none);
    if (b_none == biscuit.end() || x_att == baseline.end() || x_none == baseline.end()) continue;
    sb += static_cast<double>(b_att->victim_ticks) / static_cast<double>(b_none->second->victim_ticks) - 1.0;
    sbase += static_cast<double>(x_att->second->victim_ticks) / static_cast<double>(x_none->second->victim_ticks) - 1.0;
    ++n;
  }
  s.stress_pairs = n;
  if (n > 0) {
    s.stress_slowdown_biscuit = sb / n;
    s.stress_slowdown_baseline = sbase / n;
    if (sbase > 0.0) s.stress_reduction = 1.0 - sb / sbase;
  }
  return s;
}

namespace {

std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

std::string opt(const std::optional<double>& v, const std::string& counts) {
  return v ? num(*v) : "undefined " + counts;
}

}  // namespace

std::string summary_csv(const Score& s) {
  std::ostringstream o;
  auto kv = [&](const std::string& k, const std::string& v) { o << k << ',' << v << '\n'; };
  kv("summary_version", "1");
  kv("scenarios", std::to_string(s.scenarios));
  kv("episodes", std::to_string(s.episodes));
  kv("probe_bound_violations", std::to_string(s.probe_bound_violations));
  kv("capacity_violations", std::to_string(s.capacity_violations));
  kv("assertion_failures", std::to_string(s.assertion_failures));
  kv("parks", std::to_string(s.parks));
  kv("migrations", std::to_string(s.migrations));
  kv("swaps", std::to_string(s.swaps));
  for (const auto& g : s.regimes) {
    const std::string p = g.regime + '.';
    const std::string conf = "(tp=" + std::to_string(g.tp) + " fp=" + std::to_string(g.fp) +
                             " fn=" + std::to_string(g.fn) + " tn=" + std::to_string(g.tn) + ")";
    kv(p + "tp", std::to_string(g.tp));
    kv(p + "fp", std::to_string(g.fp));
    kv(p + "fn", std::to_string(g.fn));
    kv(p + "tn", std::to_string(g.tn));
    kv(p + "attacked", std::to_string(g.attacked));
    kv(p + "no_attack", std::to_string(g.no_attack));
    kv(p + "attacker_exact", std::to_string(g.attacker_exact));
    kv(p + "f_score", opt(g.f_score, conf));
    kv(p + "fp_rate", opt(g.fp_rate, conf));
    kv(p + "fp_cases", std::to_string(g.fp_cases));
    kv(p + "fp_exonerated", std::to_string(g.fp_exonerated));
    for (const auto& [t, d] : g.mean_d) kv(p + "mean_d." + t, num(d));
    if (g.attacked > 0) kv(p + "min_biscuit_d", num(g.min_biscuit_d));
    kv(p + "max_baseline_d", num(g.max_baseline_d));
    kv(p + "overhead_no_attack", opt(g.overhead_no_attack, "(pairs=0)"));
    kv(p + "overhead_attacked", opt(g.overhead_attacked, "(pairs=0)"));
  }
  kv("stress_pairs", std::to_string(s.stress_pairs));
  kv("stress_slowdown_biscuit", opt(s.stress_slowdown_biscuit, "(pairs=0)"));
  kv("stress_slowdown_baseline", opt(s.stress_slowdown_baseline, "(pairs=0)"));
  kv("stress_reduction", opt(s.stress_reduction, "(pairs=" + std::to_string(s.stress_pairs) + ")"));
  return o.str();
}

}  // namespace biscuit
