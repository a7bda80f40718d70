#pragma once

// Aggregate metrics over scenario reports. Everything here is a pure
// function of the reports, so a summary recomputes from the files alone.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "biscuit/scenario.hpp"

namespace biscuit {

struct RegimeScore {
  std::string regime;
  int tp = 0, fp = 0, fn = 0, tn = 0;
  int attacked = 0;   ///< Biscuit scenarios with an attacker
  int no_attack = 0;  ///< Biscuit scenarios without one
  int attacker_exact = 0;  ///< flagged set is exactly {attacker}
  std::optional<double> precision, recall, f_score, fp_rate;
  int fp_cases = 0;
  int fp_exonerated = 0;
  /// Mean D of attacked Biscuit scenarios per technique.
  std::map<std::string, double> mean_d;
  std::map<std::string, int> d_count;
  double min_biscuit_d = 1.0;
  double max_baseline_d = 0.0;
  int baseline_attacked = 0;
  std::optional<double> overhead_no_attack, overhead_attacked;
  int pairs_no_attack = 0, pairs_attacked = 0;
};

struct Score {
  std::vector<RegimeScore> regimes;
  std::optional<double> stress_reduction;
  std::optional<double> stress_slowdown_biscuit, stress_slowdown_baseline;
  int stress_pairs = 0;
  int episodes = 0;
  int probe_bound_violations = 0;
  std::int64_t capacity_violations = 0;
  int parks = 0, migrations = 0, swaps = 0;
  int assertion_failures = 0;
  int scenarios = 0;

  const RegimeScore* regime(const std::string& name) const;
};

/// precision/recall harmonic mean; nullopt when undefined.
std::optional<double> f_score(int tp, int fp, int fn);
/// fp / (fp + tn); nullopt without no-attack scenarios.
std::optional<double> fp_rate(int fp, int tn);

Score score(const std::vector<ScenarioReport>& reports);

/// key,value rows headed by summary_version,1. Undefined values print as
/// "undefined" followed by the counts they would divide.
std::string summary_csv(const Score& s);

}  // namespace biscuit
