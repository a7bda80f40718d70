#pragma once

// Model training: every beacon site is profiled in isolation over the
// cartesian grid of the parameters it depends on, fitted by least squares,
// and its run-to-run variability measured at the largest grid point.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "biscuit/beacon.hpp"
#include "biscuit/cache_model.hpp"

namespace biscuit {

struct TrainOptions {
  std::uint64_t seed = 1;
  /// Executions per grid point.
  int grid_repeats = 2;
  /// Executions at the largest grid point used for the variability ratio.
  int k_repeats = 8;
  /// Use each site's own ratio instead of the global maximum.
  bool per_loop_k = false;
  bool parallel = true;
};

struct SiteDiagnostics {
  std::string program;
  std::string site;
  BeaconKind kind = BeaconKind::Precise;
  std::size_t samples = 0;
  std::vector<std::size_t> dropped_terms;
  /// Dropped terms whose level is not a compile-time constant; these mean
  /// the grid does not vary that level.
  std::vector<std::size_t> grid_gaps;
  double ratio = 0.0;
};

struct TrainResult {
  ModelSet models;
  std::vector<SiteDiagnostics> sites;
};

/// Parameters a site's executions depend on.
std::vector<std::string> site_params(const InstrumentedProgram& program, const BeaconSite& site);

/// Throws ConfigError on an empty grid, duplicate site ids across programs,
/// or too few samples; degenerate fits drop the collinear terms.
TrainResult train(const std::vector<InstrumentedProgram>& programs, const TrainOptions& options);

struct HeldoutStats {
  std::size_t samples = 0;
  std::size_t covered = 0;  ///< observed <= CM(U)
  double band_error_sum = 0.0;

  double coverage() const { return samples ? static_cast<double>(covered) / static_cast<double>(samples) : 0.0; }
  double accuracy() const { return samples ? 1.0 - band_error_sum / static_cast<double>(samples) : 0.0; }
};

/// Compares deployment-time executions (parameters drawn from their run
/// ranges) against the models. `kind` restricts to one beacon kind.
HeldoutStats evaluate_heldout(const std::vector<InstrumentedProgram>& programs,
                              const ModelSet& models, std::uint64_t seed, int runs,
                              double data_scale, std::optional<BeaconKind> kind = std::nullopt);

/// 64-bit FNV-1a, used to derive stable per-task seeds.
std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 14695981039346656037ull);

}  // namespace biscuit
