#pragma once

// Per-loop linear cache-miss model: prefix-product features over the loop
// bounds, least-squares coefficients, and the non-determinism ratio k that
// inflates a prediction into its upper bound CM(U) = (1 + k) CM.

#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace biscuit {

enum class BeaconKind { Precise, Expected };

std::string_view to_string(BeaconKind kind);
BeaconKind beacon_kind_from_string(std::string_view s);

struct TrainingSample {
  std::string loop_id;
  std::vector<double> bounds;
  double observed_misses = 0.0;
};

struct MissModel {
  std::string loop_id;
  std::vector<double> coeffs;
  double k = 0.0;
  BeaconKind kind = BeaconKind::Precise;
  /// Training-mean bound per level; substituted for bounds the beacon
  /// cannot see at its site.
  std::vector<double> expected_bounds;

  std::size_t depth() const { return coeffs.empty() ? 0 : coeffs.size() - 1; }
};

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateFit : public ModelError {
 public:
  DegenerateFit(std::string msg, std::vector<std::size_t> terms)
      : ModelError(std::move(msg)), collinear_terms(std::move(terms)) {}
  /// Feature indices (0 = intercept) linearly dependent on earlier terms.
  std::vector<std::size_t> collinear_terms;
};

class UndefinedRatio : public ModelError {
 public:
  using ModelError::ModelError;
};

class DimensionMismatch : public ModelError {
 public:
  using ModelError::ModelError;
};

/// |R_jj| of the QR factor, relative to the term's own scaled column norm,
/// below which a term is treated as collinear.
inline constexpr double kSingularityTolerance = 1e-9;

/// (1, lb1, lb1*lb2, ..., lb1*...*lbn).
std::vector<double> features(std::span<const double> bounds);

/// Ordinary least squares on the prefix-product features. Throws
/// DegenerateFit naming the collinear terms.
std::vector<double> fit(std::span<const TrainingSample> samples);

/// Least squares restricted to `active` terms; inactive coefficients are 0.
std::vector<double> fit(std::span<const TrainingSample> samples, const std::vector<bool>& active);

/// max over loops of population stddev / mean of repeated-run misses.
double compute_k(const std::map<std::string, std::vector<double>>& per_loop_runs);

/// sigma / mean for one loop's repeated runs.
double variability_ratio(std::span<const double> runs);

double predict(const MissModel& model, std::span<const double> bounds);

/// Bounds the beacon cannot resolve (nullopt) take the model's expected bound.
double predict(const MissModel& model, std::span<const std::optional<double>> bounds);

double predict_upper(const MissModel& model, std::span<const double> bounds);
double predict_upper(const MissModel& model, std::span<const std::optional<double>> bounds);

/// Relative distance of an observation outside the band [CM(1-k), CM(1+k)];
/// 0 inside it. Used for the held-out accuracy figure (1 - mean error).
double band_error(double observed, double cm, double k);

struct ModelSet {
  double k = 0.0;
  std::map<std::string, MissModel> models;

  const MissModel* find(const std::string& loop_id) const;
};

/// Versioned text form; byte-stable for a fixed input.
std::string serialize(const ModelSet& set);
ModelSet parse_models(std::string_view text);
void write_models(const std::string& path, const ModelSet& set);
ModelSet read_models(const std::string& path);

}  // namespace biscuit
