#pragma once

// Synthetic workload IR: programs made of functions whose bodies hold loop
// nests, call sites and straight-line work. Every loop nest carries the
// ground-truth miss coefficients that the simulator uses as hidden truth.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace biscuit {

using Rng = std::mt19937_64;

class WorkloadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MalformedLoop : public WorkloadError {
 public:
  using WorkloadError::WorkloadError;
};

class UnresolvedBound : public WorkloadError {
 public:
  using WorkloadError::WorkloadError;
};

struct ConstantBound {
  std::int64_t value = 1;
};

struct ParamBound {
  std::string name;
};

struct DataDependentBound {
  double mean = 1.0;
  double stddev = 0.0;
  std::int64_t min = 1;
};

/// Loop limit plus the affine trip-count transform left behind by
/// normalization: trips = max(0, ceil((limit - offset) / stride)).
/// A fresh bound has offset 0 and stride 1, i.e. trips == limit.
struct BoundSpec {
  std::variant<ConstantBound, ParamBound, DataDependentBound> source;
  std::int64_t offset = 0;
  std::int64_t stride = 1;

  static BoundSpec constant(std::int64_t v) { return {ConstantBound{v}}; }
  static BoundSpec param(std::string name) { return {ParamBound{std::move(name)}}; }
  static BoundSpec data(double mean, double stddev, std::int64_t min = 1) {
    return {DataDependentBound{mean, stddev, min}};
  }

  bool is_constant() const { return std::holds_alternative<ConstantBound>(source); }
  bool is_param() const { return std::holds_alternative<ParamBound>(source); }
  bool is_data_dependent() const { return std::holds_alternative<DataDependentBound>(source); }
  bool identity_transform() const { return offset == 0 && stride == 1; }
};

struct Stmt;

struct Loop {
  std::string id;
  BoundSpec bound;
  std::int64_t start = 0;
  std::int64_t step = 1;
  std::vector<Stmt> body;
  // Original induction value = induction_base + i * induction_scale.
  std::int64_t induction_base = 0;
  std::int64_t induction_scale = 1;
};

struct CallSite {
  std::string target;
  /// Probability the call is taken; < 1 marks a conditional call.
  double probability = 1.0;
  /// Recursion depth when the call enters a recursion cycle.
  std::optional<BoundSpec> rounds;

  bool conditional() const { return probability < 1.0; }
};

struct Work {
  std::int64_t instructions = 0;
};

struct Stmt {
  std::variant<Loop, CallSite, Work> node;
};

struct LoopNest {
  Loop root;
  /// (beta_0, beta_1, ..., beta_n), misses per product-term unit.
  std::vector<double> true_coeffs;
  double noise_frac = 0.0;

  int depth() const;
};

struct FunctionItem {
  std::variant<LoopNest, CallSite, Work> node;
};

struct Function {
  std::string name;
  std::vector<FunctionItem> body;
  /// Params computed inside this function; callers cannot see their value.
  std::set<std::string> local_params;
};

struct ParamDef {
  std::int64_t value = 1;                ///< default binding
  std::vector<std::int64_t> train;       ///< training grid values
  std::int64_t run_lo = 0, run_hi = 0;   ///< deployment draw range (0,0 -> value)
};

struct Program {
  std::string name;
  std::string entry = "main";
  std::map<std::string, Function> functions;
  std::map<std::string, ParamDef> params;
  /// Stall sensitivity: slowdown per unit of extra misses relative to the
  /// running nest's own baseline miss rate.
  double sensitivity = 0.02;
  /// Misses per thousand instructions for straight-line (non-loop) work.
  double plain_mpki = 0.0;
};

/// Resolved parameter values plus the scale applied to data-dependent
/// trip-count means (1.0 = the input distribution used in training).
struct Bindings {
  std::map<std::string, std::int64_t> params;
  double data_scale = 1.0;
};

struct CallEdge {
  std::string caller;
  std::string callee;
  bool in_loop = false;
  bool conditional = false;
};

struct CallGraph {
  std::vector<std::string> functions;
  std::vector<CallEdge> edges;
  /// Strongly connected component id per function.
  std::map<std::string, int> scc;
  /// Components that form a recursion cycle (size > 1 or a self call).
  std::set<int> recursive_sccs;

  bool recursive(const std::string& fn) const;
  bool same_cycle(const std::string& a, const std::string& b) const;
  std::vector<std::string> members(int scc_id) const;
};

/// Trip count of `for (i = start; i <op> limit; i += step)` where <op> is
/// `<` for positive and `>` for negative steps.
std::int64_t trip_count(std::int64_t start, std::int64_t limit, std::int64_t step);

/// Rewrites the loop to start at 0 with unit step, preserving the trip
/// count and recording the induction remapping. Inner loops are left alone.
Loop normalize_loop(const Loop& loop);

/// Normalizes every loop of the nest.
LoopNest normalize_nest(const LoopNest& nest);

/// The loop levels of a rectangular nest, outermost first. Throws
/// WorkloadError when a level holds more than one inner loop.
std::vector<const Loop*> loop_chain(const Loop& root);

std::int64_t resolve_bound(const BoundSpec& bound, const Bindings& bindings, Rng& rng);

std::vector<std::int64_t> resolve_bounds(const LoopNest& nest, const Bindings& bindings,
                                         Rng& rng);

/// Polynomial beta_0 + beta_1 lb_1 + ... + beta_n lb_1...lb_n, no noise.
double miss_polynomial(std::span<const double> coeffs, std::span<const std::int64_t> bounds);

/// Ground-truth misses perturbed by a uniform factor in [1-noise, 1+noise].
double ground_truth_misses(const LoopNest& nest, std::span<const std::int64_t> bounds,
                           Rng& rng);

CallGraph build_call_graph(const Program& program);

/// Structural checks: entry exists, call targets exist, loop ids unique,
/// nests rectangular, coefficient counts match depth.
void validate(const Program& program);

/// Default bindings (ParamDef::value for every param).
Bindings default_bindings(const Program& program);

/// Deployment bindings: each param drawn uniformly in [run_lo, run_hi].
Bindings draw_bindings(const Program& program, Rng& rng, double data_scale = 1.0);

}  // namespace biscuit
