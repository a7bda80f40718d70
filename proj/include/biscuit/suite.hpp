#pragma once

// Reference workloads: crypto-like victims with precise beacons, image
// kernels used as co-runners, a long-running stall-sensitive stress program,
// expected-beacon-heavy vision kernels for the degraded regime, and the
// synthetic nest suite used to check model recovery.

#include <string>
#include <vector>

#include "biscuit/workload.hpp"

namespace biscuit {

struct Level {
  std::string id;
  BoundSpec bound;
  std::int64_t work = 1;  ///< instructions per iteration at this level
};

/// Rectangular nest whose miss density is `mpki` misses per kilo-instruction
/// plus a constant `cold` term. `innermost` is appended to the innermost body.
LoopNest make_nest(const std::vector<Level>& levels, double mpki, double cold, double noise,
                   std::vector<Stmt> innermost = {});

enum class Regime { Accurate, Degraded };

std::string_view to_string(Regime r);
Regime regime_from_string(std::string_view s);

/// Every program the node is trained on.
std::vector<Program> reference_suite();

std::vector<std::string> suite_victims(Regime r);
std::vector<std::string> suite_corunners(Regime r);
/// The long-running program with high stall sensitivity.
std::string stress_program();

/// Straight-line attacker of the given length; no loops, so no beacons.
Program attacker_program(double instructions);

/// `count` single-nest functions called from main, depths cycling 1..3.
/// Nests from index `precise_count` on use a data-dependent outer bound.
Program nest_suite(std::uint64_t seed, int count, int precise_count, double noise);

}  // namespace biscuit
