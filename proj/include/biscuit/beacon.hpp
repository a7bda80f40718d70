#pragma once

// Beacon placement and protocol. Every loop nest reachable outside of any
// enclosing loop gets an enter beacon at its pre-header and a completion
// beacon at its exit; nests reached from inside another function's loop are
// folded into the caller's outermost beacon, and recursion cycles get one
// beacon per entry edge.

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "biscuit/cache_model.hpp"
#include "biscuit/workload.hpp"

namespace biscuit {

struct SiteLocation {
  std::string function;
  std::string anchor;  ///< "preheader:<loop>", "call:<index>", "exit:<loop>", "return:<index>"

  bool operator==(const SiteLocation&) const = default;
};

struct SiteLevel {
  std::string loop_id;
  BoundSpec bound;
  /// Whether the bound's value is available where the beacon sits.
  bool visible = true;
};

struct BeaconSite {
  /// Site id: the outermost loop id, or "rec:<caller>#<call index>-><callee>"
  /// for the entry edge of a recursion cycle.
  std::string loop_id;
  SiteLocation location;
  BeaconKind kind = BeaconKind::Precise;
  std::vector<SiteLocation> hoisted_from;
  /// Loop ids whose execution this beacon accounts for.
  std::vector<std::string> covers;
  std::vector<SiteLocation> exits;
  /// Feature levels, outermost first (callee levels follow caller levels).
  std::vector<SiteLevel> levels;
};

struct InstrumentedProgram {
  Program program;
  CallGraph graph;
  std::vector<BeaconSite> sites;

  const BeaconSite* site(const std::string& id) const;
};

/// Precise when the outermost loop's bound is known at the pre-header
/// (constant or parameter), Expected when it is data dependent.
BeaconKind classify(const LoopNest& nest);

/// Places beacon sites for the whole program (see file comment).
InstrumentedProgram hoist(const Program& program);

/// Site id for the recursion entry reached through call `index` of `caller`.
std::string recursion_site_id(const std::string& caller, std::size_t index,
                              const std::string& callee);

/// All loop ids of functions reachable from the entry.
std::vector<std::string> reachable_loop_ids(const Program& program);

// ---------------------------------------------------------------------------
// Execution plan: what one run of a program does, as a flat sequence of
// beacon-bracketed segments and plain straight-line stretches.

struct Segment {
  std::string site_id;  ///< empty for uninstrumented stretches
  double instructions = 0.0;
  double misses = 0.0;  ///< ground-truth baseline misses of the segment
  std::vector<double> level_bounds;
  std::vector<std::optional<double>> visible_bounds;
};

std::vector<Segment> build_plan(const InstrumentedProgram& program, const Bindings& bindings,
                                Rng& rng);

// ---------------------------------------------------------------------------
// Protocol between processes and the scheduler.

enum class BeaconPhase { Enter, Complete };

struct BeaconEvent {
  int pid = 0;
  std::string loop_id;
  BeaconPhase phase = BeaconPhase::Enter;
  double predicted_upper = 0.0;  ///< Enter only
  std::int64_t tick = 0;
};

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ordered queue: many writers, one reader, FIFO per writer. Delivery is
/// immediate (zero-tick latency).
class BeaconChannel {
 public:
  void send(BeaconEvent event);
  std::vector<BeaconEvent> drain();
  bool empty() const { return queue_.empty(); }
  std::size_t size() const { return queue_.size(); }

 private:
  std::deque<BeaconEvent> queue_;
};

/// Evaluates CM(U) for the site and sends the Enter event. Throws
/// ProtocolError when the model set has no entry for the site.
BeaconEvent emit_enter(int pid, const BeaconSite& site, const ModelSet& models,
                       std::span<const std::optional<double>> visible_bounds, std::int64_t tick,
                       BeaconChannel& channel);

BeaconEvent emit_complete(int pid, const std::string& loop_id, std::int64_t tick,
                          BeaconChannel& channel);

/// Stack validator: Enter/Complete for each (pid, loop) must alternate and
/// close in LIFO order.
class BracketValidator {
 public:
  bool accept(const BeaconEvent& event);
  bool balanced() const;
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::map<int, std::vector<std::string>> open_;
  std::vector<std::string> violations_;
};

std::string_view to_string(BeaconPhase phase);

/// tick,pid,loop_id,phase,predicted_upper
std::string beacon_trace_csv(std::span<const BeaconEvent> events);

}  // namespace biscuit
