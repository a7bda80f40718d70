#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "biscuit/scenario.hpp"
#include "biscuit/scheduler.hpp"
#include "fixtures.hpp"

using namespace biscuit;

TEST_CASE("ledger release is the inverse of reserve") {
  SocketLedger l(0, 100);
  l.reserve(1, 30);
  l.reserve(2, 0.1);
  CHECK(l.fits(69.9));
  CHECK_FALSE(l.fits(70));
  CHECK(l.release(1) == 30);
  CHECK(l.release(2) == doctest::Approx(0.1));
  CHECK(l.release(7) == 0.0);
  CHECK(l.used() == 0.0);
  CHECK(l.available() == 100.0);
}

TEST_CASE("ledger occupancy does not depend on reservation order") {
  std::vector<std::pair<int, double>> items{{1, 0.1}, {2, 0.2}, {3, 0.3}, {4, 1e-17}, {5, 7.7}};
  std::vector<int> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::optional<double> first;
  do {
    SocketLedger l(0, 10);
    for (int i : order) l.reserve(items[static_cast<std::size_t>(i)].first, items[static_cast<std::size_t>(i)].second);
    if (!first) first = l.used();
    CHECK(l.used() == *first);
  } while (std::next_permutation(order.begin(), order.end()));
}

TEST_CASE("enter beacons stay, migrate or park by available capacity") {
  MachineConfig m = fx::machine(100, 4);
  SchedulerParams params;
  params.mitigation = false;
  std::vector<ProcessState> ps{fx::proc(0, {fx::nest(4e6, 50, 60)}, true, 0),
                               fx::proc(1, {fx::nest(2e7, 50, 60)}, true),
                               fx::proc(2, {fx::nest(2e6, 50, 60)}, true)};
  World w(m, ps, std::nullopt);
  BiscuitScheduler sched(m, params);
  w.step(sched);
  // pid 0 stays on its pinned socket; pid 1 lands next to it and moves away;
  // pid 2 fits nowhere and waits.
  CHECK(fx::count_actions(w, 0, "migrate") == 0);
  CHECK(fx::count_actions(w, 1, "migrate") == 1);
  CHECK(w.proc(1).placement->socket == 1);
  CHECK(w.proc(2).status == ProcStatus::Descheduled);
  CHECK(sched.ledgers()[0].used() == 60);
  CHECK(sched.ledgers()[1].used() == 60);

  fx::run(w, sched);
  CHECK(w.all_finished());
  CHECK(fx::count_actions(w, 2, "resume") == 1);
  CHECK(sched.capacity_violations() == 0);
  CHECK(sched.protocol_violations().empty());
  for (const auto& l : sched.ledgers()) CHECK(l.used() == 0.0);
}

TEST_CASE("a swap makes room when no socket fits outright") {
  MachineConfig m = fx::machine(100, 4);
  SchedulerParams params;
  params.mitigation = false;
  std::vector<ProcessState> ps{fx::proc(0, {fx::nest(1e8, 10, 30)}, true),
                               fx::proc(1, {fx::nest(1e8, 10, 50)}, true),
                               fx::proc(2, {fx::nest(1e8, 10, 80)}, true)};
  World w(m, ps, std::nullopt);
  BiscuitScheduler sched(m, params);
  w.step(sched);
  CHECK(fx::count_actions(w, 2, "swap") == 1);
  CHECK(w.proc(2).placement->socket == 1);
  CHECK(w.proc(1).placement->socket == 0);
  CHECK(sched.ledgers()[0].used() == 80);
  CHECK(sched.ledgers()[1].used() == 80);
}

TEST_CASE("a completion without a reservation is a protocol violation") {
  MachineConfig m = fx::machine(100);
  World w(m, {fx::proc(0, {fx::nest(1e8, 10, 30)}, true)}, std::nullopt);
  BiscuitScheduler sched(m);
  sched.on_beacons(w, {BeaconEvent{0, "L", BeaconPhase::Complete, 0, 0}});
  CHECK(sched.protocol_violations().size() == 1);
}

TEST_CASE("detection fires only when misses strictly exceed CM(U)") {
  MachineConfig m = fx::machine(100);
  World w(m, {fx::proc(0, {fx::nest(1e8, 10, 30)}, true)}, std::nullopt);
  auto& p = w.proc(0);
  p.status = ProcStatus::Running;
  p.open_nest = OpenNest{"L", 100};
  p.misses_in_current_nest = 100;
  CHECK(BiscuitScheduler::detect(w, {}).empty());
  p.misses_in_current_nest = 100.001;
  CHECK(BiscuitScheduler::detect(w, {}) == std::vector<int>{0});
  CHECK(BiscuitScheduler::detect(w, {0}).empty());
}

namespace {

// Victim (pid 0) with baseline MPKI 1 and a CM(U) 10% above its true
// misses; `suspects` beaconless co-runners on the same socket, one of which
// (at index `attacker_at`) attacks.
struct Mitigation {
  World world;
  BiscuitScheduler sched;
  int attacker;
};

Mitigation mitigation(int suspects, int attacker_at, bool attack = true, double victim_bound = 4.4e5) {
  MachineConfig m = fx::machine(1e7, suspects + 4);
  std::vector<ProcessState> ps{fx::proc(0, {fx::nest(4e8, 4e5, victim_bound)}, true, 0)};
  for (int i = 0; i < suspects; ++i) ps.push_back(fx::proc(i + 1, {fx::plain(8e8, 8e4)}, false, 0));
  std::optional<AttackerSpec> spec;
  if (attack) {
    spec = AttackerSpec::make(Technique::FlushReload);
    spec->attacker_pid = attacker_at + 1;
  }
  return Mitigation{World(m, ps, spec), BiscuitScheduler(m), attacker_at + 1};
}

}  // namespace

TEST_CASE("halving then linear scan isolates the attacker among 16 suspects") {
  for (int at : {0, 5, 15}) {
    auto mt = mitigation(16, at);
    fx::run(mt.world, mt.sched);
    REQUIRE(mt.world.all_finished());
    REQUIRE_FALSE(mt.sched.episodes().empty());
    const auto& ep = mt.sched.episodes().front();
    CHECK(ep.suspects == 16);
    CHECK(ep.flagged == mt.attacker);
    CHECK_FALSE(ep.victim_flagged);
    CHECK(ep.halving_probes <= halving_probe_bound(16));
    CHECK(ep.halving_probes == 1);
    CHECK(ep.linear_probes <= 8);
    CHECK(mt.sched.flagged() == std::vector<int>{mt.attacker});
  }
}

TEST_CASE("three suspects go straight to the linear scan") {
  auto mt = mitigation(3, 2);
  fx::run(mt.world, mt.sched);
  REQUIRE_FALSE(mt.sched.episodes().empty());
  const auto& ep = mt.sched.episodes().front();
  CHECK(ep.halving_probes == 0);
  CHECK(ep.linear_probes >= 1);
  CHECK(ep.linear_probes <= 3);
  CHECK(ep.flagged == mt.attacker);
}

TEST_CASE("probe bound") {
  CHECK(halving_probe_bound(3) == 0);
  CHECK(halving_probe_bound(8) == 0);
  CHECK(halving_probe_bound(9) == 1);
  CHECK(halving_probe_bound(16) == 1);
  CHECK(halving_probe_bound(17) == 2);
  CHECK(halving_probe_bound(64) == 3);
}

TEST_CASE("without a culprit the victim itself is flagged, then rescheduled when idle") {
  // The victim's true misses exceed its prediction with no attacker present.
  auto mt = mitigation(3, 0, false, 3e5);
  fx::run(mt.world, mt.sched);
  REQUIRE(mt.world.all_finished());
  REQUIRE_FALSE(mt.sched.episodes().empty());
  CHECK(mt.sched.episodes().front().victim_flagged);
  CHECK(mt.sched.flagged() == std::vector<int>{0});
  bool idle = false;
  for (const auto& e : mt.world.schedule_log()) idle |= e.pid == 0 && e.reason == "flagged_idle";
  CHECK(idle);
}

TEST_CASE("a rescheduled flagged process is preempted by a new arrival") {
  MachineConfig m = fx::machine(1e7, 8);
  std::vector<ProcessState> ps{fx::proc(0, {fx::nest(4e8, 4e5, 3e5)}, true, 0),
                               fx::proc(1, {fx::plain(2e7, 2e3)}, false, 0),
                               fx::proc(2, {fx::plain(4e6, 4e2)}, false, 1)};
  ps[2].arrival = 1000000;
  World w(m, ps, std::nullopt);
  BiscuitScheduler sched(m);
  auto reason_seen = [&](const std::string& r) {
    for (const auto& e : w.schedule_log()) {
      if (e.pid == 0 && e.reason.rfind(r, 0) == 0) return true;
    }
    return false;
  };
  while (!reason_seen("flagged_idle") && w.tick() < 100000) w.step(sched);
  REQUIRE(reason_seen("flagged_idle"));
  w.proc(2).arrival = w.tick();
  w.step(sched);
  CHECK(reason_seen("flagged_preempted"));
  CHECK(w.proc(0).status == ProcStatus::Quarantined);
  fx::run(w, sched);
  CHECK(w.all_finished());
}

TEST_CASE("baseline places round robin and never moves anything") {
  MachineConfig m = fx::machine(1e7, 4);
  std::vector<ProcessState> ps;
  for (int i = 0; i < 4; ++i) ps.push_back(fx::proc(i, {fx::nest(4e6, 1e5, 1)}, true));
  World w(m, ps, std::nullopt);
  BaselineScheduler sched;
  w.step(sched);
  for (int i = 0; i < 4; ++i) CHECK(w.proc(i).placement->socket == i % 2);
  fx::run(w, sched);
  for (const auto& e : w.schedule_log()) CHECK(e.action == "place");
}
