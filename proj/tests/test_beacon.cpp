#include <doctest.h>

#include <algorithm>

#include "biscuit/beacon.hpp"
#include "biscuit/suite.hpp"

using namespace biscuit;

namespace {

Function fn(std::string name, std::vector<FunctionItem> body) {
  Function f;
  f.name = std::move(name);
  f.body = std::move(body);
  return f;
}

Program program(std::vector<Function> fns) {
  Program p;
  p.name = "t";
  for (auto& f : fns) p.functions[f.name] = f;
  p.params["N"] = ParamDef{16, {8, 16, 32}, 0, 0};
  return p;
}

bool has(const std::vector<std::string>& v, const std::string& x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

}  // namespace

TEST_CASE("classification follows the outer bound") {
  CHECK(classify(make_nest({{"a", BoundSpec::constant(4)}}, 1, 0, 0)) == BeaconKind::Precise);
  CHECK(classify(make_nest({{"a", BoundSpec::param("N")}}, 1, 0, 0)) == BeaconKind::Precise);
  CHECK(classify(make_nest({{"a", BoundSpec::data(10, 1)}}, 1, 0, 0)) == BeaconKind::Expected);
  // A data-dependent inner level does not change the kind.
  CHECK(classify(make_nest({{"a", BoundSpec::param("N")}, {"b", BoundSpec::data(5, 1)}}, 1, 0, 0)) ==
        BeaconKind::Precise);
}

TEST_CASE("top-level nests each get one site with an exit") {
  Program p = program({fn("main", {{make_nest({{"A", BoundSpec::param("N")}}, 1, 0, 0)},
                                   {Work{100}},
                                   {make_nest({{"B", BoundSpec::constant(4)}, {"B2", BoundSpec::constant(8)}}, 1, 0, 0)}})});
  auto ip = hoist(p);
  REQUIRE(ip.sites.size() == 2);
  const auto* b = ip.site("B");
  REQUIRE(b != nullptr);
  CHECK(b->location == SiteLocation{"main", "preheader:B"});
  CHECK(b->exits.front() == SiteLocation{"main", "exit:B"});
  CHECK(b->levels.size() == 2);
  CHECK(has(b->covers, "B2"));
}

TEST_CASE("a callee nest inside a loop is folded into the caller's beacon") {
  Function helper = fn("helper", {{make_nest({{"H", BoundSpec::param("N")}}, 1, 0, 0)}});
  LoopNest outer = make_nest({{"O", BoundSpec::constant(10)}}, 1, 0, 0, {{CallSite{"helper", 1.0, std::nullopt}}});
  Program p = program({fn("main", {{outer}}), helper});
  auto ip = hoist(p);
  REQUIRE(ip.sites.size() == 1);
  const auto& s = ip.sites.front();
  CHECK(s.loop_id == "O");
  CHECK(s.kind == BeaconKind::Precise);
  REQUIRE(s.levels.size() == 2);
  CHECK(s.levels[1].loop_id == "H");
  CHECK(s.levels[1].visible);
  CHECK(s.hoisted_from.front() == SiteLocation{"helper", "preheader:H"});
  CHECK(has(s.covers, "H"));
}

TEST_CASE("a callee-local bound makes the hoisted beacon expected") {
  Function helper = fn("helper", {{make_nest({{"H", BoundSpec::param("M")}}, 1, 0, 0)}});
  helper.local_params = {"M"};
  LoopNest outer = make_nest({{"O", BoundSpec::constant(10)}}, 1, 0, 0, {{CallSite{"helper", 1.0, std::nullopt}}});
  Program p = program({fn("main", {{outer}}), helper});
  p.params["M"] = ParamDef{4, {2, 4}, 0, 0};
  auto ip = hoist(p);
  const auto& s = ip.sites.front();
  CHECK(s.kind == BeaconKind::Expected);
  CHECK_FALSE(s.levels.back().visible);
}

TEST_CASE("a conditional call is aggregated and makes the site expected") {
  Function helper = fn("helper", {{make_nest({{"H", BoundSpec::constant(3)}}, 1, 0, 0)}});
  LoopNest outer = make_nest({{"O", BoundSpec::constant(10)}}, 1, 0, 0, {{CallSite{"helper", 0.5, std::nullopt}}});
  Program p = program({fn("main", {{outer}}), helper});
  auto ip = hoist(p);
  REQUIRE(ip.sites.size() == 1);
  CHECK(ip.sites.front().kind == BeaconKind::Expected);
  CHECK(ip.sites.front().levels.size() == 1);
  CHECK(has(ip.sites.front().covers, "H"));
}

TEST_CASE("a recursion cycle gets one beacon per entry edge") {
  Function a = fn("a", {{make_nest({{"RA", BoundSpec::constant(4)}}, 1, 0, 0)}, {CallSite{"b", 1.0, std::nullopt}}});
  Function b = fn("b", {{CallSite{"a", 1.0, std::nullopt}}});
  Function main = fn("main", {{CallSite{"a", 1.0, BoundSpec::param("N")}}, {Work{10}}, {CallSite{"b", 1.0, BoundSpec::constant(2)}}});
  Program p = program({main, a, b});
  auto ip = hoist(p);
  REQUIRE(ip.sites.size() == 2);
  const auto* first = ip.site(recursion_site_id("main", 0, "a"));
  const auto* second = ip.site(recursion_site_id("main", 2, "b"));
  REQUIRE(first != nullptr);
  REQUIRE(second != nullptr);
  CHECK(first->kind == BeaconKind::Precise);
  CHECK(first->location == SiteLocation{"main", "call:0"});
  CHECK(has(first->covers, "RA"));
  CHECK(has(second->covers, "RA"));
}

TEST_CASE("every reachable loop is covered by exactly one site") {
  for (const auto& p : reference_suite()) {
    auto ip = hoist(p);
    for (const auto& id : reachable_loop_ids(p)) {
      int owners = 0;
      for (const auto& s : ip.sites) owners += has(s.covers, id) ? 1 : 0;
      CHECK_MESSAGE(owners >= 1, p.name << " loop " << id);
    }
  }
}

TEST_CASE("enter beacon carries the inflated prediction") {
  ModelSet models;
  models.models["L"] = {"L", {10, 2, 1}, 0.1, BeaconKind::Precise, {}};
  BeaconSite site;
  site.loop_id = "L";
  BeaconChannel ch;
  std::vector<std::optional<double>> b{4.0, 5.0};
  auto ev = emit_enter(3, site, models, b, 17, ch);
  CHECK(ev.predicted_upper == doctest::Approx(41.8));
  emit_complete(3, "L", 20, ch);
  auto got = ch.drain();
  REQUIRE(got.size() == 2);
  CHECK(got[0].phase == BeaconPhase::Enter);
  CHECK(got[0].tick == 17);
  CHECK(got[1].phase == BeaconPhase::Complete);
  CHECK(ch.empty());

  BeaconSite unknown;
  unknown.loop_id = "nope";
  CHECK_THROWS_AS(emit_enter(3, unknown, models, b, 0, ch), ProtocolError);
}

TEST_CASE("channel is FIFO per writer") {
  BeaconChannel ch;
  for (int i = 0; i < 5; ++i) {
    emit_complete(1, "x" + std::to_string(i), i, ch);
    emit_complete(2, "y" + std::to_string(i), i, ch);
  }
  auto got = ch.drain();
  std::vector<std::string> one;
  for (const auto& e : got) {
    if (e.pid == 1) one.push_back(e.loop_id);
  }
  CHECK(one == std::vector<std::string>{"x0", "x1", "x2", "x3", "x4"});
}

TEST_CASE("bracket validator") {
  BracketValidator v;
  CHECK(v.accept({1, "A", BeaconPhase::Enter, 5, 0}));
  CHECK(v.accept({1, "B", BeaconPhase::Enter, 5, 1}));
  CHECK_FALSE(v.balanced());
  CHECK_FALSE(v.accept({1, "A", BeaconPhase::Complete, 0, 2}));  // not LIFO
  CHECK(v.accept({1, "B", BeaconPhase::Complete, 0, 3}));
  CHECK(v.accept({1, "A", BeaconPhase::Complete, 0, 4}));
  CHECK_FALSE(v.accept({2, "A", BeaconPhase::Complete, 0, 5}));  // never entered
  CHECK(v.accept({2, "A", BeaconPhase::Enter, 1, 6}));
  CHECK_FALSE(v.accept({2, "A", BeaconPhase::Enter, 1, 7}));     // double enter
  CHECK(v.violations().size() == 3);
}

TEST_CASE("a loop-free program emits no beacons") {
  auto ip = hoist(attacker_program(1e6));
  CHECK(ip.sites.empty());
  Rng rng(1);
  auto plan = build_plan(ip, default_bindings(ip.program), rng);
  for (const auto& seg : plan) CHECK(seg.site_id.empty());
  double instr = 0;
  for (const auto& seg : plan) instr += seg.instructions;
  CHECK(instr == doctest::Approx(1e6));
}

TEST_CASE("plan segments follow the sites and ground truth") {
  LoopNest n = make_nest({{"A", BoundSpec::param("N")}, {"B", BoundSpec::constant(5)}}, 1, 0, 0);
  n.true_coeffs = {10, 2, 1};
  Program p = program({fn("main", {{n}})});
  p.params["N"].value = 4;
  auto ip = hoist(p);
  Rng rng(1);
  auto plan = build_plan(ip, default_bindings(p), rng);
  double misses = 0;
  for (const auto& s : plan) {
    if (s.site_id == "A") {
      misses += s.misses;
      CHECK(s.level_bounds == std::vector<double>{4, 5});
    }
  }
  CHECK(misses == doctest::Approx(38));
}
