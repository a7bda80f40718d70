#include <doctest.h>

#include <cmath>

#include "biscuit/program_io.hpp"
#include "biscuit/suite.hpp"
#include "biscuit/workload.hpp"

using namespace biscuit;

namespace {

Loop simple_loop(std::string id, BoundSpec b, std::int64_t start = 0, std::int64_t step = 1) {
  Loop l;
  l.id = std::move(id);
  l.bound = std::move(b);
  l.start = start;
  l.step = step;
  l.body.push_back({Work{10}});
  return l;
}

// Induction values a C-style loop visits, by direct simulation.
std::vector<std::int64_t> enumerate(std::int64_t start, std::int64_t limit, std::int64_t step) {
  std::vector<std::int64_t> v;
  for (std::int64_t i = start; step > 0 ? i < limit : i > limit; i += step) v.push_back(i);
  return v;
}

}  // namespace

TEST_CASE("strided loop normalizes to a unit-step loop with remapped induction") {
  Loop l = simple_loop("L", BoundSpec::param("N"), 10, 2);
  Loop n = normalize_loop(l);
  CHECK(n.start == 0);
  CHECK(n.step == 1);
  CHECK(n.induction_base == 10);
  CHECK(n.induction_scale == 2);
  Bindings b;
  b.params["N"] = 20;
  Rng rng(1);
  // i = 10, 12, 14, 16, 18
  CHECK(resolve_bound(n.bound, b, rng) == 5);
  b.params["N"] = 21;
  CHECK(resolve_bound(n.bound, b, rng) == 6);
}

TEST_CASE("already normal loop is unchanged") {
  Loop l = simple_loop("L", BoundSpec::param("N"));
  Loop n = normalize_loop(l);
  CHECK(n.start == 0);
  CHECK(n.step == 1);
  CHECK(n.bound.identity_transform());
  CHECK(n.induction_base == 0);
  CHECK(n.induction_scale == 1);
}

TEST_CASE("empty range normalizes to zero iterations") {
  Loop n = normalize_loop(simple_loop("L", BoundSpec::constant(3), 3, 1));
  Bindings b;
  Rng rng(1);
  CHECK(resolve_bound(n.bound, b, rng) == 0);
}

TEST_CASE("step of zero is malformed") {
  CHECK_THROWS_AS(normalize_loop(simple_loop("L", BoundSpec::constant(3), 0, 0)), MalformedLoop);
  CHECK_THROWS_AS(trip_count(0, 5, 0), MalformedLoop);
}

TEST_CASE("normalization preserves iteration count and induction values") {
  Rng gen(2024);
  std::uniform_int_distribution<std::int64_t> s(-20, 20), lim(-30, 30), st(-5, 5);
  int checked = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    std::int64_t start = s(gen), limit = lim(gen), step = st(gen);
    if (step == 0) continue;
    auto expect = enumerate(start, limit, step);
    Loop n = normalize_loop(simple_loop("L", BoundSpec::constant(limit), start, step));
    Bindings b;
    Rng rng(0);
    const auto trips = resolve_bound(n.bound, b, rng);
    REQUIRE(trips == static_cast<std::int64_t>(expect.size()));
    for (std::int64_t j = 0; j < trips; ++j) {
      CHECK(n.induction_base + j * n.induction_scale == expect[static_cast<std::size_t>(j)]);
    }
    // The symbolic form agrees with the constant one for positive limits.
    if (limit >= 1) {
      Loop p = normalize_loop(simple_loop("L", BoundSpec::param("N"), start, step));
      b.params["N"] = limit;
      CHECK(resolve_bound(p.bound, b, rng) == trips);
    }
    ++checked;
  }
  CHECK(checked > 1500);
}

TEST_CASE("resolve_bounds examples") {
  Rng rng(7);
  Bindings b;
  LoopNest two = make_nest({{"a", BoundSpec::constant(8), 1}, {"b", BoundSpec::constant(8), 1}}, 1, 0, 0);
  CHECK(resolve_bounds(two, b, rng) == std::vector<std::int64_t>{8, 8});

  LoopNest p = make_nest({{"a", BoundSpec::param("N"), 1}}, 1, 0, 0);
  b.params["N"] = 100;
  CHECK(resolve_bounds(p, b, rng) == std::vector<std::int64_t>{100});

  LoopNest d = make_nest({{"a", BoundSpec::data(50, 0, 1), 1}}, 1, 0, 0);
  CHECK(resolve_bounds(d, b, rng) == std::vector<std::int64_t>{50});

  Bindings empty;
  CHECK_THROWS_AS(resolve_bounds(p, empty, rng), UnresolvedBound);
}

TEST_CASE("ground truth polynomial") {
  LoopNest n = make_nest({{"a", BoundSpec::constant(4), 1}, {"b", BoundSpec::constant(5), 1}}, 1, 0, 0);
  n.true_coeffs = {10, 2, 1};
  Rng rng(3);
  std::vector<std::int64_t> bounds{4, 5};
  CHECK(ground_truth_misses(n, bounds, rng) == doctest::Approx(38.0));

  LoopNest three = make_nest({{"a", BoundSpec::constant(1), 1}, {"b", BoundSpec::constant(1), 1},
                              {"c", BoundSpec::constant(1), 1}}, 1, 0, 0);
  three.true_coeffs = {1.5, 2.25, 3.0, 4.0};
  std::vector<std::int64_t> ones{1, 1, 1};
  CHECK(ground_truth_misses(three, ones, rng) == doctest::Approx(10.75));
}

TEST_CASE("noisy ground truth stays within its band") {
  LoopNest n = make_nest({{"a", BoundSpec::constant(4), 1}, {"b", BoundSpec::constant(5), 1}}, 1, 0, 0.1);
  n.true_coeffs = {10, 2, 1};
  std::vector<std::int64_t> bounds{4, 5};
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    double m = ground_truth_misses(n, bounds, rng);
    CHECK(m >= 0.9 * 38.0 - 1e-9);
    CHECK(m <= 1.1 * 38.0 + 1e-9);
  }
}

TEST_CASE("call graph finds recursion cycles") {
  Program p;
  p.name = "r";
  Function main;
  main.name = "main";
  main.body.push_back({CallSite{"a", 1.0, BoundSpec::constant(4)}});
  Function a;
  a.name = "a";
  a.body.push_back({CallSite{"b", 1.0, std::nullopt}});
  Function b;
  b.name = "b";
  b.body.push_back({CallSite{"a", 1.0, std::nullopt}});
  p.functions = {{"main", main}, {"a", a}, {"b", b}};
  auto g = build_call_graph(p);
  CHECK(g.recursive("a"));
  CHECK(g.recursive("b"));
  CHECK_FALSE(g.recursive("main"));
  CHECK(g.same_cycle("a", "b"));
}

TEST_CASE("validation rejects structural errors") {
  Program p;
  p.name = "bad";
  Function main;
  main.name = "main";
  main.body.push_back({CallSite{"missing", 1.0, std::nullopt}});
  p.functions["main"] = main;
  CHECK_THROWS_AS(validate(p), WorkloadError);

  Program q;
  q.name = "coeffs";
  Function m;
  m.name = "main";
  LoopNest n = make_nest({{"a", BoundSpec::constant(4), 1}}, 1, 0, 0);
  n.true_coeffs = {1.0, 2.0, 3.0};
  m.body.push_back({n});
  q.functions["main"] = m;
  CHECK_THROWS_AS(validate(q), WorkloadError);
}

TEST_CASE("draw_bindings stays inside run ranges") {
  Program p = reference_suite().front();
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng rng(s);
    auto b = draw_bindings(p, rng);
    for (const auto& [name, def] : p.params) {
      const bool fixed = def.run_lo == 0 && def.run_hi == 0;
      CHECK(b.params.at(name) >= (fixed ? def.value : def.run_lo));
      CHECK(b.params.at(name) <= (fixed ? def.value : def.run_hi));
    }
  }
}

TEST_CASE("program YAML round trip") {
  for (const auto& p : reference_suite()) {
    std::string text = dump_program(p);
    Program back = parse_program(text);
    CHECK(dump_program(back) == text);
    CHECK(back.functions.size() == p.functions.size());
  }
}

TEST_CASE("program YAML errors carry line numbers") {
  const std::string text =
      "name: x\n"
      "functions:\n"
      "  - name: main\n"
      "    body:\n"
      "      - nest:\n"
      "          coeffs: [1, 2]\n"
      "          loop: {id: L, bound: {constant: 4}, step: 0, body: []}\n";
  try {
    parse_program(text);
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 7") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_program("name: [unclosed\n"), ConfigError);
}
