#include <doctest.h>

#include <cmath>

#include "biscuit/cache_model.hpp"

using namespace biscuit;

namespace {

TrainingSample sample(std::vector<double> bounds, double misses) {
  return {"L", std::move(bounds), misses};
}

}  // namespace

TEST_CASE("prefix product features") {
  std::vector<double> b{4, 5, 2};
  CHECK(features(b) == std::vector<double>{1, 4, 20, 40});
  CHECK(features(std::vector<double>{}) == std::vector<double>{1});
}

TEST_CASE("fit recovers a two-level polynomial exactly") {
  // misses = 10 + 2 a + 1 ab
  std::vector<TrainingSample> s;
  for (double a : {2.0, 3.0, 5.0, 8.0}) {
    for (double b : {1.0, 4.0, 7.0}) s.push_back(sample({a, b}, 10 + 2 * a + a * b));
  }
  auto c = fit(s);
  REQUIRE(c.size() == 3);
  CHECK(c[0] == doctest::Approx(10).epsilon(1e-9));
  CHECK(c[1] == doctest::Approx(2).epsilon(1e-9));
  CHECK(c[2] == doctest::Approx(1).epsilon(1e-9));
}

TEST_CASE("fit recovers a line") {
  std::vector<TrainingSample> s;
  for (double a : {1.0, 2.0, 3.0, 10.0}) s.push_back(sample({a}, 10 + 2 * a));
  auto c = fit(s);
  REQUIRE(c.size() == 2);
  CHECK(c[0] == doctest::Approx(10));
  CHECK(c[1] == doctest::Approx(2));
}

TEST_CASE("least squares matches the closed-form line fit on noisy data") {
  std::vector<TrainingSample> s{sample({1}, 12.5), sample({2}, 13.9), sample({3}, 16.4),
                                sample({4}, 18.0), sample({6}, 22.3)};
  // Closed-form simple regression.
  double n = 5, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& t : s) {
    sx += t.bounds[0];
    sy += t.observed_misses;
    sxx += t.bounds[0] * t.bounds[0];
    sxy += t.bounds[0] * t.observed_misses;
  }
  double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  double icept = (sy - slope * sx) / n;
  auto c = fit(s);
  CHECK(c[0] == doctest::Approx(icept).epsilon(1e-9));
  CHECK(c[1] == doctest::Approx(slope).epsilon(1e-9));
}

TEST_CASE("constant inner level is collinear with its parent") {
  std::vector<TrainingSample> s;
  for (double a : {2.0, 3.0, 5.0, 8.0}) s.push_back(sample({a, 4.0}, 10 + 2 * a + a * 4));
  try {
    fit(s);
    FAIL("expected DegenerateFit");
  } catch (const DegenerateFit& e) {
    REQUIRE_FALSE(e.collinear_terms.empty());
    CHECK(e.collinear_terms.front() == 2);
  }
  // Dropping the dependent term leaves a consistent fit.
  auto c = fit(s, {true, true, false});
  CHECK(c[2] == 0.0);
  CHECK(c[0] == doctest::Approx(10));
  CHECK(c[1] == doctest::Approx(6));
}

TEST_CASE("fit rejects too few samples") {
  std::vector<TrainingSample> s{sample({1, 1}, 1), sample({2, 1}, 2)};
  CHECK_THROWS_AS(fit(s), ModelError);
}

TEST_CASE("variability ratio and k") {
  // mean 100, population stddev 10
  std::vector<double> runs{90, 110};
  CHECK(variability_ratio(runs) == doctest::Approx(0.1));
  std::map<std::string, std::vector<double>> per{{"A", {90, 110}}, {"B", {50, 50, 50}}, {"C", {75, 125}}};
  CHECK(compute_k(per) == doctest::Approx(0.25));
  std::map<std::string, std::vector<double>> zero{{"Z", {0, 0}}};
  CHECK_THROWS_AS(compute_k(zero), UndefinedRatio);
  CHECK_THROWS_AS(variability_ratio(std::vector<double>{5}), ModelError);
}

TEST_CASE("prediction and upper bound") {
  MissModel m{"L", {10, 2, 1}, 0.1, BeaconKind::Precise, {}};
  std::vector<double> b{4, 5};
  CHECK(predict(m, b) == doctest::Approx(38));
  CHECK(predict_upper(m, b) == doctest::Approx(41.8));
  CHECK_THROWS_AS(predict(m, std::vector<double>{4}), DimensionMismatch);
}

TEST_CASE("negative predictions floor at zero") {
  MissModel m{"L", {-100, 1}, 0.2, BeaconKind::Precise, {}};
  CHECK(predict(m, std::vector<double>{5}) == 0.0);
  CHECK(predict_upper(m, std::vector<double>{5}) == 0.0);
}

TEST_CASE("expected beacons substitute training means for hidden bounds") {
  MissModel m{"L", {10, 2, 1}, 0.1, BeaconKind::Expected, {6, 3}};
  std::vector<std::optional<double>> b{4.0, std::nullopt};
  // 10 + 2*4 + 4*3
  CHECK(predict(m, b) == doctest::Approx(30));
  MissModel bare{"L", {10, 2, 1}, 0.1, BeaconKind::Expected, {}};
  CHECK_THROWS_AS(predict(bare, b), DimensionMismatch);
}

TEST_CASE("band error") {
  CHECK(band_error(100, 100, 0.1) == 0.0);
  CHECK(band_error(110, 100, 0.1) == 0.0);
  CHECK(band_error(120, 100, 0.1) == doctest::Approx(10.0 / 120));
  CHECK(band_error(80, 100, 0.1) == doctest::Approx(10.0 / 80));
}

TEST_CASE("model file round trip is byte stable") {
  ModelSet set;
  set.k = 0.245;
  set.models["A"] = {"A", {10, 2, 1}, 0.245, BeaconKind::Precise, {}};
  set.models["B"] = {"B", {0.1, 1.0 / 3}, 0.12, BeaconKind::Expected, {52.5}};
  const std::string text = serialize(set);
  ModelSet back = parse_models(text);
  CHECK(serialize(back) == text);
  CHECK(back.models.at("B").coeffs[1] == 1.0 / 3);
  CHECK(back.models.at("B").kind == BeaconKind::Expected);
  CHECK(back.find("missing") == nullptr);
}

TEST_CASE("model file errors") {
  CHECK_THROWS_AS(parse_models(""), ModelError);
  CHECK_THROWS_AS(parse_models("biscuit-models 2\n"), ModelError);
  CHECK_THROWS_AS(parse_models("biscuit-models 1\nmodel A precise k 0.1 coeffs 3 1 2\n"), ModelError);
  CHECK_THROWS_AS(parse_models("biscuit-models 1\nbogus\n"), ModelError);
}
