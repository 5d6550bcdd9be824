#include <catch2/catch_amalgamated.hpp>

#include "stackem/benchmarks.hpp"
#include "stackem/multilevel.hpp"
#include "stackem/serialization.hpp"

using namespace stackem;

namespace {

// Small hand-built two/three-level emulator on Currin refinements.
MultiLevelEmulator build_currin_emulator(int L, const std::vector<int>& n) {
  MultiLevelEmulator em;
  em.xi0 = 16.0;
  em.T = 2;
  Rect dom = Rect::unit_cube(2);
  Vector th(2);
  th << 0.5, 0.5;
  KernelSpec spec(2.5, th);
  for (int l = 1; l <= L; ++l) {
    Matrix X = sobol_prefix(2, n[l - 1], dom);
    Vector z(n[l - 1]);
    for (int i = 0; i < n[l - 1]; ++i) {
      Vector x = X.row(i).transpose();
      z[i] = currin_level(l, x);
      if (l > 1) z[i] -= currin_level(l - 1, x);
    }
    LevelState lv;
    lv.level = l;
    lv.xi = 16.0 * std::pow(2.0, -l);
    lv.cost_per_run = std::pow(4.0, l);
    lv.interp = fit(spec, X, z);
    lv.norm_estimate = lv.interp.rkhs_norm_estimate();
    lv.sigma_norm = norm_of_power_function(lv.interp, Norm::L2, dom, 500, 3);
    em.levels.push_back(std::move(lv));
  }
  if (L >= 3) em.alpha_hat = 1.0;
  return em;
}

}  // namespace

TEST_CASE("stacked prediction reproduces the top-level response at design points") {
  MultiLevelEmulator em = build_currin_emulator(3, {40, 20, 12});
  // The telescoping sum of refinement interpolants equals f_L exactly on
  // X_L because the designs are nested prefixes.
  Matrix X = sobol_prefix(2, 12, Rect::unit_cube(2));
  for (int i = 0; i < 12; ++i) {
    Vector x = X.row(i).transpose();
    double truth = currin_level(3, x);
    CHECK(std::abs(em.predict(x) - truth) <= 1e-6 * (1.0 + std::abs(truth)));
  }
}

TEST_CASE("emulation bound is the sum of per-level sigma-norm products") {
  MultiLevelEmulator em = build_currin_emulator(2, {30, 15});
  double expected = 0.0;
  for (const LevelState& lv : em.levels)
    expected += lv.sigma_norm * lv.norm_estimate;
  CHECK(em.emulation_error_bound() == Catch::Approx(expected));
  CHECK(em.emulation_error_bound() >= 0.0);
}

TEST_CASE("emulation bound decreases with more data per level") {
  double loose = build_currin_emulator(2, {20, 10}).emulation_error_bound();
  double tight = build_currin_emulator(2, {80, 40}).emulation_error_bound();
  CHECK(tight < loose);
}

TEST_CASE("pointwise error interval preconditions and containment") {
  MultiLevelEmulator one = build_currin_emulator(1, {20});
  Vector x(2);
  x << 0.3, 0.6;
  CHECK_THROWS_AS(one.error_interval(x, 1.0), std::invalid_argument);

  MultiLevelEmulator em = build_currin_emulator(3, {60, 30, 15});
  CHECK_THROWS_AS(em.error_interval(x, 0.0), std::invalid_argument);
  auto [lo, hi] = em.error_interval(x, 1.0);
  double center = em.predict(x);
  CHECK(lo <= center);
  CHECK(center <= hi);
  // At a shared design point the sigma part vanishes and the interval is
  // centered with half-width |P_L(x)| / (T^alpha - 1).
  Matrix X = sobol_prefix(2, 15, Rect::unit_cube(2));
  Vector xd = X.row(4).transpose();
  auto [dlo, dhi] = em.error_interval(xd, 1.0);
  double top = std::abs(em.levels.back().interp.predict(xd));
  CHECK((dhi - dlo) / 2.0 == Catch::Approx(top / 1.0).margin(1e-5));
}

TEST_CASE("emulator JSON round-trip preserves predictions and metadata") {
  MultiLevelEmulator em = build_currin_emulator(3, {40, 20, 12});
  json j = emulator_to_json(em);
  CHECK(j["format"] == "stackem-emulator");
  CHECK(j["version"] == 1);
  MultiLevelEmulator back = emulator_from_json(j);
  CHECK(back.num_levels() == 3);
  CHECK(back.T == 2);
  CHECK(back.xi0 == 16.0);
  REQUIRE(back.alpha_hat.has_value());
  CHECK(*back.alpha_hat == Catch::Approx(1.0));
  Matrix P = sobol_prefix(2, 25, Rect::unit_cube(2));
  for (int i = 0; i < 25; ++i) {
    Vector x = P.row(i).transpose();
    CHECK(back.predict(x) == Catch::Approx(em.predict(x)).margin(1e-9));
  }
  CHECK(back.emulation_error_bound() ==
        Catch::Approx(em.emulation_error_bound()).margin(1e-12));

  json bad = j;
  bad["format"] = "something-else";
  CHECK_THROWS_AS(emulator_from_json(bad), std::invalid_argument);
}

TEST_CASE("stage reports serialize to JSON and CSV") {
  StageReport s;
  s.L = 2;
  s.xi = {8.0, 4.0};
  s.cost = {4.0, 16.0};
  s.n = {23, 10};
  s.emulation_bound = 0.483;
  s.cumulative_cost = 252.0;
  s.converged = false;

  json j = stage_to_json(s);
  CHECK(j["L"] == 2);
  CHECK(j["alpha_hat"].is_null());
  CHECK(j["simulation_bound"].is_null());
  CHECK(j["n"][0] == 23);

  std::string csv = stages_to_csv({s});
  CHECK(csv.find("L,l,xi_l,C_l,n_l,alpha_hat,sim_bound,emu_bound,cum_cost,"
                 "converged") == 0);
  CHECK(csv.find("2,1,8,4,23,,,0.483,252,0") != std::string::npos);
  CHECK(csv.find("2,2,4,16,10,,,0.483,252,0") != std::string::npos);
}
