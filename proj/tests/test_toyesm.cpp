#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "climemu/metrics.hpp"
#include "climemu/toyesm.hpp"

using namespace climemu;

namespace {

ToyEsmConfig small_config() {
  ToyEsmConfig cfg;
  cfg.n_lat = 8;
  cfg.n_lon = 16;
  cfg.levels = {1000, 850, 500, 200};
  cfg.ozone_levels = {500};
  return cfg;
}

}  // namespace

TEST_CASE("the scenario registry lists the seven built-in families") {
  const auto& reg = scenario_registry();
  CHECK(reg.size() == 7);
  for (const char* name :
       {"picontrol", "hist-like", "low", "mid", "high", "overshoot", "abrupt4x"})
    CHECK(std::find(reg.begin(), reg.end(), name) != reg.end());
  CHECK_THROWS_AS(build_forcing_series(small_config(), "ssp999", 12), UnknownScenario);
}

TEST_CASE("abrupt4x approaches the closed-form equilibrium") {
  // At equilibrium, F = lambda_fb * T, so T_eq = alpha_co2 * ln(4) / lambda_fb.
  const ToyEsmConfig cfg = small_config();
  const double t_eq = cfg.alpha_co2 * std::log(4.0) / cfg.feedback;
  const auto grid = make_regular_grid(cfg.n_lat, cfg.n_lon);
  const std::size_t n_months = 100 * 12;  // ~15 e-folding times (tau = c/lambda)
  const ForcingSet fs = build_forcing_series(cfg, "abrupt4x", n_months);
  const auto t = box_response(cfg, *grid, fs, n_months);
  CHECK(t.back() == doctest::Approx(t_eq).epsilon(1e-6));
  // Monotone approach from below.
  CHECK(t.front() < 0.5);
  CHECK(t[n_months / 2] < t.back());
}

TEST_CASE("picontrol has zero radiative forcing") {
  const ToyEsmConfig cfg = small_config();
  const auto grid = make_regular_grid(cfg.n_lat, cfg.n_lon);
  const ForcingSet fs = build_forcing_series(cfg, "picontrol", 24);
  for (std::size_t m : {std::size_t(0), std::size_t(13), std::size_t(23)})
    CHECK(radiative_forcing(cfg, *grid, fs, m) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("overshoot CO2 peaks strictly inside the series") {
  const ToyEsmConfig cfg = small_config();
  const ForcingSet fs = build_forcing_series(cfg, "overshoot", 120 * 12);
  const ScalarForcing* co2 = nullptr;
  for (const auto& s : fs.scalars)
    if (s.name == "co2") co2 = &s;
  REQUIRE(co2 != nullptr);
  const auto it = std::max_element(co2->values.begin(), co2->values.end());
  CHECK(it != co2->values.begin());
  CHECK(it != co2->values.end() - 1);
  CHECK(co2->values.back() < *it);
}

TEST_CASE("non-positive concentrations are rejected") {
  const ToyEsmConfig cfg = small_config();
  const auto grid = make_regular_grid(cfg.n_lat, cfg.n_lon);
  ForcingSet fs = build_forcing_series(cfg, "mid", 12);
  for (auto& s : fs.scalars)
    if (s.name == "co2") s.values[3] = 0.0;
  CHECK_THROWS_AS(radiative_forcing(cfg, *grid, fs, 3), std::invalid_argument);
}

TEST_CASE("simulated output is hydrostatically exact") {
  const ToyEsmConfig cfg = small_config();
  const ScenarioDataset ds = simulate(cfg, "mid", 36, 1, 17);
  for (std::size_t m : {std::size_t(0), std::size_t(18), std::size_t(35)})
    CHECK(hydrostatic_residual(ds, 0, m) < 1e-6);
}

TEST_CASE("the seasonal cycle has zero global mean") {
  // With noise off, the global-mean tas anomaly equals the box response
  // exactly: the pattern has unit global mean and the seasonal term is
  // antisymmetric across hemispheres.
  ToyEsmConfig cfg = small_config();
  cfg.sigma_iv = 0.0;
  const auto grid = make_regular_grid(cfg.n_lat, cfg.n_lon);
  const std::size_t n_months = 48;
  const ForcingSet fs = build_forcing_series(cfg, "high", n_months);
  const auto box = box_response(cfg, *grid, fs, n_months);
  const ScenarioDataset ds = simulate(cfg, "high", n_months, 1, 5);
  const std::size_t v = ds.var_index("tas");
  const std::size_t nc = grid->n_cells();
  const double base =
      global_mean(*grid, {ds.members[0][0].begin() + v * nc,
                          ds.members[0][0].begin() + (v + 1) * nc}) - box[0];
  for (std::size_t m = 0; m < n_months; ++m) {
    const std::vector<double> tas(ds.members[0][m].begin() + v * nc,
                                  ds.members[0][m].begin() + (v + 1) * nc);
    CHECK(global_mean(*grid, tas) - box[m] == doctest::Approx(base).epsilon(1e-9));
  }
}

TEST_CASE("members share the forced signal and differ only by noise") {
  ToyEsmConfig cfg = small_config();
  const ScenarioDataset noisy = simulate(cfg, "mid", 24, 2, 3);
  CHECK(noisy.members[0][5] != noisy.members[1][5]);

  cfg.sigma_iv = 0.0;
  const ScenarioDataset clean = simulate(cfg, "mid", 24, 2, 3);
  CHECK(clean.members[0] == clean.members[1]);
}

TEST_CASE("same seed reproduces the dataset exactly") {
  const ToyEsmConfig cfg = small_config();
  const ScenarioDataset a = simulate(cfg, "low", 24, 2, 99);
  const ScenarioDataset b = simulate(cfg, "low", 24, 2, 99);
  CHECK(a.members == b.members);
  CHECK(a.forcings == b.forcings);
}

TEST_CASE("sst is tas minus a fixed offset over ocean") {
  const ToyEsmConfig cfg = small_config();
  const ScenarioDataset ds = simulate(cfg, "mid", 12, 1, 1);
  const auto mask = land_mask(*ds.grid);
  const std::size_t vt = ds.var_index("tas"), vs = ds.var_index("sst");
  const std::size_t nc = ds.grid->n_cells();
  for (std::size_t c = 0; c < nc; ++c) {
    if (mask[c]) continue;
    CHECK(ds.members[0][6][vs * nc + c] ==
          doctest::Approx(ds.members[0][6][vt * nc + c] - 1.5).epsilon(1e-12));
  }
}
