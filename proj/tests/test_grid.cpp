#include "doctest.h"

#include <cmath>
#include <numbers>

#include "climemu/grid.hpp"
#include "climemu/rng.hpp"

using namespace climemu;

namespace {

Field random_field(const GridPtr& g, std::uint64_t seed) {
  Field f{g, "x", std::nullopt, std::vector<double>(g->n_cells())};
  Rng rng(seed);
  for (double& v : f.values) v = rng.normal();
  return f;
}

// Independent integral: sum over cells of value * (sin(lat_u) - sin(lat_l)) * dlon.
double brute_integral(const Field& f) {
  const Grid& g = *f.grid;
  constexpr double d2r = std::numbers::pi / 180.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < g.n_lat(); ++i) {
    const double band = std::sin(g.lat_bounds[i + 1] * d2r) - std::sin(g.lat_bounds[i] * d2r);
    for (std::size_t j = 0; j < g.n_lon(); ++j) {
      const double dlon = g.lon_bounds[j + 1] - g.lon_bounds[j];
      acc += f.at(i, j) * band * dlon;
    }
  }
  return acc;
}

}  // namespace

TEST_CASE("regular grid is valid and spans the sphere") {
  const auto g = make_regular_grid(24, 48);
  CHECK(g->n_lat() == 24);
  CHECK(g->n_lon() == 48);
  CHECK(g->lat_bounds.front() == doctest::Approx(-90.0));
  CHECK(g->lat_bounds.back() == doctest::Approx(90.0));
  CHECK_NOTHROW(g->validate());
  CHECK_THROWS_AS(make_regular_grid(1, 48), std::invalid_argument);
}

TEST_CASE("area weights sum to one and scale with the sine of latitude") {
  const auto g = make_regular_grid(16, 32);
  const auto w = area_weights(*g);
  double total = 0.0;
  for (double x : w) total += x;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  // All longitudes at a latitude share the same weight.
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 1; j < 32; ++j)
      CHECK(w[i * 32 + j] == doctest::Approx(w[i * 32]).epsilon(1e-14));
}

TEST_CASE("global mean of a constant field is the constant") {
  const auto g = make_regular_grid(8, 16);
  std::vector<double> v(g->n_cells(), 3.25);
  CHECK(global_mean(*g, v) == doctest::Approx(3.25).epsilon(1e-14));
}

TEST_CASE("parallel and serial global means agree") {
  const auto g = make_regular_grid(48, 96);
  const Field f = random_field(g, 7);
  CHECK(global_mean(*g, f.values) ==
        doctest::Approx(serial::global_mean(*g, f.values)).epsilon(1e-13));
}

TEST_CASE("conservative regrid preserves the global integral") {
  const auto src = make_regular_grid(24, 48);
  const auto dst = make_regular_grid(12, 24);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Field f = random_field(src, s);
    const Field r = conservative_regrid(f, dst);
    CHECK(brute_integral(r) == doctest::Approx(brute_integral(f)).epsilon(1e-12));
  }
}

TEST_CASE("regridding onto the same grid is the identity") {
  const auto g = make_regular_grid(10, 20);
  const Field f = random_field(g, 3);
  const Field r = conservative_regrid(f, g);
  for (std::size_t c = 0; c < f.values.size(); ++c)
    CHECK(r.values[c] == doctest::Approx(f.values[c]).epsilon(1e-12));
}

TEST_CASE("parallel and serial regrid agree") {
  const auto src = make_regular_grid(24, 48);
  const auto dst = make_regular_grid(16, 32);
  const RegridPlan plan = make_regrid_plan(src, dst);
  const Field f = random_field(src, 11);
  const Field a = apply_regrid(plan, f);
  const Field b = serial::apply_regrid(plan, f);
  for (std::size_t c = 0; c < a.values.size(); ++c)
    CHECK(a.values[c] == doctest::Approx(b.values[c]).epsilon(1e-14));
}

TEST_CASE("upsampling a constant stays constant (partition of unity)") {
  const auto src = make_regular_grid(12, 24);
  const auto dst = make_regular_grid(96, 144);
  Field f{src, "x", std::nullopt, std::vector<double>(src->n_cells(), -2.5)};
  const Field r = conservative_regrid(f, dst);
  for (double v : r.values) CHECK(v == doctest::Approx(-2.5).epsilon(1e-12));
}

TEST_CASE("land mask is deterministic with a plausible land fraction") {
  const auto g = make_regular_grid(24, 48);
  const auto m1 = land_mask(*g);
  const auto m2 = land_mask(*g);
  CHECK(m1 == m2);
  double frac = 0.0;
  for (auto x : m1) frac += x;
  frac /= double(m1.size());
  CHECK(frac > 0.15);
  CHECK(frac < 0.55);
}
