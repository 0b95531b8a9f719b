#include "climemu/toyesm.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

#include "climemu/rng.hpp"

namespace climemu {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kRd = 287.05;     // J kg^-1 K^-1
constexpr double kGravity = 9.80665;  // m s^-2
constexpr double kSstOffset = 1.5;    // K below tas over ocean
constexpr double kSstLandFill = 271.35;

}  // namespace

void ToyEsmConfig::validate() const {
  if (n_lat < 2 || n_lon < 2) throw std::invalid_argument("toyesm: grid too small");
  if (levels.size() < 2) throw std::invalid_argument("toyesm: need >= 2 levels");
  for (std::size_t i = 0; i + 1 < levels.size(); ++i)
    if (!(levels[i] > levels[i + 1]))
      throw std::invalid_argument("toyesm: levels must be descending in pressure");
  if (!(heat_capacity > 0.0)) throw std::invalid_argument("toyesm: c must be > 0");
  if (!(feedback > 0.0)) throw std::invalid_argument("toyesm: lambda_fb must be > 0");
  if (!(std::abs(rho_iv) < 1.0)) throw std::invalid_argument("toyesm: |rho_iv| must be < 1");
  if (sigma_iv < 0.0) throw std::invalid_argument("toyesm: sigma_iv must be >= 0");
}

const std::vector<std::string>& scenario_registry() {
  static const std::vector<std::string> names{
      "picontrol", "hist-like", "low", "mid", "high", "overshoot", "abrupt4x"};
  return names;
}

namespace {

struct ScenarioShape {
  // Multiplicative paths over u = t / (n_months - 1) in [0, 1].
  std::function<double(double)> co2;
  std::function<double(double)> ch4;
  std::function<double(double)> n2o;
  std::function<double(double)> aero;
  std::function<double(double)> o3;
};

ScenarioShape scenario_shape(const std::string& scenario) {
  auto one = [](double) { return 1.0; };
  if (scenario == "picontrol")
    return {one, one, one, one, one};
  if (scenario == "hist-like")
    return {[](double u) { return 1.0 + 0.45 * u * u; },
            [](double u) { return 1.0 + 1.1 * u * u; },
            [](double u) { return 1.0 + 0.12 * u; },
            [](double u) { return 1.0 + 2.0 * u * (1.0 - 0.3 * u); },
            [](double u) { return 1.0 - 0.10 * u; }};
  if (scenario == "low")
    return {[](double u) { return 1.0 + 0.5 * u * (2.0 - u); },
            [](double u) { return 1.0 + 0.2 * u * (2.0 - u); },
            [](double u) { return 1.0 + 0.05 * u; },
            [](double u) { return 1.0 + 0.6 * (1.0 - u) * u; },
            [](double u) { return 1.0 - 0.08 * u; }};
  if (scenario == "mid")
    return {[](double u) { return 1.0 + 1.2 * u; },
            [](double u) { return 1.0 + 0.6 * u; },
            [](double u) { return 1.0 + 0.10 * u; },
            [](double u) { return 1.0 + 1.6 * u * (1.0 - u); },
            [](double u) { return 1.0 - 0.12 * u; }};
  if (scenario == "high")
    return {[](double u) { return 1.0 + 0.9 * u + 1.6 * u * u; },
            [](double u) { return 1.0 + 1.5 * u; },
            [](double u) { return 1.0 + 0.18 * u; },
            [](double u) { return 1.0 + 0.9 * u; },
            [](double u) { return 1.0 - 0.18 * u; }};
  if (scenario == "overshoot")
    return {[](double u) { return 1.0 + 3.6 * u * (1.0 - u); },
            [](double u) { return 1.0 + 2.0 * u * (1.0 - u); },
            [](double u) { return 1.0 + 0.4 * u * (1.0 - u); },
            [](double u) { return 1.0 + 1.2 * u * (1.0 - u); },
            [](double u) { return 1.0 - 0.3 * u * (1.0 - u); }};
  if (scenario == "abrupt4x")
    return {[](double) { return 4.0; }, one, one, one, one};
  throw UnknownScenario("unknown scenario '" + scenario + "'");
}

// Fixed normalized spatial shapes for the spatial forcings, all with
// area-weighted global mean exactly 1, built per grid.
std::vector<double> normalized_shape(const Grid& grid, double lon_phase, double lat_power) {
  std::vector<double> shape(grid.n_cells());
  for (std::size_t i = 0; i < grid.n_lat(); ++i) {
    const double lat = grid.lat_centers[i] * kDegToRad;
    for (std::size_t j = 0; j < grid.n_lon(); ++j) {
      const double lon = grid.lon_centers[j] * kDegToRad;
      shape[i * grid.n_lon() + j] =
          1.0 + 0.5 * std::cos(lat) * std::sin(2.0 * lon + lon_phase) +
          0.3 * std::pow(std::cos(lat), lat_power);
    }
  }
  const double gm = global_mean(grid, shape);
  for (double& v : shape) v /= gm;
  return shape;
}

}  // namespace

ForcingSet build_forcing_series(const ToyEsmConfig& cfg, const std::string& scenario,
                                std::size_t n_months) {
  cfg.validate();
  if (n_months == 0) throw std::invalid_argument("build_forcing_series: n_months == 0");
  const ScenarioShape shape = scenario_shape(scenario);
  const auto grid = make_regular_grid(cfg.n_lat, cfg.n_lon);

  auto u_of = [&](std::size_t t) {
    return n_months > 1 ? double(t) / double(n_months - 1) : 0.0;
  };
  // abrupt4x repeats its non-CO2 forcings at decadal intervals.
  auto u_nonco2 = [&](std::size_t t) {
    if (scenario == "abrupt4x") return u_of(t % std::min<std::size_t>(120, n_months));
    return u_of(t);
  };

  ForcingSet fs;
  ScalarForcing co2{"co2", {}}, ch4{"ch4", {}}, n2o{"n2o", {}};
  ScalarForcing ssi_uv{"ssi_uv", {}}, ssi_vis{"ssi_vis", {}};
  for (std::size_t t = 0; t < n_months; ++t) {
    co2.values.push_back(cfg.co2_ref * shape.co2(u_of(t)));
    ch4.values.push_back(cfg.ch4_ref * shape.ch4(u_nonco2(t)));
    n2o.values.push_back(cfg.n2o_ref * shape.n2o(u_nonco2(t)));
    // 11-year solar cycle, repeated decadally for abrupt4x like the others.
    const double cyc = std::sin(2.0 * std::numbers::pi * double(t % 132) / 132.0);
    ssi_uv.values.push_back(170.0 * (1.0 + 0.002 * cyc));
    ssi_vis.values.push_back(350.0 * (1.0 + 0.001 * cyc));
  }
  fs.scalars = {co2, ch4, n2o, ssi_uv, ssi_vis};

  const auto so4_shape = normalized_shape(*grid, 0.4, 2.0);
  const auto bc_shape = normalized_shape(*grid, 1.9, 3.0);
  const auto o3_shape = normalized_shape(*grid, 3.1, 1.0);

  SpatialForcing so4{"so4", std::nullopt, {}};
  SpatialForcing bc{"aibcm", std::nullopt, {}};
  for (std::size_t t = 0; t < n_months; ++t) {
    const double path = shape.aero(u_nonco2(t));
    std::vector<double> m1(so4_shape), m2(bc_shape);
    for (double& v : m1) v *= cfg.aero_ref * path;
    for (double& v : m2) v *= cfg.aero_ref * 0.5 * path;
    so4.values.push_back(std::move(m1));
    bc.values.push_back(std::move(m2));
  }
  fs.spatials.push_back(std::move(so4));
  fs.spatials.push_back(std::move(bc));

  for (double level : cfg.ozone_levels) {
    SpatialForcing o3{"o3", level, {}};
    for (std::size_t t = 0; t < n_months; ++t) {
      const double path = shape.o3(u_nonco2(t));
      std::vector<double> m(o3_shape);
      // More ozone aloft.
      const double level_scale = 1.0 + 2.0 * std::log(1000.0 / level) / std::log(100.0);
      for (double& v : m) v *= cfg.o3_ref * level_scale * path;
      o3.values.push_back(std::move(m));
    }
    fs.spatials.push_back(std::move(o3));
  }

  fs.validate(*grid, n_months);
  return fs;
}

double radiative_forcing(const ToyEsmConfig& cfg, const Grid& grid,
                         const ForcingSet& forcings, std::size_t month) {
  auto scalar = [&](const std::string& name) {
    for (const auto& s : forcings.scalars)
      if (s.name == name) return s.values.at(month);
    throw DataError("radiative_forcing: missing scalar forcing " + name);
  };
  const double co2 = scalar("co2"), ch4 = scalar("ch4"), n2o = scalar("n2o");
  if (!(co2 > 0.0 && ch4 > 0.0 && n2o > 0.0))
    throw std::invalid_argument("radiative_forcing: non-positive concentration");

  double f = cfg.alpha_co2 * std::log(co2 / cfg.co2_ref);
  f += cfg.alpha_ch4 * (std::sqrt(ch4) - std::sqrt(cfg.ch4_ref));
  f += cfg.alpha_n2o * (std::sqrt(n2o) - std::sqrt(cfg.n2o_ref));

  double aero_anom = 0.0;
  double o3_anom = 0.0;
  std::size_t n_o3 = 0;
  for (const auto& s : forcings.spatials) {
    const double gm = global_mean(grid, s.values.at(month));
    if (s.name == "o3") {
      // Per-level reference scales like the built series.
      const double level_scale =
          1.0 + 2.0 * std::log(1000.0 / *s.level) / std::log(100.0);
      o3_anom += gm - cfg.o3_ref * level_scale;
      ++n_o3;
    } else {
      const double ref = s.name == "aibcm" ? cfg.aero_ref * 0.5 : cfg.aero_ref;
      aero_anom += gm - ref;
    }
  }
  f -= cfg.alpha_aero * aero_anom;
  if (n_o3 > 0) f += cfg.alpha_o3 * o3_anom / double(n_o3);
  return f;
}

std::vector<double> box_response(const ToyEsmConfig& cfg, const Grid& grid,
                                 const ForcingSet& forcings, std::size_t n_months) {
  std::vector<double> tbar(n_months);
  const double dt = 1.0 / 12.0;  // years
  double t_mean = 0.0;
  for (std::size_t t = 0; t < n_months; ++t) {
    tbar[t] = t_mean;
    const double f = radiative_forcing(cfg, grid, forcings, t);
    t_mean += dt / cfg.heat_capacity * (f - cfg.feedback * t_mean);
  }
  return tbar;
}

namespace {

// Zonally symmetric temperature offset of level p (hPa) relative to the
// surface: constant lapse below the tropopause, warming above. The
// tropopause is higher in the tropics, which puts a sharp kink near
// 100 hPa there.
double lapse_offset(double p, double lat_rad) {
  const double z = 7.5 * std::log(1000.0 / p);               // km, log-pressure height
  const double s = std::sin(lat_rad);
  const double z_trop = 16.0 - 8.0 * s * s;                  // km
  if (z <= z_trop) return -6.5 * z;
  return -6.5 * z_trop + 2.0 * (z - z_trop);
}

}  // namespace

ScenarioDataset simulate(const ToyEsmConfig& cfg, const std::string& scenario,
                         std::size_t n_months, std::size_t n_members,
                         std::uint64_t seed) {
  cfg.validate();
  const auto grid = make_regular_grid(cfg.n_lat, cfg.n_lon);
  const std::size_t ncell = grid->n_cells();
  const std::size_t nlev = cfg.levels.size();

  ScenarioDataset ds;
  ds.name = scenario;
  ds.start_year = scenario == "picontrol" || scenario == "abrupt4x" ? 1850 : 2015;
  ds.n_months = n_months;
  ds.grid = grid;
  ds.forcings = build_forcing_series(cfg, scenario, n_months);

  ds.variables = {{"tas", std::nullopt},
                  {"pr", std::nullopt},
                  {"net_surface_flux", std::nullopt},
                  {"sst", std::nullopt}};
  for (double p : cfg.levels) ds.variables.push_back({"ta", p});
  for (double p : cfg.levels) ds.variables.push_back({"zg", p});
  const std::size_t nvar = ds.variables.size();

  // Warming pattern, normalized to area-weighted global mean 1.
  std::vector<double> pattern = cfg.pattern;
  if (pattern.empty()) {
    pattern.resize(ncell);
    for (std::size_t i = 0; i < cfg.n_lat; ++i) {
      const double s = std::sin(grid->lat_centers[i] * kDegToRad);
      for (std::size_t j = 0; j < cfg.n_lon; ++j)
        pattern[i * cfg.n_lon + j] = 1.0 + 0.8 * s * s;
    }
  }
  if (pattern.size() != ncell) throw std::invalid_argument("toyesm: pattern size mismatch");
  const double pattern_gm = global_mean(*grid, pattern);
  for (double& v : pattern) v /= pattern_gm;

  std::vector<double> seasonal_amp = cfg.seasonal_amp_field;
  if (seasonal_amp.empty()) {
    seasonal_amp.resize(ncell);
    for (std::size_t i = 0; i < cfg.n_lat; ++i) {
      const double s = std::sin(grid->lat_centers[i] * kDegToRad);
      for (std::size_t j = 0; j < cfg.n_lon; ++j)
        seasonal_amp[i * cfg.n_lon + j] = cfg.seasonal_amp * s;
    }
  }
  if (seasonal_amp.size() != ncell)
    throw std::invalid_argument("toyesm: seasonal amplitude size mismatch");

  std::vector<double> clim(ncell);
  for (std::size_t i = 0; i < cfg.n_lat; ++i) {
    const double s = std::sin(grid->lat_centers[i] * kDegToRad);
    for (std::size_t j = 0; j < cfg.n_lon; ++j) clim[i * cfg.n_lon + j] = 288.0 - 35.0 * s * s;
  }

  const auto mask = land_mask(*grid);
  const auto tbar = box_response(cfg, *grid, ds.forcings, n_months);
  std::vector<double> forcing_series(n_months);
  for (std::size_t t = 0; t < n_months; ++t)
    forcing_series[t] = radiative_forcing(cfg, *grid, ds.forcings, t);

  const std::size_t v_tas = 0, v_pr = 1, v_nsf = 2, v_sst = 3;
  const std::size_t v_ta0 = 4, v_zg0 = 4 + nlev;

  ds.members.resize(n_members);
  for (std::size_t m = 0; m < n_members; ++m) {
    Rng rng(mix_seed(seed, m));
    // AR(1) noise state per gridpoint, started at the stationary distribution.
    std::vector<double> noise(ncell);
    const double stat_sd =
        cfg.sigma_iv / std::sqrt(1.0 - cfg.rho_iv * cfg.rho_iv);
    for (double& v : noise) v = stat_sd * rng.normal();

    ds.members[m].resize(n_months);
    for (std::size_t t = 0; t < n_months; ++t) {
      StateTensor state(nvar * ncell);
      const double season = -std::cos(2.0 * std::numbers::pi * double(t % 12) / 12.0);
      for (std::size_t k = 0; k < ncell; ++k) {
        const double tas =
            clim[k] + pattern[k] * tbar[t] + seasonal_amp[k] * season + noise[k];
        state[v_tas * ncell + k] = tas;
        const double tas_anom = pattern[k] * tbar[t] + noise[k];
        state[v_pr * ncell + k] = 3.0 * (1.0 + 0.07 * tas_anom) +
                                  0.4 * seasonal_amp[k] / cfg.seasonal_amp * season;
        state[v_nsf * ncell + k] =
            (forcing_series[t] - cfg.feedback * tbar[t]) * pattern[k] +
            2.0 * seasonal_amp[k] / cfg.seasonal_amp * season;
        state[v_sst * ncell + k] = mask[k] ? kSstLandFill : tas - kSstOffset;
      }
      // ta from tas via the fixed lapse profile; zg integrated exactly
      // hydrostatically from ta.
      for (std::size_t i = 0; i < cfg.n_lat; ++i) {
        const double lat = grid->lat_centers[i] * kDegToRad;
        for (std::size_t j = 0; j < cfg.n_lon; ++j) {
          const std::size_t k = i * cfg.n_lon + j;
          const double tas = state[v_tas * ncell + k];
          for (std::size_t l = 0; l < nlev; ++l)
            state[(v_ta0 + l) * ncell + k] = tas + lapse_offset(cfg.levels[l], lat);
          double zg = kRd * state[v_ta0 * ncell + k] / kGravity * std::log(1013.25 / cfg.levels[0]);
          state[v_zg0 * ncell + k] = zg;
          for (std::size_t l = 0; l + 1 < nlev; ++l) {
            const double tm = 0.5 * (state[(v_ta0 + l) * ncell + k] +
                                     state[(v_ta0 + l + 1) * ncell + k]);
            zg += kRd * tm / kGravity * std::log(cfg.levels[l] / cfg.levels[l + 1]);
            state[(v_zg0 + l + 1) * ncell + k] = zg;
          }
        }
      }
      ds.members[m][t] = std::move(state);
      for (double& v : noise) v = cfg.rho_iv * v + cfg.sigma_iv * rng.normal();
    }
  }

  ds.validate();
  return ds;
}

}  // namespace climemu
