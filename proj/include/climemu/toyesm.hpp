#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "climemu/dataio.hpp"
#include "climemu/grid.hpp"

namespace climemu {

/// Configuration of the deterministic synthetic "ESM". Defaults are toy
/// constants chosen for a forced trend with a ~7-year response timescale,
/// an equilibrium, and a resolvable seasonal cycle.
struct ToyEsmConfig {
  std::size_t n_lat = 24;
  std::size_t n_lon = 48;
  std::vector<double> levels{1000, 850, 500, 200, 100, 50, 10};  // hPa, descending
  std::vector<double> ozone_levels{500, 50};

  // Forcing coefficients, W m^-2 per unit response.
  double alpha_co2 = 5.35;
  double alpha_ch4 = 0.036;
  double alpha_n2o = 0.12;
  double alpha_aero = 2.0e4;
  double alpha_o3 = 0.05;

  // Pre-industrial reference concentrations / loads.
  double co2_ref = 284.3;   // ppm
  double ch4_ref = 808.0;   // ppb
  double n2o_ref = 273.0;   // ppb
  double aero_ref = 2.0e-5; // kg m^-2, global-mean load per species
  double o3_ref = 30.0;     // ppb, global mean per included level

  double heat_capacity = 8.0;  // c, W yr m^-2 K^-1
  double feedback = 1.2;       // lambda_fb, W m^-2 K^-1

  double rho_iv = 0.5;
  double sigma_iv = 0.3;  // AR(1) innovation std dev, K
  double seasonal_amp = 10.0;

  std::uint64_t seed = 0;

  // Optional overrides (n_lat * n_lon); generated from latitude when empty.
  std::vector<double> pattern;
  std::vector<double> seasonal_amp_field;

  void validate() const;
};

const std::vector<std::string>& scenario_registry();

/// Smooth monthly forcing paths for one of the built-in scenario families
/// {picontrol, hist-like, low, mid, high, overshoot, abrupt4x}.
/// abrupt4x holds CO2 at 4x the pre-industrial value from month 0.
ForcingSet build_forcing_series(const ToyEsmConfig& cfg, const std::string& scenario,
                                std::size_t n_months);

/// Effective global radiative forcing (W m^-2) at one month, relative to the
/// configured pre-industrial references.
double radiative_forcing(const ToyEsmConfig& cfg, const Grid& grid,
                         const ForcingSet& forcings, std::size_t month);

/// One-box energy balance c dT/dt = F - lambda_fb T, forward Euler with a
/// monthly step; fields are built from the global-mean response by pattern
/// scaling plus a seasonal cycle and AR(1) internal variability.
/// zg is constructed exactly hydrostatically from ta.
ScenarioDataset simulate(const ToyEsmConfig& cfg, const std::string& scenario,
                         std::size_t n_months, std::size_t n_members,
                         std::uint64_t seed);

/// Global-mean temperature response of the energy-balance box, one value per
/// month (the value entering that month's fields).
std::vector<double> box_response(const ToyEsmConfig& cfg, const Grid& grid,
                                 const ForcingSet& forcings, std::size_t n_months);

}  // namespace climemu
