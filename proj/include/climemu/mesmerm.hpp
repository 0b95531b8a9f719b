#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "climemu/dataio.hpp"
#include "climemu/grid.hpp"

namespace climemu {

/// Monthly temperature model: per gridpoint, a harmonic Fourier series whose
/// baseline and amplitude are linear in the (centered) annual-mean
/// temperature, plus an AR(1) residual.
///
/// Mean component for month m and annual mean T:
///   sum_k (a_k + b_k dT) cos(w_k m) + sum_k (c_k + d_k dT) sin(w_k m),
/// with w_k = 2 pi k / 12 and dT = T - t_center. Sine terms that vanish
/// identically on integer months (k = 0 and k = 6) are excluded.
struct HarmonicARModel {
  std::size_t order = 4;  // K
  GridPtr grid;
  double t_center = 0.0;  // training-period mean annual temperature
  int ref_start_year = 1850;
  std::size_t ref_years = 50;
  bool land_only = false;

  // Per-gridpoint coefficients, layout [cell][n_coef] with
  // n_coef = 2(K+1) + 2*K_sin: a0,b0,...,aK,bK, c1,d1,...
  std::vector<double> coef;
  std::vector<double> rho;    // per cell, |rho| < 1
  std::vector<double> sigma;  // per cell, innovation std dev
  std::vector<std::uint8_t> fitted;  // 1 where the gridpoint was fit

  std::size_t n_sin() const { return std::min<std::size_t>(order, 5); }
  std::size_t n_coef() const { return 2 * (order + 1) + 2 * n_sin(); }

  /// Harmonic regressor vector for (month 0-11, centered annual mean).
  std::vector<double> regressors(std::size_t month, double dT) const;

  /// Mean component at one gridpoint.
  double mean_at(std::size_t cell, std::size_t month, double annual_mean) const;
};

struct MesmerFitOptions {
  std::size_t order = 4;
  bool land_only = false;
  int ref_start_year = 1850;
  std::size_t ref_years = 50;
};

/// Calendar-year means of the area-weighted global (or land-only) mean tas.
/// Throws std::invalid_argument on partial years.
std::vector<double> annual_mean_series(const ScenarioDataset& ds, std::size_t member,
                                       bool land_only = false);

/// Per-gridpoint OLS fit of monthly tas anomalies (vs the reference-period
/// mean) on the harmonic regressors; AR(1) residual parameters from lag-1
/// statistics of the fit residuals within each member series.
HarmonicARModel fit_mesmer(const std::vector<const ScenarioDataset*>& datasets,
                           const MesmerFitOptions& opts);
HarmonicARModel fit_mesmer(const std::vector<ScenarioDataset>& datasets,
                           const MesmerFitOptions& opts);

/// Monthly anomaly series driven by the given per-year annual means;
/// residuals simulated as AR(1) started from the stationary distribution.
/// Returns [member][month][cell].
std::vector<std::vector<std::vector<double>>> emulate_mesmer(
    const HarmonicARModel& model, const std::vector<double>& annual_means,
    std::size_t n_members, std::uint64_t seed);

void write_mesmer(const HarmonicARModel& model, const std::filesystem::path& path);
HarmonicARModel read_mesmer(const std::filesystem::path& path);

}  // namespace climemu
