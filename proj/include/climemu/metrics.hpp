#pragma once

#include <span>
#include <string>
#include <vector>

#include "climemu/dataio.hpp"
#include "climemu/grid.hpp"

namespace climemu {

enum class Region { Global, North, Tropics, South, Land };

Region region_from_string(const std::string& name);
std::string region_to_string(Region r);

/// Area weights restricted to a region (zero outside), renormalized to sum 1.
/// North is 20N-90N, Tropics 20S-20N, South 90S-20S by cell center.
std::vector<double> region_weights(const Grid& grid, Region r);

double regional_mean(const Grid& grid, std::span<const double> values, Region r);

/// Cosine-latitude (area) weighted RMSE over a region.
double lat_weighted_rmse(const Grid& grid, std::span<const double> a,
                         std::span<const double> b, Region r = Region::Global);

/// Member-mean, area-weighted RMSE per surface variable over
/// [month_begin, month_end), each normalized by the truth's pooled standard
/// deviation for that variable, averaged over the surface variables.
double nrmse(const ScenarioDataset& pred, const ScenarioDataset& truth,
             std::size_t month_begin, std::size_t month_end);

struct MapeResult {
  double value = 0.0;       // percent
  std::size_t excluded = 0; // reference values below the floor
};

/// Mean absolute percentage error; reference magnitudes below `floor` are
/// excluded and counted. All-excluded input throws UndefinedMetric.
MapeResult mape(std::span<const double> pred, std::span<const double> truth,
                double floor = 1e-6);

/// Sample (N-1) standard deviation of an OLS-detrended yearly series.
double detrended_std(std::span<const double> yearly);

/// Interannual variability: detrended_std of the yearly-mean regional series
/// of one variable for one member. Needs at least three full years.
double iav(const ScenarioDataset& ds, std::size_t member, std::size_t var, Region r);

/// Ensemble spread: per-timestep (N-1) std of the regional mean across
/// members, averaged over all months. Needs at least two members.
double ensemble_spread(const ScenarioDataset& ds, std::size_t var,
                       Region r = Region::Global);

/// Unweighted sample (N-1) standard deviation over grid cells.
double spatial_std(std::span<const double> field);

/// rsus - rsds + rlus - rlds + hfss + hfls from component variables.
/// Throws if any component is missing from the dataset.
std::vector<double> net_surface_flux_from_components(const ScenarioDataset& ds,
                                                     std::size_t member,
                                                     std::size_t month);

/// Mean absolute difference (m) between stored geopotential heights and the
/// hydrostatic integral of the stored temperatures across the ta/zg levels.
double hydrostatic_residual(const ScenarioDataset& ds, std::size_t member,
                            std::size_t month);

/// Member-averaged regional-mean series aggregated into non-overlapping
/// `window_years`-year windows (default 5); a trailing partial window is
/// dropped.
std::vector<double> regional_series(const ScenarioDataset& ds, std::size_t var,
                                    Region r, std::size_t window_years = 5);

/// Per-cell difference of the final-decade time means, a - b, member mean.
std::vector<double> decadal_difference(const ScenarioDataset& a,
                                       const ScenarioDataset& b, std::size_t var);

/// Zonal-mean time-latitude section, [month][lat] row-major, one member.
std::vector<double> hovmoller(const ScenarioDataset& ds, std::size_t member,
                              std::size_t var);

/// Area-weighted RMSE of the member-mean, time-mean field at each pressure
/// level of `var_name`, ordered as the levels appear in the dataset.
std::vector<double> vertical_profile_rmse(const ScenarioDataset& pred,
                                          const ScenarioDataset& truth,
                                          const std::string& var_name);

struct Pdf {
  std::vector<double> edges;    // n_bins + 1
  std::vector<double> density;  // n_bins, integrates to 1
};

Pdf empirical_pdf(std::span<const double> samples, std::size_t n_bins, double lo,
                  double hi);

}  // namespace climemu
