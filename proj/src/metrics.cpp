#include "climemu/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "climemu/errors.hpp"

namespace climemu {

namespace {

constexpr double kRd = 287.05;        // J kg^-1 K^-1
constexpr double kGravity = 9.80665;  // m s^-2
constexpr double kSurfacePressure = 1013.25;  // hPa

bool in_region(double lat_deg, Region r) {
  switch (r) {
    case Region::North: return lat_deg >= 20.0;
    case Region::Tropics: return lat_deg >= -20.0 && lat_deg < 20.0;
    case Region::South: return lat_deg < -20.0;
    default: return true;
  }
}

bool is_surface(const VariableSpec& v) { return !v.level.has_value(); }

void check_comparable(const ScenarioDataset& a, const ScenarioDataset& b) {
  if (a.grid->n_lat() != b.grid->n_lat() ||
      a.grid->n_lon() != b.grid->n_lon() || a.variables != b.variables ||
      a.n_months != b.n_months)
    throw DomainMismatch("datasets are not comparable: grids, variables, or lengths differ");
}

std::vector<double> member_mean_field(const ScenarioDataset& ds, std::size_t month,
                                      std::size_t var) {
  const std::size_t nc = ds.grid->n_lat() * ds.grid->n_lon();
  std::vector<double> out(nc, 0.0);
  for (const auto& member : ds.members)
    for (std::size_t c = 0; c < nc; ++c)
      out[c] += member[month][var * nc + c] / double(ds.members.size());
  return out;
}

}  // namespace

Region region_from_string(const std::string& name) {
  if (name == "global") return Region::Global;
  if (name == "north") return Region::North;
  if (name == "tropics") return Region::Tropics;
  if (name == "south") return Region::South;
  if (name == "land") return Region::Land;
  throw std::invalid_argument("unknown region '" + name +
                              "' (expected global|north|tropics|south|land)");
}

std::string region_to_string(Region r) {
  switch (r) {
    case Region::Global: return "global";
    case Region::North: return "north";
    case Region::Tropics: return "tropics";
    case Region::South: return "south";
    case Region::Land: return "land";
  }
  return "global";
}

std::vector<double> region_weights(const Grid& grid, Region r) {
  std::vector<double> w = area_weights(grid);
  const std::size_t n_lon = grid.n_lon();
  if (r == Region::Land) {
    const std::vector<std::uint8_t> mask = land_mask(grid);
    for (std::size_t c = 0; c < w.size(); ++c)
      if (!mask[c]) w[c] = 0.0;
  } else {
    for (std::size_t i = 0; i < grid.n_lat(); ++i)
      if (!in_region(grid.lat_centers[i], r))
        std::fill(w.begin() + std::ptrdiff_t(i * n_lon),
                  w.begin() + std::ptrdiff_t((i + 1) * n_lon), 0.0);
  }
  double total = 0.0;
  for (double x : w) total += x;
  if (total <= 0.0)
    throw UndefinedMetric("region '" + region_to_string(r) + "' has no cells on this grid");
  for (double& x : w) x /= total;
  return w;
}

double regional_mean(const Grid& grid, std::span<const double> values, Region r) {
  const std::vector<double> w = region_weights(grid, r);
  if (values.size() != w.size())
    throw std::invalid_argument("field size does not match the grid");
  double acc = 0.0;
  for (std::size_t c = 0; c < w.size(); ++c) acc += w[c] * values[c];
  return acc;
}

double lat_weighted_rmse(const Grid& grid, std::span<const double> a,
                         std::span<const double> b, Region r) {
  if (a.size() != b.size())
    throw std::invalid_argument("field sizes differ");
  const std::vector<double> w = region_weights(grid, r);
  if (a.size() != w.size())
    throw std::invalid_argument("field size does not match the grid");
  double acc = 0.0;
  for (std::size_t c = 0; c < w.size(); ++c) {
    const double d = a[c] - b[c];
    acc += w[c] * d * d;
  }
  return std::sqrt(acc);
}

double nrmse(const ScenarioDataset& pred, const ScenarioDataset& truth,
             std::size_t month_begin, std::size_t month_end) {
  check_comparable(pred, truth);
  if (month_begin >= month_end || month_end > truth.n_months)
    throw std::invalid_argument("invalid month range for nrmse");

  const std::vector<double> w = region_weights(*truth.grid, Region::Global);
  const std::size_t nc = w.size();
  double total = 0.0;
  std::size_t n_surface = 0;
  for (std::size_t v = 0; v < truth.variables.size(); ++v) {
    if (!is_surface(truth.variables[v])) continue;
    double se = 0.0, sum = 0.0, sum2 = 0.0;
    std::size_t n = 0;
    for (std::size_t t = month_begin; t < month_end; ++t) {
      const std::vector<double> fp = member_mean_field(pred, t, v);
      const std::vector<double> ft = member_mean_field(truth, t, v);
      for (std::size_t c = 0; c < nc; ++c) {
        const double d = fp[c] - ft[c];
        se += w[c] * d * d;
        sum += ft[c];
        sum2 += ft[c] * ft[c];
        ++n;
      }
    }
    se /= double(month_end - month_begin);
    const double mean = sum / double(n);
    const double var = sum2 / double(n) - mean * mean;
    if (var <= 0.0)
      throw UndefinedMetric("variable '" + truth.variables[v].label() +
                            "' is constant over the scoring window");
    total += std::sqrt(se) / std::sqrt(var);
    ++n_surface;
  }
  if (n_surface == 0) throw UndefinedMetric("no surface variables to score");
  return total / double(n_surface);
}

MapeResult mape(std::span<const double> pred, std::span<const double> truth,
                double floor) {
  if (pred.size() != truth.size())
    throw std::invalid_argument("mape input sizes differ");
  MapeResult res;
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (std::abs(truth[i]) < floor) {
      ++res.excluded;
      continue;
    }
    acc += std::abs((pred[i] - truth[i]) / truth[i]);
    ++n;
  }
  if (n == 0) throw UndefinedMetric("all reference values below the mape floor");
  res.value = 100.0 * acc / double(n);
  return res;
}

double detrended_std(std::span<const double> yearly) {
  const std::size_t n = yearly.size();
  if (n < 3) throw UndefinedMetric("detrended_std needs at least three points");
  // OLS on t = 0..n-1.
  double sy = 0.0, sty = 0.0;
  const double tbar = double(n - 1) / 2.0;
  double stt = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sy += yearly[i];
    sty += (double(i) - tbar) * yearly[i];
    stt += (double(i) - tbar) * (double(i) - tbar);
  }
  const double slope = sty / stt;
  const double intercept = sy / double(n) - slope * tbar;
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double resid = yearly[i] - (intercept + slope * double(i));
    ss += resid * resid;
  }
  return std::sqrt(ss / double(n - 1));
}

double iav(const ScenarioDataset& ds, std::size_t member, std::size_t var, Region r) {
  const std::size_t n_years = ds.n_months / 12;
  if (n_years < 3) throw UndefinedMetric("iav needs at least three full years");
  const std::vector<double> w = region_weights(*ds.grid, r);
  const std::size_t nc = w.size();
  std::vector<double> yearly(n_years, 0.0);
  for (std::size_t y = 0; y < n_years; ++y)
    for (std::size_t mo = 0; mo < 12; ++mo) {
      const StateTensor& s = ds.members.at(member)[y * 12 + mo];
      double gm = 0.0;
      for (std::size_t c = 0; c < nc; ++c) gm += w[c] * s[var * nc + c];
      yearly[y] += gm / 12.0;
    }
  return detrended_std(yearly);
}

double ensemble_spread(const ScenarioDataset& ds, std::size_t var, Region r) {
  const std::size_t nm = ds.members.size();
  if (nm < 2) throw UndefinedMetric("ensemble_spread needs at least two members");
  const std::vector<double> w = region_weights(*ds.grid, r);
  const std::size_t nc = w.size();
  double acc = 0.0;
  for (std::size_t t = 0; t < ds.n_months; ++t) {
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t m = 0; m < nm; ++m) {
      double gm = 0.0;
      const StateTensor& s = ds.members[m][t];
      for (std::size_t c = 0; c < nc; ++c) gm += w[c] * s[var * nc + c];
      sum += gm;
      sum2 += gm * gm;
    }
    const double mean = sum / double(nm);
    const double var_s = (sum2 - double(nm) * mean * mean) / double(nm - 1);
    acc += std::sqrt(std::max(0.0, var_s));
  }
  return acc / double(ds.n_months);
}

double spatial_std(std::span<const double> field) {
  const std::size_t n = field.size();
  if (n < 2) throw UndefinedMetric("spatial_std needs at least two cells");
  double sum = 0.0;
  for (double x : field) sum += x;
  const double mean = sum / double(n);
  double ss = 0.0;
  for (double x : field) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / double(n - 1));
}

std::vector<double> net_surface_flux_from_components(const ScenarioDataset& ds,
                                                     std::size_t member,
                                                     std::size_t month) {
  const std::size_t nc = ds.grid->n_lat() * ds.grid->n_lon();
  const StateTensor& s = ds.members.at(member).at(month);
  const auto idx = [&](const char* name) { return ds.var_index(name); };
  const std::size_t rsus = idx("rsus"), rsds = idx("rsds"), rlus = idx("rlus"),
                    rlds = idx("rlds"), hfss = idx("hfss"), hfls = idx("hfls");
  std::vector<double> out(nc);
  for (std::size_t c = 0; c < nc; ++c)
    out[c] = s[rsus * nc + c] - s[rsds * nc + c] + s[rlus * nc + c] -
             s[rlds * nc + c] + s[hfss * nc + c] + s[hfls * nc + c];
  return out;
}

double hydrostatic_residual(const ScenarioDataset& ds, std::size_t member,
                            std::size_t month) {
  std::vector<std::size_t> ta_idx, zg_idx;
  std::vector<double> levels;
  for (std::size_t v = 0; v < ds.variables.size(); ++v) {
    if (ds.variables[v].name == "ta") {
      ta_idx.push_back(v);
      levels.push_back(*ds.variables[v].level);
    } else if (ds.variables[v].name == "zg") {
      zg_idx.push_back(v);
    }
  }
  if (ta_idx.empty() || ta_idx.size() != zg_idx.size())
    throw UndefinedMetric("hydrostatic residual needs matching ta/zg level sets");

  const std::size_t nc = ds.grid->n_lat() * ds.grid->n_lon();
  const StateTensor& s = ds.members.at(member).at(month);
  double acc = 0.0;
  for (std::size_t c = 0; c < nc; ++c) {
    double zg = kRd * s[ta_idx[0] * nc + c] / kGravity *
                std::log(kSurfacePressure / levels[0]);
    acc += std::abs(zg - s[zg_idx[0] * nc + c]);
    for (std::size_t l = 0; l + 1 < levels.size(); ++l) {
      const double tm =
          0.5 * (s[ta_idx[l] * nc + c] + s[ta_idx[l + 1] * nc + c]);
      zg += kRd * tm / kGravity * std::log(levels[l] / levels[l + 1]);
      acc += std::abs(zg - s[zg_idx[l + 1] * nc + c]);
    }
  }
  return acc / double(nc * levels.size());
}

std::vector<double> regional_series(const ScenarioDataset& ds, std::size_t var,
                                    Region r, std::size_t window_years) {
  if (window_years == 0) throw std::invalid_argument("window_years must be positive");
  const std::vector<double> w = region_weights(*ds.grid, r);
  const std::size_t nc = w.size();
  const std::size_t window = window_years * 12;
  const std::size_t n_windows = ds.n_months / window;
  std::vector<double> out(n_windows, 0.0);
  for (std::size_t k = 0; k < n_windows; ++k) {
    double acc = 0.0;
    for (std::size_t t = k * window; t < (k + 1) * window; ++t)
      for (const auto& member : ds.members) {
        double gm = 0.0;
        for (std::size_t c = 0; c < nc; ++c) gm += w[c] * member[t][var * nc + c];
        acc += gm;
      }
    out[k] = acc / double(window * ds.members.size());
  }
  return out;
}

std::vector<double> decadal_difference(const ScenarioDataset& a,
                                       const ScenarioDataset& b, std::size_t var) {
  check_comparable(a, b);
  if (a.n_months < 120)
    throw UndefinedMetric("decadal_difference needs at least a decade of data");
  const std::size_t nc = a.grid->n_lat() * a.grid->n_lon();
  const std::size_t begin = a.n_months - 120;
  std::vector<double> out(nc, 0.0);
  for (std::size_t t = begin; t < a.n_months; ++t) {
    const std::vector<double> fa = member_mean_field(a, t, var);
    const std::vector<double> fb = member_mean_field(b, t, var);
    for (std::size_t c = 0; c < nc; ++c) out[c] += (fa[c] - fb[c]) / 120.0;
  }
  return out;
}

std::vector<double> hovmoller(const ScenarioDataset& ds, std::size_t member,
                              std::size_t var) {
  const std::size_t n_lat = ds.grid->n_lat(), n_lon = ds.grid->n_lon();
  std::vector<double> out(ds.n_months * n_lat);
  for (std::size_t t = 0; t < ds.n_months; ++t) {
    const StateTensor& s = ds.members.at(member)[t];
    for (std::size_t i = 0; i < n_lat; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n_lon; ++j)
        acc += s[var * n_lat * n_lon + i * n_lon + j];
      out[t * n_lat + i] = acc / double(n_lon);
    }
  }
  return out;
}

std::vector<double> vertical_profile_rmse(const ScenarioDataset& pred,
                                          const ScenarioDataset& truth,
                                          const std::string& var_name) {
  check_comparable(pred, truth);
  const std::vector<double> w = region_weights(*truth.grid, Region::Global);
  const std::size_t nc = w.size();
  std::vector<double> out;
  for (std::size_t v = 0; v < truth.variables.size(); ++v) {
    if (truth.variables[v].name != var_name || !truth.variables[v].level) continue;
    std::vector<double> mp(nc, 0.0), mt(nc, 0.0);
    for (std::size_t t = 0; t < truth.n_months; ++t) {
      const std::vector<double> fp = member_mean_field(pred, t, v);
      const std::vector<double> ft = member_mean_field(truth, t, v);
      for (std::size_t c = 0; c < nc; ++c) {
        mp[c] += fp[c] / double(truth.n_months);
        mt[c] += ft[c] / double(truth.n_months);
      }
    }
    out.push_back(lat_weighted_rmse(*truth.grid, mp, mt));
  }
  if (out.empty())
    throw UndefinedMetric("no pressure levels found for variable '" + var_name + "'");
  return out;
}

Pdf empirical_pdf(std::span<const double> samples, std::size_t n_bins, double lo,
                  double hi) {
  if (n_bins == 0 || !(hi > lo))
    throw std::invalid_argument("empirical_pdf needs n_bins > 0 and hi > lo");
  if (samples.empty()) throw UndefinedMetric("empirical_pdf of an empty sample");
  Pdf pdf;
  pdf.edges.resize(n_bins + 1);
  const double width = (hi - lo) / double(n_bins);
  for (std::size_t i = 0; i <= n_bins; ++i) pdf.edges[i] = lo + double(i) * width;
  pdf.density.assign(n_bins, 0.0);
  std::size_t kept = 0;
  for (double x : samples) {
    if (x < lo || x >= hi) continue;
    const auto bin = std::size_t((x - lo) / width);
    pdf.density[std::min(bin, n_bins - 1)] += 1.0;
    ++kept;
  }
  if (kept == 0) throw UndefinedMetric("no samples inside the pdf range");
  for (double& d : pdf.density) d /= double(kept) * width;
  return pdf;
}

}  // namespace climemu
