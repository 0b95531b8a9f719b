#include "climemu/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace climemu {

namespace {
constexpr double kDegToRad = std::numbers::pi / 180.0;

double sin_deg(double deg) { return std::sin(deg * kDegToRad); }
}  // namespace

void Grid::validate() const {
  if (n_lat() < 1 || n_lon() < 1) throw DataError("grid: empty axis");
  if (lat_bounds.size() != n_lat() + 1 || lon_bounds.size() != n_lon() + 1)
    throw DataError("grid: bounds size mismatch");
  for (std::size_t i = 0; i + 1 < lat_bounds.size(); ++i)
    if (!(lat_bounds[i] < lat_bounds[i + 1]))
      throw DataError("grid: lat_bounds not strictly ascending");
  for (std::size_t i = 0; i + 1 < lon_bounds.size(); ++i)
    if (!(lon_bounds[i] < lon_bounds[i + 1]))
      throw DataError("grid: lon_bounds not strictly ascending");
  if (lat_bounds.front() < -90.0 - 1e-9 || lat_bounds.back() > 90.0 + 1e-9)
    throw DataError("grid: lat_bounds outside [-90, 90]");
  for (std::size_t i = 0; i < n_lat(); ++i)
    if (!(lat_bounds[i] < lat_centers[i] && lat_centers[i] < lat_bounds[i + 1]))
      throw DataError("grid: lat center outside its cell");
  for (std::size_t j = 0; j < n_lon(); ++j)
    if (!(lon_bounds[j] < lon_centers[j] && lon_centers[j] < lon_bounds[j + 1]))
      throw DataError("grid: lon center outside its cell");
}

void Field::validate() const {
  if (!grid) throw DataError("field: null grid");
  if (values.size() != grid->n_cells())
    throw DataError("field '" + variable + "': shape does not match grid");
  for (double v : values)
    if (!std::isfinite(v))
      throw DataError("field '" + variable + "': non-finite value");
}

GridPtr make_regular_grid(std::size_t n_lat, std::size_t n_lon) {
  if (n_lat < 2 || n_lon < 2)
    throw std::invalid_argument("make_regular_grid: counts must be >= 2");
  auto g = std::make_shared<Grid>();
  g->lat_bounds.resize(n_lat + 1);
  g->lon_bounds.resize(n_lon + 1);
  for (std::size_t i = 0; i <= n_lat; ++i)
    g->lat_bounds[i] = -90.0 + 180.0 * double(i) / double(n_lat);
  for (std::size_t j = 0; j <= n_lon; ++j)
    g->lon_bounds[j] = 360.0 * double(j) / double(n_lon);
  g->lat_centers.resize(n_lat);
  g->lon_centers.resize(n_lon);
  for (std::size_t i = 0; i < n_lat; ++i)
    g->lat_centers[i] = 0.5 * (g->lat_bounds[i] + g->lat_bounds[i + 1]);
  for (std::size_t j = 0; j < n_lon; ++j)
    g->lon_centers[j] = 0.5 * (g->lon_bounds[j] + g->lon_bounds[j + 1]);
  g->validate();
  return g;
}

std::vector<double> area_weights(const Grid& grid) {
  grid.validate();
  const std::size_t nlat = grid.n_lat(), nlon = grid.n_lon();
  std::vector<double> w(nlat * nlon);
  double total = 0.0;
  for (std::size_t i = 0; i < nlat; ++i) {
    const double band = sin_deg(grid.lat_bounds[i + 1]) - sin_deg(grid.lat_bounds[i]);
    for (std::size_t j = 0; j < nlon; ++j) {
      const double a = band * (grid.lon_bounds[j + 1] - grid.lon_bounds[j]);
      w[i * nlon + j] = a;
      total += a;
    }
  }
  for (double& x : w) x /= total;
  return w;
}

double global_mean(const Grid& grid, const std::vector<double>& values) {
  const auto w = area_weights(grid);
  double acc = 0.0;
  const std::size_t n = values.size();
#pragma omp parallel for reduction(+ : acc) schedule(static)
  for (std::ptrdiff_t k = 0; k < std::ptrdiff_t(n); ++k) acc += w[k] * values[k];
  return acc;
}

double global_mean(const Field& field) {
  return global_mean(*field.grid, field.values);
}

namespace serial {
double global_mean(const Grid& grid, const std::vector<double>& values) {
  const auto w = area_weights(grid);
  double acc = 0.0;
  for (std::size_t k = 0; k < values.size(); ++k) acc += w[k] * values[k];
  return acc;
}
}  // namespace serial

namespace {

// Overlap of destination interval [a, b] with source interval [c, d]
// on the periodic longitude circle (period 360).
double periodic_overlap(double a, double b, double c, double d) {
  double total = 0.0;
  for (double shift : {-360.0, 0.0, 360.0}) {
    const double lo = std::max(a, c + shift);
    const double hi = std::min(b, d + shift);
    if (hi > lo) total += hi - lo;
  }
  return total;
}

}  // namespace

RegridPlan make_regrid_plan(const GridPtr& src, const GridPtr& dst) {
  src->validate();
  dst->validate();
  RegridPlan plan;
  plan.src = src;
  plan.dst = dst;

  const std::size_t ns_lat = src->n_lat(), nd_lat = dst->n_lat();
  plan.overlap_lat.assign(nd_lat * ns_lat, 0.0);
  bool any_lat = false;
  for (std::size_t d = 0; d < nd_lat; ++d) {
    const double a = sin_deg(dst->lat_bounds[d]);
    const double b = sin_deg(dst->lat_bounds[d + 1]);
    for (std::size_t s = 0; s < ns_lat; ++s) {
      const double c = sin_deg(src->lat_bounds[s]);
      const double e = sin_deg(src->lat_bounds[s + 1]);
      const double ov = std::min(b, e) - std::max(a, c);
      if (ov > 0.0) {
        plan.overlap_lat[d * ns_lat + s] = ov;
        any_lat = true;
      }
    }
  }

  const std::size_t ns_lon = src->n_lon(), nd_lon = dst->n_lon();
  plan.overlap_lon.assign(nd_lon * ns_lon, 0.0);
  bool any_lon = false;
  for (std::size_t d = 0; d < nd_lon; ++d) {
    for (std::size_t s = 0; s < ns_lon; ++s) {
      const double ov = periodic_overlap(dst->lon_bounds[d], dst->lon_bounds[d + 1],
                                         src->lon_bounds[s], src->lon_bounds[s + 1]);
      if (ov > 0.0) {
        plan.overlap_lon[d * ns_lon + s] = ov;
        any_lon = true;
      }
    }
  }

  if (!any_lat || !any_lon)
    throw DomainMismatch("conservative_regrid: grids do not overlap");
  return plan;
}

namespace {

void regrid_row(const RegridPlan& plan, const Field& field, Field& out,
                std::size_t d_lat) {
  const Grid& src = *plan.src;
  const Grid& dst = *plan.dst;
  const std::size_t ns_lat = src.n_lat(), ns_lon = src.n_lon();
  const std::size_t nd_lon = dst.n_lon();
  for (std::size_t dj = 0; dj < nd_lon; ++dj) {
    double num = 0.0, den = 0.0;
    for (std::size_t si = 0; si < ns_lat; ++si) {
      const double wlat = plan.overlap_lat[d_lat * ns_lat + si];
      if (wlat == 0.0) continue;
      for (std::size_t sj = 0; sj < ns_lon; ++sj) {
        const double wlon = plan.overlap_lon[dj * ns_lon + sj];
        if (wlon == 0.0) continue;
        const double w = wlat * wlon;
        num += w * field.values[si * ns_lon + sj];
        den += w;
      }
    }
    out.values[d_lat * nd_lon + dj] = num / den;
  }
}

}  // namespace

Field apply_regrid(const RegridPlan& plan, const Field& field) {
  field.validate();
  if (*field.grid != *plan.src)
    throw DomainMismatch("apply_regrid: field grid does not match plan source");
  Field out;
  out.grid = plan.dst;
  out.variable = field.variable;
  out.level = field.level;
  out.values.resize(plan.dst->n_cells());
  const std::size_t nd_lat = plan.dst->n_lat();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t di = 0; di < std::ptrdiff_t(nd_lat); ++di)
    regrid_row(plan, field, out, std::size_t(di));
  return out;
}

namespace serial {
Field apply_regrid(const RegridPlan& plan, const Field& field) {
  field.validate();
  if (*field.grid != *plan.src)
    throw DomainMismatch("apply_regrid: field grid does not match plan source");
  Field out;
  out.grid = plan.dst;
  out.variable = field.variable;
  out.level = field.level;
  out.values.resize(plan.dst->n_cells());
  for (std::size_t di = 0; di < plan.dst->n_lat(); ++di)
    regrid_row(plan, field, out, di);
  return out;
}
}  // namespace serial

Field conservative_regrid(const Field& field, const GridPtr& dst) {
  return apply_regrid(make_regrid_plan(field.grid, dst), field);
}

std::vector<std::uint8_t> land_mask(const Grid& grid) {
  std::vector<std::uint8_t> mask(grid.n_cells());
  for (std::size_t i = 0; i < grid.n_lat(); ++i) {
    const double lat = grid.lat_centers[i] * kDegToRad;
    for (std::size_t j = 0; j < grid.n_lon(); ++j) {
      const double lon = grid.lon_centers[j] * kDegToRad;
      // Two broad "continents" plus a polar cap; roughly 1/3 land.
      const double s = std::sin(2.0 * lon + 0.7) * std::cos(lat) + 0.6 * std::sin(3.0 * lat);
      mask[i * grid.n_lon() + j] = (s > 0.55 || grid.lat_centers[i] < -75.0) ? 1 : 0;
    }
  }
  return mask;
}

}  // namespace climemu
