#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "climemu/errors.hpp"

namespace climemu {

/// Regular latitude-longitude grid with explicit cell bounds.
/// Latitudes ascend in [-90, 90]; longitudes ascend and span one full
/// period of 360 degrees (typically [0, 360)).
struct Grid {
  std::vector<double> lat_centers;
  std::vector<double> lon_centers;
  std::vector<double> lat_bounds;  // size n_lat + 1
  std::vector<double> lon_bounds;  // size n_lon + 1

  std::size_t n_lat() const { return lat_centers.size(); }
  std::size_t n_lon() const { return lon_centers.size(); }
  std::size_t n_cells() const { return n_lat() * n_lon(); }

  bool same_shape(const Grid& o) const {
    return n_lat() == o.n_lat() && n_lon() == o.n_lon();
  }
  bool operator==(const Grid& o) const = default;

  /// Throws DataError if bounds are not strictly monotone, centers fall
  /// outside their cells, or latitudes leave [-90, 90].
  void validate() const;
};

using GridPtr = std::shared_ptr<const Grid>;

/// One gridded monthly value for a variable (optionally at a vertical level).
/// Values are row-major [lat][lon].
struct Field {
  GridPtr grid;
  std::string variable;
  std::optional<double> level;  // pressure in hPa or depth in m
  std::vector<double> values;

  double& at(std::size_t i, std::size_t j) { return values[i * grid->n_lon() + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * grid->n_lon() + j]; }

  void validate() const;  // finite values, shape matches grid
};

/// Equal-angle grid covering [-90,90] x [0,360). Throws on counts < 2.
GridPtr make_regular_grid(std::size_t n_lat, std::size_t n_lon);

/// Normalized cell-area weights, w proportional to
/// (sin(lat_upper) - sin(lat_lower)) * dlon, summing to 1.
std::vector<double> area_weights(const Grid& grid);

/// Area-weighted global mean.
double global_mean(const Field& field);
double global_mean(const Grid& grid, const std::vector<double>& values);

/// Precomputed 1-D overlap fractions for first-order conservative
/// regridding between two regular grids. overlap_lat[d][s] is the fraction
/// of destination band d covered by source band s, measured in sin(lat);
/// overlap_lon likewise in longitude with periodic wraparound.
struct RegridPlan {
  GridPtr src;
  GridPtr dst;
  std::vector<double> overlap_lat;  // n_dst_lat x n_src_lat, row-major
  std::vector<double> overlap_lon;  // n_dst_lon x n_src_lon
};

RegridPlan make_regrid_plan(const GridPtr& src, const GridPtr& dst);

/// First-order conservative regridding: destination value is the
/// area-overlap-weighted mean of source values. Preserves the global
/// area-weighted integral exactly (up to roundoff).
Field conservative_regrid(const Field& field, const GridPtr& dst);
Field apply_regrid(const RegridPlan& plan, const Field& field);

namespace serial {
/// Reference implementation without OpenMP, kept for testing and benchmarks.
Field apply_regrid(const RegridPlan& plan, const Field& field);
double global_mean(const Grid& grid, const std::vector<double>& values);
}  // namespace serial

/// Deterministic synthetic land mask (1 = land), a fixed smooth function of
/// latitude and longitude shared by the toy data generator and the metrics.
std::vector<std::uint8_t> land_mask(const Grid& grid);

}  // namespace climemu
