#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "climemu/grid.hpp"

#include "json.hpp"

namespace climemu {

struct VariableSpec {
  std::string name;
  std::optional<double> level;  // hPa for atmosphere, m for ocean depth
  bool operator==(const VariableSpec&) const = default;

  std::string label() const;  // e.g. "ta@500"
};

/// Stacked multi-variable state at one timestep, [var][lat][lon] row-major.
using StateTensor = std::vector<double>;

struct ScalarForcing {
  std::string name;
  std::vector<double> values;  // one per month
  bool operator==(const ScalarForcing&) const = default;
};

struct SpatialForcing {
  std::string name;
  std::optional<double> level;
  std::vector<std::vector<double>> values;  // [month][cell]
  bool operator==(const SpatialForcing&) const = default;
};

struct ForcingSet {
  std::vector<ScalarForcing> scalars;
  std::vector<SpatialForcing> spatials;
  bool operator==(const ForcingSet&) const = default;

  std::size_t n_months() const;
  void validate(const Grid& grid, std::size_t n_months) const;
};

struct ScenarioDataset {
  std::string name;
  int start_year = 1850;
  std::size_t n_months = 0;
  GridPtr grid;
  std::vector<VariableSpec> variables;
  std::vector<std::vector<StateTensor>> members;  // [member][month]
  ForcingSet forcings;

  std::size_t var_index(const std::string& name,
                        std::optional<double> level = std::nullopt) const;
  /// View of one variable at one timestep as a Field (copies values).
  Field field(std::size_t member, std::size_t month, std::size_t var) const;
  void validate() const;
};

struct NormStats {
  std::vector<VariableSpec> variables;
  std::vector<double> mean, std;                  // per variable
  std::vector<std::string> scalar_names;
  std::vector<double> scalar_mean, scalar_std;    // per scalar forcing
  std::vector<std::string> spatial_names;
  std::vector<double> spatial_mean, spatial_std;  // per spatial forcing

  double normalize_var(std::size_t v, double x) const { return (x - mean[v]) / std[v]; }
  double denormalize_var(std::size_t v, double x) const { return x * std[v] + mean[v]; }
};

/// Pooled population (1/N) statistics over all members, months, gridpoints.
/// Throws DegenerateVariable if any variable or forcing is constant.
NormStats compute_norm_stats(const std::vector<const ScenarioDataset*>& datasets);
NormStats compute_norm_stats(const std::vector<ScenarioDataset>& datasets);

// ---------------------------------------------------------------------------
// .fbch container: "FBCH1\n", little-endian u64 header length, UTF-8 JSON
// header, then the binary sections named in header["sections"] back to back.
// Dataset states are little-endian IEEE-754 float32 in
// [member][month][variable][lat][lon] order; model sections use float64.
// ---------------------------------------------------------------------------

struct Container {
  nlohmann::json header;
  std::vector<std::vector<double>> arrays;  // aligned with header["sections"]
};

void write_container(const Container& c, const std::filesystem::path& path);
Container read_container(const std::filesystem::path& path);

void write_dataset(const ScenarioDataset& dataset, const std::filesystem::path& path);
ScenarioDataset read_dataset(const std::filesystem::path& path);

/// Scalar forcing series from CSV, columns: year, month, one per forcing.
/// Header row required; months must be 1-12; a missing cell is a FormatError.
std::vector<ScalarForcing> read_forcing_csv(const std::filesystem::path& path);

nlohmann::json grid_to_json(const Grid& grid);
GridPtr grid_from_json(const nlohmann::json& j);

}  // namespace climemu
