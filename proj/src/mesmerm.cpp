#include "climemu/mesmerm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "climemu/rng.hpp"

namespace climemu {

std::vector<double> HarmonicARModel::regressors(std::size_t month, double dT) const {
  std::vector<double> x;
  x.reserve(n_coef());
  const double w = 2.0 * std::numbers::pi * double(month) / 12.0;
  for (std::size_t k = 0; k <= order; ++k) {
    const double c = std::cos(w * double(k));
    x.push_back(c);
    x.push_back(c * dT);
  }
  for (std::size_t k = 1; k <= n_sin(); ++k) {
    const double s = std::sin(w * double(k));
    x.push_back(s);
    x.push_back(s * dT);
  }
  return x;
}

double HarmonicARModel::mean_at(std::size_t cell, std::size_t month,
                                double annual_mean) const {
  const auto x = regressors(month % 12, annual_mean - t_center);
  const double* b = &coef[cell * n_coef()];
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += b[i] * x[i];
  return acc;
}

std::vector<double> annual_mean_series(const ScenarioDataset& ds, std::size_t member,
                                       bool land_only) {
  if (ds.n_months % 12 != 0)
    throw std::invalid_argument("annual_mean_series: partial years");
  const std::size_t v_tas = ds.var_index("tas");
  const std::size_t ncell = ds.grid->n_cells();
  auto w = area_weights(*ds.grid);
  if (land_only) {
    const auto mask = land_mask(*ds.grid);
    double total = 0.0;
    for (std::size_t k = 0; k < ncell; ++k) {
      if (!mask[k]) w[k] = 0.0;
      total += w[k];
    }
    if (total == 0.0) throw DataError("annual_mean_series: empty land mask");
    for (double& v : w) v /= total;
  }

  const std::size_t n_years = ds.n_months / 12;
  std::vector<double> out(n_years, 0.0);
  for (std::size_t y = 0; y < n_years; ++y) {
    for (std::size_t m = 0; m < 12; ++m) {
      const auto& state = ds.members.at(member)[y * 12 + m];
      double gm = 0.0;
      for (std::size_t k = 0; k < ncell; ++k) gm += w[k] * state[v_tas * ncell + k];
      out[y] += gm;
    }
    out[y] /= 12.0;
  }
  return out;
}

namespace {

// Cholesky solve of the symmetric positive-definite normal equations.
// Returns false if a pivot is not positive (rank-deficient design).
bool cholesky(std::vector<double>& a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
      if (i == j) {
        if (s <= 0.0) return false;
        a[i * n + i] = std::sqrt(s);
      } else {
        a[i * n + j] = s / a[j * n + j];
      }
    }
  }
  return true;
}

void cholesky_solve(const std::vector<double>& l, std::size_t n, double* b) {
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l[i * n + k] * b[k];
    b[i] = s / l[i * n + i];
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double s = b[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= l[k * n + ii] * b[k];
    b[ii] = s / l[ii * n + ii];
  }
}

struct Sample {
  const double* tas;  // pointer to the tas slab of the state tensor
  std::size_t month;  // month index within the dataset
  double annual_mean;
  bool series_start;  // first month of a member series (no lag-1 pair)
};

}  // namespace

HarmonicARModel fit_mesmer(const std::vector<const ScenarioDataset*>& datasets,
                           const MesmerFitOptions& opts) {
  if (datasets.empty()) throw std::invalid_argument("fit_mesmer: no datasets");
  const GridPtr grid = datasets.front()->grid;
  const std::size_t ncell = grid->n_cells();

  HarmonicARModel model;
  model.order = opts.order;
  model.grid = grid;
  model.ref_start_year = opts.ref_start_year;
  model.ref_years = opts.ref_years;
  model.land_only = opts.land_only;

  // Reference-period per-gridpoint mean. Months whose calendar year falls in
  // [ref_start_year, ref_start_year + ref_years) are used; if no dataset
  // covers that window, the first ref_years of each dataset stand in.
  std::vector<double> ref_mean(ncell, 0.0);
  std::size_t ref_count = 0;
  auto in_ref = [&](const ScenarioDataset& ds, std::size_t t) {
    const int year = ds.start_year + int(t / 12);
    return year >= opts.ref_start_year &&
           year < opts.ref_start_year + int(opts.ref_years);
  };
  bool any_in_window = false;
  for (const auto* ds : datasets)
    for (std::size_t t = 0; t < ds->n_months; ++t)
      if (in_ref(*ds, t)) any_in_window = true;

  for (const auto* ds : datasets) {
    if (*ds->grid != *grid) throw DataError("fit_mesmer: datasets on different grids");
    const std::size_t v_tas = ds->var_index("tas");
    for (const auto& member : ds->members)
      for (std::size_t t = 0; t < ds->n_months; ++t) {
        const bool use = any_in_window ? in_ref(*ds, t) : t < opts.ref_years * 12;
        if (!use) continue;
        for (std::size_t k = 0; k < ncell; ++k)
          ref_mean[k] += member[t][v_tas * ncell + k];
        ++ref_count;
      }
  }
  if (ref_count == 0) throw std::invalid_argument("fit_mesmer: empty reference period");
  for (double& v : ref_mean) v /= double(ref_count);

  // Assemble samples with their annual-mean predictor.
  std::vector<Sample> samples;
  double t_sum = 0.0;
  std::vector<double> distinct;
  for (const auto* ds : datasets) {
    const std::size_t v_tas = ds->var_index("tas");
    for (std::size_t m = 0; m < ds->members.size(); ++m) {
      const auto am = annual_mean_series(*ds, m, opts.land_only);
      for (std::size_t t = 0; t < ds->n_months; ++t) {
        samples.push_back({ds->members[m][t].data() + v_tas * ncell, t,
                           am[t / 12], t == 0});
        t_sum += am[t / 12];
      }
      for (double v : am)
        if (std::find(distinct.begin(), distinct.end(), v) == distinct.end())
          distinct.push_back(v);
    }
  }
  if (distinct.size() < 2)
    throw std::invalid_argument("fit_mesmer: need >= 2 distinct annual means");
  model.t_center = t_sum / double(samples.size());

  const std::size_t n_reg = model.n_coef();
  const std::size_t n_samp = samples.size();

  // The design depends only on (month, annual mean), so it is shared by all
  // gridpoints: factor the normal equations once.
  std::vector<double> design(n_samp * n_reg);
  for (std::size_t s = 0; s < n_samp; ++s) {
    const auto x = model.regressors(samples[s].month % 12,
                                    samples[s].annual_mean - model.t_center);
    std::copy(x.begin(), x.end(), design.begin() + std::ptrdiff_t(s * n_reg));
  }
  std::vector<double> xtx(n_reg * n_reg, 0.0);
  for (std::size_t s = 0; s < n_samp; ++s)
    for (std::size_t i = 0; i < n_reg; ++i)
      for (std::size_t j = 0; j <= i; ++j)
        xtx[i * n_reg + j] += design[s * n_reg + i] * design[s * n_reg + j];
  for (std::size_t i = 0; i < n_reg; ++i)
    for (std::size_t j = i + 1; j < n_reg; ++j) xtx[i * n_reg + j] = xtx[j * n_reg + i];
  if (!cholesky(xtx, n_reg))
    throw FitError("fit_mesmer: rank-deficient harmonic design (gridpoint 0)");

  const auto mask = land_mask(*grid);
  model.coef.assign(ncell * n_reg, 0.0);
  model.rho.assign(ncell, 0.0);
  model.sigma.assign(ncell, 0.0);
  model.fitted.assign(ncell, 0);

  bool clamped = false;
#pragma omp parallel for schedule(static) reduction(|| : clamped)
  for (std::ptrdiff_t cell = 0; cell < std::ptrdiff_t(ncell); ++cell) {
    if (opts.land_only && !mask[cell]) continue;
    std::vector<double> y(n_samp);
    for (std::size_t s = 0; s < n_samp; ++s)
      y[s] = samples[s].tas[cell] - ref_mean[cell];

    std::vector<double> beta(n_reg, 0.0);
    for (std::size_t s = 0; s < n_samp; ++s)
      for (std::size_t i = 0; i < n_reg; ++i) beta[i] += design[s * n_reg + i] * y[s];
    cholesky_solve(xtx, n_reg, beta.data());
    std::copy(beta.begin(), beta.end(), model.coef.begin() + cell * std::ptrdiff_t(n_reg));

    // Lag-1 statistics of residuals within contiguous member series.
    double num = 0.0, den = 0.0;
    std::vector<double> resid(n_samp);
    for (std::size_t s = 0; s < n_samp; ++s) {
      double fitv = 0.0;
      for (std::size_t i = 0; i < n_reg; ++i) fitv += design[s * n_reg + i] * beta[i];
      resid[s] = y[s] - fitv;
    }
    for (std::size_t s = 1; s < n_samp; ++s) {
      if (samples[s].series_start) continue;
      num += resid[s] * resid[s - 1];
      den += resid[s - 1] * resid[s - 1];
    }
    double rho = den > 0.0 ? num / den : 0.0;
    if (std::abs(rho) >= 1.0) {
      rho = std::clamp(rho, -0.999, 0.999);
      clamped = true;
    }
    double ss = 0.0;
    std::size_t n_pairs = 0;
    for (std::size_t s = 1; s < n_samp; ++s) {
      if (samples[s].series_start) continue;
      const double e = resid[s] - rho * resid[s - 1];
      ss += e * e;
      ++n_pairs;
    }
    model.rho[cell] = rho;
    model.sigma[cell] = n_pairs > 0 ? std::sqrt(ss / double(n_pairs)) : 0.0;
    model.fitted[cell] = 1;
  }
  if (clamped)
    std::fprintf(stderr, "fit_mesmer: warning: |rho| >= 1 clamped at some gridpoints\n");
  return model;
}

HarmonicARModel fit_mesmer(const std::vector<ScenarioDataset>& datasets,
                           const MesmerFitOptions& opts) {
  std::vector<const ScenarioDataset*> ptrs;
  for (const auto& d : datasets) ptrs.push_back(&d);
  return fit_mesmer(ptrs, opts);
}

std::vector<std::vector<std::vector<double>>> emulate_mesmer(
    const HarmonicARModel& model, const std::vector<double>& annual_means,
    std::size_t n_members, std::uint64_t seed) {
  if (model.coef.empty()) throw std::invalid_argument("emulate_mesmer: unfitted model");
  const std::size_t ncell = model.grid->n_cells();
  const std::size_t n_months = annual_means.size() * 12;

  std::vector<std::vector<std::vector<double>>> out(n_members);
  for (std::size_t m = 0; m < n_members; ++m) {
    Rng rng(mix_seed(seed, m));
    std::vector<double> resid(ncell, 0.0);
    for (std::size_t k = 0; k < ncell; ++k) {
      if (!model.fitted[k] || model.sigma[k] == 0.0) continue;
      const double stat_sd =
          model.sigma[k] / std::sqrt(1.0 - model.rho[k] * model.rho[k]);
      resid[k] = stat_sd * rng.normal();
    }
    out[m].resize(n_months);
    for (std::size_t t = 0; t < n_months; ++t) {
      std::vector<double> month(ncell, 0.0);
      const auto x = model.regressors(t % 12, annual_means[t / 12] - model.t_center);
      const std::size_t n_reg = model.n_coef();
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t k = 0; k < std::ptrdiff_t(ncell); ++k) {
        if (!model.fitted[k]) continue;
        double mu = 0.0;
        const double* b = &model.coef[std::size_t(k) * n_reg];
        for (std::size_t i = 0; i < n_reg; ++i) mu += b[i] * x[i];
        month[k] = mu + resid[k];
      }
      out[m][t] = std::move(month);
      for (std::size_t k = 0; k < ncell; ++k) {
        if (!model.fitted[k]) continue;
        resid[k] = model.rho[k] * resid[k] + model.sigma[k] * rng.normal();
      }
    }
  }
  return out;
}

void write_mesmer(const HarmonicARModel& model, const std::filesystem::path& path) {
  Container c;
  c.header["kind"] = "mesmerm";
  c.header["mesmerm"] = {{"order", model.order},
                         {"t_center", model.t_center},
                         {"ref_start_year", model.ref_start_year},
                         {"ref_years", model.ref_years},
                         {"land_only", model.land_only}};
  c.header["grid"] = grid_to_json(*model.grid);
  const std::size_t ncell = model.grid->n_cells();
  c.header["sections"] = nlohmann::json::array(
      {{{"name", "coef"}, {"dtype", "f64"}, {"shape", {ncell, model.n_coef()}}},
       {{"name", "rho"}, {"dtype", "f64"}, {"shape", {ncell}}},
       {{"name", "sigma"}, {"dtype", "f64"}, {"shape", {ncell}}},
       {{"name", "fitted"}, {"dtype", "f64"}, {"shape", {ncell}}}});
  c.arrays.push_back(model.coef);
  c.arrays.push_back(model.rho);
  c.arrays.push_back(model.sigma);
  c.arrays.emplace_back(model.fitted.begin(), model.fitted.end());
  write_container(c, path);
}

HarmonicARModel read_mesmer(const std::filesystem::path& path) {
  Container c = read_container(path);
  if (c.header.value("kind", "") != "mesmerm")
    throw FormatError("container is not a mesmerm model", 0);
  HarmonicARModel model;
  const auto& h = c.header.at("mesmerm");
  model.order = h.at("order").get<std::size_t>();
  model.t_center = h.at("t_center").get<double>();
  model.ref_start_year = h.at("ref_start_year").get<int>();
  model.ref_years = h.at("ref_years").get<std::size_t>();
  model.land_only = h.at("land_only").get<bool>();
  model.grid = grid_from_json(c.header.at("grid"));
  model.coef = c.arrays.at(0);
  model.rho = c.arrays.at(1);
  model.sigma = c.arrays.at(2);
  model.fitted.assign(c.arrays.at(3).begin(), c.arrays.at(3).end());
  if (model.coef.size() != model.grid->n_cells() * model.n_coef())
    throw FormatError("mesmerm coef shape mismatch", 0);
  return model;
}

}  // namespace climemu
