#include "climemu/rollout.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "climemu/errors.hpp"
#include "climemu/metrics.hpp"

namespace climemu {

namespace {

/// Normalized input for one autoregressive step: previous/current state are
/// already normalized; forcings are read from the scenario at month t.
NormalizedItem step_item(const EmulatorParams& det, const ForcingSet& forcings,
                         const std::vector<double>& prev_n,
                         const std::vector<double>& curr_n, std::size_t t,
                         std::size_t h_index) {
  const std::size_t o = det.n_state(), nc = det.n_cells();
  NormalizedItem n;
  n.h_index = h_index;
  n.input.assign(det.input_dim(), 0.0);
  std::copy(prev_n.begin(), prev_n.end(), n.input.begin());
  std::copy(curr_n.begin(), curr_n.end(), n.input.begin() + std::ptrdiff_t(o));
  for (std::size_t f = 0; f < forcings.spatials.size(); ++f) {
    const auto& vals = forcings.spatials[f].values[t];
    const double mu = det.stats.spatial_mean[f], sd = det.stats.spatial_std[f];
    for (std::size_t c = 0; c < nc; ++c)
      n.input[2 * o + f * nc + c] = (vals[c] - mu) / sd;
  }
  n.scalar_f.resize(forcings.scalars.size());
  for (std::size_t f = 0; f < forcings.scalars.size(); ++f)
    n.scalar_f[f] = (forcings.scalars[f].values[t] - det.stats.scalar_mean[f]) /
                    det.stats.scalar_std[f];
  return n;
}

}  // namespace

std::vector<double> euler_sample(const EmulatorParams& det, const FlowParams& flow,
                                 const NormalizedItem& item, std::size_t n_steps,
                                 Rng& rng) {
  if (n_steps == 0) throw std::invalid_argument("euler_sample needs at least one step");
  const std::size_t o = det.n_state();
  std::vector<double> r(o);
  for (double& x : r) x = rng.normal();
  const double dt = 1.0 / double(n_steps);
  for (std::size_t k = 0; k < n_steps; ++k) {
    const double tau = double(k) * dt;
    const std::vector<double> v = flow_velocity(det, flow, r, tau, item);
    for (std::size_t i = 0; i < o; ++i) r[i] += dt * v[i];
  }
  return r;
}

ScenarioDataset rollout(const std::vector<EmulatorParams>& ensemble,
                        const std::optional<FlowParams>& flow,
                        const ScenarioDataset& init, const RolloutConfig& cfg) {
  if (ensemble.empty()) throw std::invalid_argument("empty model ensemble");
  if (cfg.n_members == 0) throw std::invalid_argument("n_members must be positive");
  const EmulatorParams& det = ensemble[0];
  if (init.n_months < 2 || init.members.empty())
    throw std::invalid_argument("initial scenario needs at least two months");
  if (init.grid->n_lat() != det.n_lat || init.grid->n_lon() != det.n_lon ||
      init.variables != det.variables)
    throw DomainMismatch("initial scenario does not match the trained model");
  init.forcings.validate(*init.grid, init.n_months);
  const std::size_t h_index = det.horizon_index(1);

  const std::size_t o = det.n_state(), nc = det.n_cells();
  const std::size_t nv = det.variables.size();

  ScenarioDataset out;
  out.name = init.name;
  out.start_year = init.start_year;
  out.n_months = init.n_months;
  out.grid = init.grid;
  out.variables = init.variables;
  out.forcings = init.forcings;
  out.members.resize(cfg.n_members);

  const auto normalize_state = [&](const StateTensor& x) {
    std::vector<double> n(o);
    for (std::size_t v = 0; v < nv; ++v)
      for (std::size_t c = 0; c < nc; ++c)
        n[v * nc + c] = det.stats.normalize_var(v, x[v * nc + c]);
    return n;
  };

  for (std::size_t m = 0; m < cfg.n_members; ++m) {
    Rng rng(mix_seed(cfg.seed, m));
    auto& series = out.members[m];
    series.push_back(init.members[0][0]);
    series.push_back(init.members[0][1]);
    std::vector<double> prev_n = normalize_state(series[0]);
    std::vector<double> curr_n = normalize_state(series[1]);

    for (std::size_t t = 1; t + 1 < init.n_months; ++t) {
      const NormalizedItem item = step_item(det, init.forcings, prev_n, curr_n, t, h_index);
      std::vector<double> next(o, 0.0);
      for (const EmulatorParams& model : ensemble) {
        const std::vector<double> y = forward_deterministic_normalized(model, item);
        for (std::size_t i = 0; i < o; ++i) next[i] += y[i] / double(ensemble.size());
      }
      if (flow) {
        const std::vector<double> r = euler_sample(det, *flow, item, cfg.euler_steps, rng);
        for (std::size_t i = 0; i < o; ++i) next[i] += r[i];
      }
      for (double x : next)
        if (!std::isfinite(x) || std::abs(x) > cfg.divergence_threshold)
          throw RolloutDiverged("rollout diverged at month " + std::to_string(t + 1) +
                                " of scenario '" + init.name + "'");

      StateTensor raw(o);
      for (std::size_t v = 0; v < nv; ++v)
        for (std::size_t c = 0; c < nc; ++c)
          raw[v * nc + c] = det.stats.denormalize_var(v, next[v * nc + c]);
      series.push_back(std::move(raw));
      prev_n.swap(curr_n);
      curr_n.swap(next);
    }
  }
  return out;
}

SelectionResult select_checkpoint(const std::vector<Checkpoint>& checkpoints,
                                  const std::optional<FlowParams>& flow,
                                  const ScenarioDataset& validation,
                                  bool final_decade_only, const RolloutConfig& cfg) {
  if (checkpoints.empty()) throw SelectionFailure("no checkpoints to select from");
  SelectionResult res;
  const std::size_t begin =
      final_decade_only && validation.n_months > 120 ? validation.n_months - 120 : 0;

  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < checkpoints.size(); ++k) {
    double score = std::numeric_limits<double>::infinity();
    try {
      const ScenarioDataset pred =
          rollout({checkpoints[k].params}, flow, validation, cfg);
      score = nrmse(pred, validation, begin, validation.n_months);
    } catch (const RolloutDiverged&) {
      // diverged checkpoints rank last
    }
    if (!std::isfinite(score)) score = std::numeric_limits<double>::infinity();
    res.scores.push_back({checkpoints[k].step, score});
    if (score < best) {
      best = score;
      res.best = k;
    }
  }
  if (!std::isfinite(best))
    throw SelectionFailure("every checkpoint diverged on scenario '" + validation.name +
                           "'");
  return res;
}

}  // namespace climemu
