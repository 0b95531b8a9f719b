#include "climemu/emulator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "climemu/errors.hpp"

namespace climemu {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kAdamEps = 1e-8;

void gemv(const Tensor& w, const double* x, const double* b, double* out) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < std::ptrdiff_t(w.rows); ++r) {
    double acc = b ? b[r] : 0.0;
    const double* row = w.v.data() + std::size_t(r) * w.cols;
    for (std::size_t c = 0; c < w.cols; ++c) acc += row[c] * x[c];
    out[std::size_t(r)] = acc;
  }
}

/// dW += dout (x) x ; dx += W^T dout (dx may be null).
void gemv_backward(const Tensor& w, const double* x, const double* dout, Tensor& dw,
                   double* dx) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < std::ptrdiff_t(w.rows); ++r) {
    double* drow = dw.v.data() + std::size_t(r) * w.cols;
    const double d = dout[std::size_t(r)];
    for (std::size_t c = 0; c < w.cols; ++c) drow[c] += d * x[c];
  }
  if (!dx) return;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < std::ptrdiff_t(w.cols); ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < w.rows; ++r)
      acc += w.v[r * w.cols + std::size_t(c)] * dout[r];
    dx[std::size_t(c)] += acc;
  }
}

void fill_normal(Tensor& t, Rng& rng, double scale) {
  for (double& x : t.v) x = scale * rng.normal();
}

struct DetTrace {
  std::vector<double> h0, hn, gain, bias, h1, a1, h2, a2, out;
  double mu = 0.0, inv_s = 0.0;
};

void forward_det(const EmulatorParams& p, const NormalizedItem& it, DetTrace& tr) {
  const std::size_t w = p.width, o = p.n_state();
  tr.h0.resize(w);
  tr.hn.resize(w);
  tr.gain.resize(w);
  tr.bias.resize(w);
  tr.h1.resize(w);
  tr.a1.resize(w);
  tr.h2.resize(w);
  tr.a2.resize(w);
  tr.out.resize(o);

  gemv(p.w_in, it.input.data(), p.b_in.v.data(), tr.h0.data());

  double mu = 0.0;
  for (double x : tr.h0) mu += x;
  mu /= double(w);
  double var = 0.0;
  for (double x : tr.h0) var += (x - mu) * (x - mu);
  var /= double(w);
  tr.mu = mu;
  tr.inv_s = 1.0 / std::sqrt(var + kLnEps);
  for (std::size_t i = 0; i < w; ++i) tr.hn[i] = (tr.h0[i] - mu) * tr.inv_s;

  const std::size_t q = p.scalar_forcings.size();
  const double* emb = p.horizon_emb.v.data() + it.h_index * w;
  for (std::size_t i = 0; i < w; ++i) {
    double g = 1.0, b = 0.0;
    for (std::size_t j = 0; j < q; ++j) {
      g += p.cln_gain.at(i, j) * it.scalar_f[j];
      b += p.cln_bias.at(i, j) * it.scalar_f[j];
    }
    tr.gain[i] = g;
    tr.bias[i] = b;
    tr.h1[i] = g * tr.hn[i] + b + emb[i];
    tr.a1[i] = std::tanh(tr.h1[i]);
  }

  gemv(p.w_h, tr.a1.data(), p.b_h.v.data(), tr.h2.data());
  for (std::size_t i = 0; i < w; ++i) tr.a2[i] = std::tanh(tr.h2[i]);

  gemv(p.w_out, tr.a2.data(), p.b_out.v.data(), tr.out.data());
  const double* x_t = it.input.data() + o;  // current state block
  for (std::size_t i = 0; i < o; ++i) tr.out[i] += x_t[i];
}

struct DetGrads {
  Tensor w_in, b_in, cln_gain, cln_bias, horizon_emb, w_h, b_h, w_out, b_out;

  explicit DetGrads(const EmulatorParams& p)
      : w_in(p.w_in.rows, p.w_in.cols),
        b_in(p.b_in.rows, 1),
        cln_gain(p.cln_gain.rows, p.cln_gain.cols),
        cln_bias(p.cln_bias.rows, p.cln_bias.cols),
        horizon_emb(p.horizon_emb.rows, p.horizon_emb.cols),
        w_h(p.w_h.rows, p.w_h.cols),
        b_h(p.b_h.rows, 1),
        w_out(p.w_out.rows, p.w_out.cols),
        b_out(p.b_out.rows, 1) {}

  std::vector<Tensor*> tensors() {
    return {&w_in, &b_in, &cln_gain, &cln_bias, &horizon_emb,
            &w_h,  &b_h,  &w_out,    &b_out};
  }
};

void backward_det(const EmulatorParams& p, const NormalizedItem& it, const DetTrace& tr,
                  const std::vector<double>& dout, DetGrads& g) {
  const std::size_t w = p.width;
  const std::size_t q = p.scalar_forcings.size();

  for (std::size_t i = 0; i < p.n_state(); ++i) g.b_out.v[i] += dout[i];
  std::vector<double> da2(w, 0.0);
  gemv_backward(p.w_out, tr.a2.data(), dout.data(), g.w_out, da2.data());

  std::vector<double> dh2(w);
  for (std::size_t i = 0; i < w; ++i) dh2[i] = da2[i] * (1.0 - tr.a2[i] * tr.a2[i]);
  for (std::size_t i = 0; i < w; ++i) g.b_h.v[i] += dh2[i];
  std::vector<double> da1(w, 0.0);
  gemv_backward(p.w_h, tr.a1.data(), dh2.data(), g.w_h, da1.data());

  std::vector<double> dh1(w), dhn(w);
  double* demb = g.horizon_emb.v.data() + it.h_index * w;
  for (std::size_t i = 0; i < w; ++i) {
    dh1[i] = da1[i] * (1.0 - tr.a1[i] * tr.a1[i]);
    demb[i] += dh1[i];
    for (std::size_t j = 0; j < q; ++j) {
      g.cln_gain.at(i, j) += dh1[i] * tr.hn[i] * it.scalar_f[j];
      g.cln_bias.at(i, j) += dh1[i] * it.scalar_f[j];
    }
    dhn[i] = dh1[i] * tr.gain[i];
  }

  double m1 = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < w; ++i) {
    m1 += dhn[i];
    m2 += dhn[i] * tr.hn[i];
  }
  m1 /= double(w);
  m2 /= double(w);
  std::vector<double> dh0(w);
  for (std::size_t i = 0; i < w; ++i)
    dh0[i] = tr.inv_s * (dhn[i] - m1 - tr.hn[i] * m2);

  for (std::size_t i = 0; i < w; ++i) g.b_in.v[i] += dh0[i];
  gemv_backward(p.w_in, it.input.data(), dh0.data(), g.w_in, nullptr);
}

struct FlowTrace {
  std::vector<double> in, h1, a1, h2, a2, out;
};

std::size_t flow_input_dim(const EmulatorParams& det) {
  // [r_tau, x_{t-1}, x_t, scalar forcings, tau]
  return 3 * det.n_state() + det.scalar_forcings.size() + 1;
}

void build_flow_input(const EmulatorParams& det, const NormalizedItem& it,
                      const std::vector<double>& r_tau, double tau,
                      std::vector<double>& in) {
  const std::size_t o = det.n_state();
  in.resize(flow_input_dim(det));
  std::copy(r_tau.begin(), r_tau.end(), in.begin());
  std::copy(it.input.begin(), it.input.begin() + std::ptrdiff_t(2 * o),
            in.begin() + std::ptrdiff_t(o));
  std::copy(it.scalar_f.begin(), it.scalar_f.end(),
            in.begin() + std::ptrdiff_t(3 * o));
  in.back() = tau;
}

void forward_flow(const FlowParams& f, const std::vector<double>& in, FlowTrace& tr) {
  const std::size_t w = f.width, o = f.w_out.rows;
  tr.in = in;
  tr.h1.resize(w);
  tr.a1.resize(w);
  tr.h2.resize(w);
  tr.a2.resize(w);
  tr.out.resize(o);
  gemv(f.w_in, in.data(), f.b_in.v.data(), tr.h1.data());
  for (std::size_t i = 0; i < w; ++i) tr.a1[i] = std::tanh(tr.h1[i]);
  gemv(f.w_h, tr.a1.data(), f.b_h.v.data(), tr.h2.data());
  for (std::size_t i = 0; i < w; ++i) tr.a2[i] = std::tanh(tr.h2[i]);
  gemv(f.w_out, tr.a2.data(), f.b_out.v.data(), tr.out.data());
  const double tau = in.back();
  for (std::size_t i = 0; i < o; ++i)
    tr.out[i] += (f.g_lin.at(i, 0) + f.g_lin.at(i, 1) * tau + f.g_lin.at(i, 2) * tau * tau) *
                 in[i];
}

struct FlowGrads {
  Tensor w_in, b_in, w_h, b_h, w_out, b_out, g_lin;

  explicit FlowGrads(const FlowParams& f)
      : w_in(f.w_in.rows, f.w_in.cols),
        b_in(f.b_in.rows, 1),
        w_h(f.w_h.rows, f.w_h.cols),
        b_h(f.b_h.rows, 1),
        w_out(f.w_out.rows, f.w_out.cols),
        b_out(f.b_out.rows, 1),
        g_lin(f.g_lin.rows, f.g_lin.cols) {}

  std::vector<Tensor*> tensors() {
    return {&w_in, &b_in, &w_h, &b_h, &w_out, &b_out, &g_lin};
  }
};

void backward_flow(const FlowParams& f, const FlowTrace& tr,
                   const std::vector<double>& dout, FlowGrads& g) {
  const std::size_t w = f.width;
  const double tau = tr.in.back();
  for (std::size_t i = 0; i < dout.size(); ++i) {
    g.b_out.v[i] += dout[i];
    const double dg = dout[i] * tr.in[i];
    g.g_lin.at(i, 0) += dg;
    g.g_lin.at(i, 1) += dg * tau;
    g.g_lin.at(i, 2) += dg * tau * tau;
  }
  std::vector<double> da2(w, 0.0);
  gemv_backward(f.w_out, tr.a2.data(), dout.data(), g.w_out, da2.data());
  std::vector<double> dh2(w);
  for (std::size_t i = 0; i < w; ++i) dh2[i] = da2[i] * (1.0 - tr.a2[i] * tr.a2[i]);
  for (std::size_t i = 0; i < w; ++i) g.b_h.v[i] += dh2[i];
  std::vector<double> da1(w, 0.0);
  gemv_backward(f.w_h, tr.a1.data(), dh2.data(), g.w_h, da1.data());
  std::vector<double> dh1(w);
  for (std::size_t i = 0; i < w; ++i) dh1[i] = da1[i] * (1.0 - tr.a1[i] * tr.a1[i]);
  for (std::size_t i = 0; i < w; ++i) g.b_in.v[i] += dh1[i];
  gemv_backward(f.w_in, tr.in.data(), dh1.data(), g.w_in, nullptr);
}

struct AdamState {
  std::vector<std::vector<double>> m, v;

  explicit AdamState(const std::vector<Tensor*>& params) {
    for (const Tensor* t : params) {
      m.emplace_back(t->size(), 0.0);
      v.emplace_back(t->size(), 0.0);
    }
  }
};

void adamw_step(std::vector<Tensor*> params, std::vector<Tensor*> grads,
                AdamState& st, const TrainConfig& cfg, double lr, std::size_t t) {
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    double* th = params[k]->v.data();
    const double* g = grads[k]->v.data();
    double* m = st.m[k].data();
    double* v = st.v[k].data();
    const std::size_t n = params[k]->size();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(n); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      th[i] -= lr * (mh / (std::sqrt(vh) + kAdamEps) + cfg.weight_decay * th[i]);
    }
  }
}

void zero_grads(std::vector<Tensor*> grads) {
  for (Tensor* t : grads) std::fill(t->v.begin(), t->v.end(), 0.0);
}

std::size_t checkpoint_stride(std::size_t total) { return std::max<std::size_t>(1, total / 20); }

}  // namespace

void TrainConfig::validate() const {
  if (keep_prob < 0.0 || keep_prob > 1.0)
    throw std::invalid_argument("keep_prob must lie in [0, 1]");
  if (horizons.empty() || !std::is_sorted(horizons.begin(), horizons.end()) ||
      horizons.front() == 0)
    throw std::invalid_argument("horizons must be ascending positive integers");
  if (width == 0 || batch_size == 0 || total_steps == 0 || n_det_models == 0)
    throw std::invalid_argument("width, batch_size, total_steps, n_det_models must be positive");
  if (warmup_steps >= total_steps)
    throw std::invalid_argument("warmup_steps must be below total_steps");
  if (det_lr <= 0.0 || flow_lr <= 0.0) throw std::invalid_argument("learning rates must be positive");
  spectral.validate();
}

double lr_at(std::size_t step, double peak, std::size_t warmup, std::size_t total) {
  if (step >= total) return 0.0;
  if (step <= warmup) return peak * double(step) / double(std::max<std::size_t>(1, warmup));
  const double u = double(step - warmup) / double(total - warmup);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * u));
}

std::size_t EmulatorParams::horizon_index(std::size_t h) const {
  for (std::size_t i = 0; i < horizons.size(); ++i)
    if (horizons[i] == h) return i;
  throw std::invalid_argument("horizon " + std::to_string(h) + " not in the trained set");
}

std::vector<Tensor*> EmulatorParams::tensors() {
  return {&w_in, &b_in, &cln_gain, &cln_bias, &horizon_emb, &w_h, &b_h, &w_out, &b_out};
}
std::vector<const Tensor*> EmulatorParams::tensors() const {
  return {&w_in, &b_in, &cln_gain, &cln_bias, &horizon_emb, &w_h, &b_h, &w_out, &b_out};
}

std::vector<Tensor*> FlowParams::tensors() {
  return {&w_in, &b_in, &w_h, &b_h, &w_out, &b_out, &g_lin};
}
std::vector<const Tensor*> FlowParams::tensors() const {
  return {&w_in, &b_in, &w_h, &b_h, &w_out, &b_out, &g_lin};
}

EmulatorParams init_params(const ScenarioDataset& shape_source, const NormStats& stats,
                           const TrainConfig& cfg, Rng& rng) {
  EmulatorParams p;
  p.n_lat = shape_source.grid->n_lat();
  p.n_lon = shape_source.grid->n_lon();
  p.variables = shape_source.variables;
  // Forcings are matched by position across datasets; names are recorded for
  // the container header and sanity checks.
  p.spatial_forcings = stats.spatial_names;
  p.scalar_forcings = stats.scalar_names;
  p.horizons = cfg.horizons;
  p.width = cfg.width;
  p.stats = stats;

  const std::size_t d = p.input_dim(), w = p.width, o = p.n_state();
  const std::size_t q = p.scalar_forcings.size();
  p.w_in = Tensor(w, d);
  p.b_in = Tensor(w, 1);
  p.cln_gain = Tensor(w, q);
  p.cln_bias = Tensor(w, q);
  p.horizon_emb = Tensor(p.horizons.size(), w);
  p.w_h = Tensor(w, w);
  p.b_h = Tensor(w, 1);
  p.w_out = Tensor(o, w);  // zero: the untrained model is the persistence forecast
  p.b_out = Tensor(o, 1);

  fill_normal(p.w_in, rng, 1.0 / std::sqrt(double(d)));
  fill_normal(p.horizon_emb, rng, 0.01);
  fill_normal(p.w_h, rng, 1.0 / std::sqrt(double(w)));
  return p;
}

FlowParams init_flow_params(const EmulatorParams& det, Rng& rng, std::size_t width) {
  FlowParams f;
  f.width = width == 0 ? det.n_state() : width;
  const std::size_t d = flow_input_dim(det), o = det.n_state();
  f.w_in = Tensor(f.width, d);
  f.b_in = Tensor(f.width, 1);
  f.w_h = Tensor(f.width, f.width);
  f.b_h = Tensor(f.width, 1);
  f.w_out = Tensor(o, f.width);
  f.b_out = Tensor(o, 1);
  f.g_lin = Tensor(o, 3);  // zero start: the bypass begins as the identity flow
  fill_normal(f.w_in, rng, 1.0 / std::sqrt(double(d)));
  fill_normal(f.w_h, rng, 1.0 / std::sqrt(double(f.width)));
  fill_normal(f.w_out, rng, 0.01 / std::sqrt(double(f.width)));
  return f;
}

TrainingItem sample_training_item(const ScenarioDataset& dataset, const TrainConfig& cfg,
                                  Rng& rng) {
  const std::size_t max_h = cfg.horizons.back();
  if (dataset.n_months < max_h + 2)
    throw std::invalid_argument("dataset '" + dataset.name + "' too short for horizon " +
                                std::to_string(max_h) + ": needs at least " +
                                std::to_string(max_h + 2) + " months");
  TrainingItem it;
  it.dataset = &dataset;
  it.member = rng.uniform_index(dataset.members.size());
  it.horizon = cfg.horizons[rng.uniform_index(cfg.horizons.size())];
  it.t = 1 + rng.uniform_index(dataset.n_months - it.horizon - 1);
  if (cfg.mask_jointly) {
    it.forcings_masked = !rng.bernoulli(cfg.keep_prob);
  } else {
    for (const auto& s : dataset.forcings.spatials) {
      (void)s;
      it.spatial_masked.push_back(rng.bernoulli(cfg.keep_prob) ? 0 : 1);
    }
    for (const auto& s : dataset.forcings.scalars) {
      (void)s;
      it.scalar_masked.push_back(rng.bernoulli(cfg.keep_prob) ? 0 : 1);
    }
  }
  return it;
}

NormalizedItem normalize_item(const EmulatorParams& params, const TrainingItem& item) {
  const ScenarioDataset& ds = *item.dataset;
  const std::size_t o = params.n_state(), nc = params.n_cells();
  const std::size_t nv = params.variables.size();
  if (ds.variables != params.variables)
    throw DomainMismatch("dataset variables do not match the trained model");
  if (ds.forcings.spatials.size() != params.spatial_forcings.size() ||
      ds.forcings.scalars.size() != params.scalar_forcings.size())
    throw DomainMismatch("dataset forcings do not match the trained model");

  NormalizedItem n;
  n.h_index = params.horizon_index(item.horizon);
  n.input.assign(params.input_dim(), 0.0);
  const StateTensor& xm1 = ds.members[item.member][item.t - 1];
  const StateTensor& xt = ds.members[item.member][item.t];
  for (std::size_t v = 0; v < nv; ++v)
    for (std::size_t c = 0; c < nc; ++c) {
      n.input[v * nc + c] = params.stats.normalize_var(v, xm1[v * nc + c]);
      n.input[o + v * nc + c] = params.stats.normalize_var(v, xt[v * nc + c]);
    }
  for (std::size_t f = 0; f < params.spatial_forcings.size(); ++f) {
    const bool masked =
        item.forcings_masked || (f < item.spatial_masked.size() && item.spatial_masked[f]);
    if (masked) continue;  // zero is the normalized-space mean surrogate
    const auto& vals = ds.forcings.spatials[f].values[item.t];
    const double mu = params.stats.spatial_mean[f], sd = params.stats.spatial_std[f];
    for (std::size_t c = 0; c < nc; ++c)
      n.input[2 * o + f * nc + c] = (vals[c] - mu) / sd;
  }
  n.scalar_f.assign(params.scalar_forcings.size(), 0.0);
  for (std::size_t f = 0; f < params.scalar_forcings.size(); ++f) {
    const bool masked =
        item.forcings_masked || (f < item.scalar_masked.size() && item.scalar_masked[f]);
    if (masked) continue;
    n.scalar_f[f] = (ds.forcings.scalars[f].values[item.t] - params.stats.scalar_mean[f]) /
                    params.stats.scalar_std[f];
  }
  n.target.resize(o);
  const StateTensor& y = ds.members[item.member][item.t + item.horizon];
  for (std::size_t v = 0; v < nv; ++v)
    for (std::size_t c = 0; c < nc; ++c)
      n.target[v * nc + c] = params.stats.normalize_var(v, y[v * nc + c]);
  return n;
}

std::vector<double> forward_deterministic_normalized(const EmulatorParams& params,
                                                     const NormalizedItem& item) {
  DetTrace tr;
  forward_det(params, item, tr);
  return std::move(tr.out);
}

StateTensor forward_deterministic(const EmulatorParams& params, const StateTensor& x_prev,
                                  const StateTensor& x_curr, const ForcingSet& forcings,
                                  std::size_t month, std::size_t h) {
  const std::size_t o = params.n_state(), nc = params.n_cells();
  const std::size_t nv = params.variables.size();
  if (x_prev.size() != o || x_curr.size() != o)
    throw std::invalid_argument("state size does not match the trained model");

  NormalizedItem n;
  n.h_index = params.horizon_index(h);
  n.input.assign(params.input_dim(), 0.0);
  for (std::size_t v = 0; v < nv; ++v)
    for (std::size_t c = 0; c < nc; ++c) {
      n.input[v * nc + c] = params.stats.normalize_var(v, x_prev[v * nc + c]);
      n.input[o + v * nc + c] = params.stats.normalize_var(v, x_curr[v * nc + c]);
    }
  if (forcings.spatials.size() != params.spatial_forcings.size() ||
      forcings.scalars.size() != params.scalar_forcings.size())
    throw DomainMismatch("forcing set does not match the trained model");
  for (std::size_t f = 0; f < forcings.spatials.size(); ++f) {
    const auto& vals = forcings.spatials[f].values.at(month);
    for (std::size_t c = 0; c < nc; ++c)
      n.input[2 * o + f * nc + c] =
          (vals[c] - params.stats.spatial_mean[f]) / params.stats.spatial_std[f];
  }
  n.scalar_f.resize(params.scalar_forcings.size());
  for (std::size_t f = 0; f < forcings.scalars.size(); ++f)
    n.scalar_f[f] = (forcings.scalars[f].values.at(month) - params.stats.scalar_mean[f]) /
                    params.stats.scalar_std[f];

  std::vector<double> out = forward_deterministic_normalized(params, n);
  StateTensor y(o);
  for (std::size_t v = 0; v < nv; ++v)
    for (std::size_t c = 0; c < nc; ++c)
      y[v * nc + c] = params.stats.denormalize_var(v, out[v * nc + c]);
  return y;
}

std::vector<double> flow_velocity(const EmulatorParams& det, const FlowParams& flow,
                                  const std::vector<double>& r_tau, double tau,
                                  const NormalizedItem& item) {
  std::vector<double> in;
  build_flow_input(det, item, r_tau, tau, in);
  FlowTrace tr;
  forward_flow(flow, in, tr);
  return std::move(tr.out);
}

TrainResult train_deterministic(const std::vector<const ScenarioDataset*>& datasets,
                                const NormStats& stats, const TrainConfig& cfg,
                                std::uint64_t seed) {
  cfg.validate();
  if (datasets.empty()) throw std::invalid_argument("no training datasets");

  Rng init_rng(mix_seed(seed, 1));
  Rng sample_rng(mix_seed(seed, 2));
  TrainResult res;
  res.params = init_params(*datasets[0], stats, cfg, init_rng);
  EmulatorParams& p = res.params;

  DetGrads grads(p);
  AdamState adam(p.tensors());
  const std::size_t stride = checkpoint_stride(cfg.total_steps);
  const std::size_t o = p.n_state();
  DetTrace tr;
  std::vector<double> dout(o);

  for (std::size_t step = 1; step <= cfg.total_steps; ++step) {
    zero_grads(grads.tensors());
    double loss = 0.0;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const ScenarioDataset& ds = *datasets[sample_rng.uniform_index(datasets.size())];
      const TrainingItem item = sample_training_item(ds, cfg, sample_rng);
      const NormalizedItem n = normalize_item(p, item);
      forward_det(p, n, tr);
      double item_loss = 0.0;
      const double scale = 2.0 / (double(o) * double(cfg.batch_size));
      for (std::size_t i = 0; i < o; ++i) {
        const double d = tr.out[i] - n.target[i];
        item_loss += d * d;
        dout[i] = scale * d;
      }
      loss += item_loss / double(o);
      backward_det(p, n, tr, dout, grads);
    }
    loss /= double(cfg.batch_size);
    if (!std::isfinite(loss))
      throw TrainingFailure("deterministic loss diverged at step " + std::to_string(step));

    const double lr = lr_at(step, cfg.det_lr, cfg.warmup_steps, cfg.total_steps);
    adamw_step(p.tensors(), grads.tensors(), adam, cfg, lr, step);
    res.history.push_back({step, lr, loss, loss, 0.0});
    if (step % stride == 0 || step == cfg.total_steps)
      res.checkpoints.push_back({step, p});
  }
  return res;
}

FlowTrainResult train_generative(const std::vector<EmulatorParams>& det_ensemble,
                                 const std::vector<const ScenarioDataset*>& datasets,
                                 const TrainConfig& cfg) {
  cfg.validate();
  if (det_ensemble.empty()) throw std::invalid_argument("empty deterministic ensemble");
  if (datasets.empty()) throw std::invalid_argument("no training datasets");
  const EmulatorParams& det = det_ensemble[0];

  Rng init_rng(mix_seed(cfg.seed, 11));
  Rng sample_rng(mix_seed(cfg.seed, 12));
  FlowTrainResult res;
  res.params = init_flow_params(det, init_rng, cfg.flow_width);
  FlowParams& f = res.params;

  FlowGrads grads(f);
  AdamState adam(f.tensors());
  TrainConfig sample_cfg = cfg;
  sample_cfg.horizons = {cfg.horizons.front()};  // the flow corrects one-step means

  const std::size_t o = det.n_state(), nc = det.n_cells();
  const std::size_t nv = det.variables.size();
  FlowTrace tr;
  std::vector<double> mean_pred(o), r(o), z(o), r_tau(o), u(o), x1(o), dout(o), in;

  for (std::size_t step = 1; step <= cfg.total_steps; ++step) {
    zero_grads(grads.tensors());
    double loss_mse = 0.0, loss_spec = 0.0;
    const double lam = lambda_spec_at(step, cfg.spectral);
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const ScenarioDataset& ds = *datasets[sample_rng.uniform_index(datasets.size())];
      const TrainingItem item = sample_training_item(ds, sample_cfg, sample_rng);
      const NormalizedItem n = normalize_item(det, item);

      std::fill(mean_pred.begin(), mean_pred.end(), 0.0);
      for (const EmulatorParams& m : det_ensemble) {
        const std::vector<double> y = forward_deterministic_normalized(m, n);
        for (std::size_t i = 0; i < o; ++i) mean_pred[i] += y[i] / double(det_ensemble.size());
      }
      const double tau = sample_rng.uniform();
      for (std::size_t i = 0; i < o; ++i) {
        z[i] = sample_rng.normal();
        r[i] = n.target[i] - mean_pred[i];
        r_tau[i] = (1.0 - tau) * z[i] + tau * r[i];
        u[i] = r[i] - z[i];
      }
      build_flow_input(det, n, r_tau, tau, in);
      forward_flow(f, in, tr);

      const double scale = 2.0 / (double(o) * double(cfg.batch_size));
      double item_mse = 0.0;
      for (std::size_t i = 0; i < o; ++i) {
        const double d = tr.out[i] - u[i];
        item_mse += d * d;
        dout[i] = scale * d;
      }
      loss_mse += item_mse / double(o);

      const double wt = time_weight(tau, cfg.spectral);
      if (lam * wt > 0.0) {
        for (std::size_t i = 0; i < o; ++i)
          x1[i] = mean_pred[i] + r_tau[i] + (1.0 - tau) * tr.out[i];
        const double gscale = lam * wt * (1.0 - tau) / (double(nv) * double(cfg.batch_size));
        double spec = 0.0;
        for (std::size_t v = 0; v < nv; ++v) {
          std::span<const double> ch(x1.data() + v * nc, nc);
          std::span<const double> ct(n.target.data() + v * nc, nc);
          std::span<double> g(dout.data() + v * nc, nc);
          spec += spectral_total_loss_grad(ch, ct, det.n_lat, det.n_lon, cfg.spectral,
                                           gscale, g);
        }
        loss_spec += lam * wt * spec / double(nv);
      }
      backward_flow(f, tr, dout, grads);
    }
    loss_mse /= double(cfg.batch_size);
    loss_spec /= double(cfg.batch_size);
    const double loss = loss_mse + loss_spec;
    if (!std::isfinite(loss))
      throw TrainingFailure("generative loss diverged at step " + std::to_string(step));

    const double lr = lr_at(step, cfg.flow_lr, cfg.warmup_steps, cfg.total_steps);
    adamw_step(f.tensors(), grads.tensors(), adam, cfg, lr, step);
    res.history.push_back({step, lr, loss, loss_mse, loss_spec});
  }
  return res;
}

double gradient_check(const EmulatorParams& params, const FlowParams& flow,
                      const TrainingItem& item, GradCheckLoss which, double fd_step) {
  const NormalizedItem n = normalize_item(params, item);
  const std::size_t o = params.n_state(), nc = params.n_cells();
  const std::size_t nv = params.variables.size();

  // Fixed flow-matching sample, so the loss is a deterministic function of
  // the parameters.
  Rng noise(mix_seed(0x6c0de, 1));
  const double tau = 0.37;
  std::vector<double> mean_pred = forward_deterministic_normalized(params, n);
  std::vector<double> z(o), r(o), r_tau(o), u(o);
  for (std::size_t i = 0; i < o; ++i) {
    z[i] = noise.normal();
    r[i] = n.target[i] - mean_pred[i];
    r_tau[i] = (1.0 - tau) * z[i] + tau * r[i];
    u[i] = r[i] - z[i];
  }
  SpectralConfig spec_cfg;

  EmulatorParams det = params;
  FlowParams fl = flow;

  const auto det_loss = [&]() {
    const std::vector<double> y = forward_deterministic_normalized(det, n);
    return mse_loss(y, n.target);
  };
  const auto flow_out = [&]() {
    std::vector<double> in;
    build_flow_input(det, n, r_tau, tau, in);
    FlowTrace tr;
    forward_flow(fl, in, tr);
    return std::move(tr.out);
  };
  const auto loss_value = [&]() -> double {
    switch (which) {
      case GradCheckLoss::Deterministic:
        return det_loss();
      case GradCheckLoss::FlowVelocity:
        return mse_loss(flow_out(), u);
      case GradCheckLoss::Spectral: {
        const std::vector<double> v = flow_out();
        std::vector<double> x1(o);
        for (std::size_t i = 0; i < o; ++i)
          x1[i] = mean_pred[i] + r_tau[i] + (1.0 - tau) * v[i];
        double s = 0.0;
        for (std::size_t vv = 0; vv < nv; ++vv)
          s += spectral_total_loss(std::span<const double>(x1.data() + vv * nc, nc),
                                   std::span<const double>(n.target.data() + vv * nc, nc),
                                   det.n_lat, det.n_lon, spec_cfg);
        return s / double(nv);
      }
    }
    return 0.0;
  };

  // Analytic gradients.
  DetGrads dg(det);
  FlowGrads fg(fl);
  std::vector<double> dout(o, 0.0);
  if (which == GradCheckLoss::Deterministic) {
    DetTrace tr;
    forward_det(det, n, tr);
    for (std::size_t i = 0; i < o; ++i) dout[i] = 2.0 * (tr.out[i] - n.target[i]) / double(o);
    backward_det(det, n, tr, dout, dg);
  } else {
    std::vector<double> in;
    build_flow_input(det, n, r_tau, tau, in);
    FlowTrace tr;
    forward_flow(fl, in, tr);
    if (which == GradCheckLoss::FlowVelocity) {
      for (std::size_t i = 0; i < o; ++i) dout[i] = 2.0 * (tr.out[i] - u[i]) / double(o);
    } else {
      std::vector<double> x1(o);
      for (std::size_t i = 0; i < o; ++i)
        x1[i] = mean_pred[i] + r_tau[i] + (1.0 - tau) * tr.out[i];
      const double gscale = (1.0 - tau) / double(nv);
      for (std::size_t vv = 0; vv < nv; ++vv)
        spectral_total_loss_grad(std::span<const double>(x1.data() + vv * nc, nc),
                                 std::span<const double>(n.target.data() + vv * nc, nc),
                                 det.n_lat, det.n_lon, spec_cfg, gscale,
                                 std::span<double>(dout.data() + vv * nc, nc));
    }
    backward_flow(fl, tr, dout, fg);
  }

  std::vector<Tensor*> theta = (which == GradCheckLoss::Deterministic)
                                   ? det.tensors()
                                   : fl.tensors();
  std::vector<Tensor*> analytic = (which == GradCheckLoss::Deterministic)
                                      ? dg.tensors()
                                      : fg.tensors();
  double max_rel = 0.0;
  for (std::size_t k = 0; k < theta.size(); ++k) {
    for (std::size_t i = 0; i < theta[k]->size(); ++i) {
      double& w = theta[k]->v[i];
      const double saved = w;
      w = saved + fd_step;
      const double lp = loss_value();
      w = saved - fd_step;
      const double lm = loss_value();
      w = saved;
      const double num = (lp - lm) / (2.0 * fd_step);
      const double ana = analytic[k]->v[i];
      if (std::abs(num) < 1e-6 && std::abs(ana) < 1e-6) continue;
      const double rel = std::abs(num - ana) / std::max(std::abs(num), std::abs(ana));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

namespace {

nlohmann::json tensor_meta(const std::string& name, const Tensor& t) {
  return {{"name", name}, {"dtype", "f64"}, {"shape", {t.rows, t.cols}}};
}

const std::vector<std::string> kDetTensorNames = {
    "w_in", "b_in", "cln_gain", "cln_bias", "horizon_emb", "w_h", "b_h", "w_out", "b_out"};
const std::vector<std::string> kFlowTensorNames = {"w_in",  "b_in",  "w_h",
                                                   "b_h",   "w_out", "b_out",
                                                   "g_lin"};

nlohmann::json stats_to_json(const NormStats& s) {
  nlohmann::json vars = nlohmann::json::array();
  for (const auto& v : s.variables) {
    nlohmann::json jv{{"name", v.name}};
    if (v.level) jv["level"] = *v.level;
    vars.push_back(jv);
  }
  return {{"variables", vars},
          {"mean", s.mean},
          {"std", s.std},
          {"scalar_names", s.scalar_names},
          {"scalar_mean", s.scalar_mean},
          {"scalar_std", s.scalar_std},
          {"spatial_names", s.spatial_names},
          {"spatial_mean", s.spatial_mean},
          {"spatial_std", s.spatial_std}};
}

NormStats stats_from_json(const nlohmann::json& j) {
  NormStats s;
  for (const auto& jv : j.at("variables")) {
    VariableSpec v{jv.at("name").get<std::string>(), std::nullopt};
    if (jv.contains("level")) v.level = jv.at("level").get<double>();
    s.variables.push_back(v);
  }
  s.mean = j.at("mean").get<std::vector<double>>();
  s.std = j.at("std").get<std::vector<double>>();
  s.scalar_names = j.at("scalar_names").get<std::vector<std::string>>();
  s.scalar_mean = j.at("scalar_mean").get<std::vector<double>>();
  s.scalar_std = j.at("scalar_std").get<std::vector<double>>();
  s.spatial_names = j.at("spatial_names").get<std::vector<std::string>>();
  s.spatial_mean = j.at("spatial_mean").get<std::vector<double>>();
  s.spatial_std = j.at("spatial_std").get<std::vector<double>>();
  return s;
}

}  // namespace

void write_params(const std::vector<EmulatorParams>& ensemble,
                  const std::optional<FlowParams>& flow,
                  const std::filesystem::path& path) {
  if (ensemble.empty()) throw std::invalid_argument("cannot write an empty ensemble");
  const EmulatorParams& p0 = ensemble[0];
  Container c;
  c.header["kind"] = "emulator";
  c.header["n_models"] = ensemble.size();
  c.header["has_flow"] = flow.has_value();
  c.header["n_lat"] = p0.n_lat;
  c.header["n_lon"] = p0.n_lon;
  c.header["width"] = p0.width;
  c.header["horizons"] = p0.horizons;
  c.header["spatial_forcings"] = p0.spatial_forcings;
  c.header["scalar_forcings"] = p0.scalar_forcings;
  c.header["stats"] = stats_to_json(p0.stats);
  if (flow) c.header["flow_width"] = flow->width;

  nlohmann::json sections = nlohmann::json::array();
  for (std::size_t m = 0; m < ensemble.size(); ++m) {
    const auto ts = ensemble[m].tensors();
    for (std::size_t k = 0; k < ts.size(); ++k) {
      sections.push_back(
          tensor_meta("model" + std::to_string(m) + ":" + kDetTensorNames[k], *ts[k]));
      c.arrays.push_back(ts[k]->v);
    }
  }
  if (flow) {
    const auto ts = flow->tensors();
    for (std::size_t k = 0; k < ts.size(); ++k) {
      sections.push_back(tensor_meta("flow:" + kFlowTensorNames[k], *ts[k]));
      c.arrays.push_back(ts[k]->v);
    }
  }
  c.header["sections"] = sections;
  write_container(c, path);
}

LoadedParams read_params(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (!c.header.contains("kind") || c.header.at("kind") != "emulator")
    throw FormatError("not an emulator parameter file", 0);
  LoadedParams lp;
  const std::size_t n_models = c.header.at("n_models").get<std::size_t>();
  const NormStats stats = stats_from_json(c.header.at("stats"));

  std::size_t sec = 0;
  const auto next_tensor = [&](Tensor& t) {
    const auto& shape = c.header.at("sections").at(sec).at("shape");
    t = Tensor(shape.at(0).get<std::size_t>(), shape.at(1).get<std::size_t>());
    t.v = c.arrays.at(sec);
    ++sec;
  };

  for (std::size_t m = 0; m < n_models; ++m) {
    EmulatorParams p;
    p.n_lat = c.header.at("n_lat").get<std::size_t>();
    p.n_lon = c.header.at("n_lon").get<std::size_t>();
    p.variables = stats.variables;
    p.spatial_forcings = c.header.at("spatial_forcings").get<std::vector<std::string>>();
    p.scalar_forcings = c.header.at("scalar_forcings").get<std::vector<std::string>>();
    p.horizons = c.header.at("horizons").get<std::vector<std::size_t>>();
    p.width = c.header.at("width").get<std::size_t>();
    p.stats = stats;
    for (Tensor* t : p.tensors()) next_tensor(*t);
    lp.ensemble.push_back(std::move(p));
  }
  if (c.header.at("has_flow").get<bool>()) {
    FlowParams f;
    f.width = c.header.at("flow_width").get<std::size_t>();
    for (Tensor* t : f.tensors()) next_tensor(*t);
    lp.flow = f;
  }
  return lp;
}

}  // namespace climemu
