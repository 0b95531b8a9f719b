#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "climemu/dataio.hpp"
#include "climemu/losses.hpp"
#include "climemu/rng.hpp"

namespace climemu {

struct Tensor {
  std::size_t rows = 0, cols = 1;
  std::vector<double> v;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
  std::size_t size() const { return v.size(); }
};

struct TrainConfig {
  double keep_prob = 0.8;                      // forcing-dropout lambda
  std::vector<std::size_t> horizons{1, 6, 12}; // H, ascending
  std::size_t width = 256;
  std::size_t flow_width = 0;  // 0: match the state size (full-rank noise transport)
  double det_lr = 3e-4;
  double flow_lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.98;
  double weight_decay = 0.02;
  std::size_t warmup_steps = 5000;
  std::size_t total_steps = 20000;
  std::size_t batch_size = 8;
  std::size_t n_det_models = 4;
  bool mask_jointly = true;  // all-or-nothing vs per-forcing masking
  SpectralConfig spectral;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Cosine schedule with linear warmup: 0 at step 0, peak at warmup, 0 at total.
double lr_at(std::size_t step, double peak, std::size_t warmup, std::size_t total);

/// Deterministic mean model: input projection -> conditional layer norm
/// (gain/bias affine in the scalar-forcing vector) -> additive horizon
/// embedding -> tanh -> hidden layer -> tanh -> residual output head.
/// At initialization the output head is zero, so the model is exactly the
/// persistence forecast.
struct EmulatorParams {
  // Shape metadata.
  std::size_t n_lat = 0, n_lon = 0;
  std::vector<VariableSpec> variables;
  std::vector<std::string> spatial_forcings;  // labels, order fixed
  std::vector<std::string> scalar_forcings;
  std::vector<std::size_t> horizons;
  std::size_t width = 0;
  NormStats stats;

  Tensor w_in, b_in;        // width x input_dim, width
  Tensor cln_gain, cln_bias; // width x n_scalar each
  Tensor horizon_emb;       // n_horizons x width
  Tensor w_h, b_h;          // width x width, width
  Tensor w_out, b_out;      // state_dim x width, state_dim

  std::size_t n_cells() const { return n_lat * n_lon; }
  std::size_t n_state() const { return variables.size() * n_cells(); }
  std::size_t input_dim() const {
    return (2 * variables.size() + spatial_forcings.size()) * n_cells();
  }
  std::size_t horizon_index(std::size_t h) const;

  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
};

/// Flow-matching velocity head: plain two-layer tanh MLP on
/// [noised residual, previous+current state, scalar forcings, tau].
struct FlowParams {
  std::size_t width = 0;
  Tensor w_in, b_in, w_h, b_h, w_out, b_out;
  // Per-dimension linear bypass in the noised residual, quadratic in tau:
  // v_i += (g(i,0) + g(i,1) tau + g(i,2) tau^2) r_tau_i. Residual scales span
  // orders of magnitude across state dimensions, and the optimal transport is
  // close to a per-dimension linear contraction; the shared MLP alone cannot
  // represent that sharply enough for stable long rollouts.
  Tensor g_lin;

  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
};

/// One sampled training item: indices into a dataset plus the joint
/// forcing-mask decision.
struct TrainingItem {
  const ScenarioDataset* dataset = nullptr;
  std::size_t member = 0;
  std::size_t t = 0;        // current month (inputs are t-1 and t)
  std::size_t horizon = 0;  // target month is t + horizon
  bool forcings_masked = false;              // joint masking
  std::vector<std::uint8_t> spatial_masked;  // per-forcing, when not joint
  std::vector<std::uint8_t> scalar_masked;
};

/// Normalized views of one item, as the network consumes them.
struct NormalizedItem {
  std::vector<double> input;     // [x_{t-1}, x_t, spatial forcings], normalized
  std::vector<double> scalar_f;  // normalized scalar forcings (zero if masked)
  std::size_t h_index = 0;
  std::vector<double> target;    // normalized x_{t+h}
};

EmulatorParams init_params(const ScenarioDataset& shape_source, const NormStats& stats,
                           const TrainConfig& cfg, Rng& rng);
/// width 0: use the state size, so the velocity field has full rank and can
/// contract the initial noise in every direction of residual space.
FlowParams init_flow_params(const EmulatorParams& det, Rng& rng, std::size_t width = 0);

/// h uniform over H; one Bernoulli(keep_prob) draw per item masks all
/// forcing inputs jointly when it fails (or per forcing when mask_jointly
/// is off). Throws if the series is shorter than max(H) + 2.
TrainingItem sample_training_item(const ScenarioDataset& dataset, const TrainConfig& cfg,
                                  Rng& rng);

NormalizedItem normalize_item(const EmulatorParams& params, const TrainingItem& item);

/// Forward pass in normalized space; returns predicted normalized x_{t+h}.
std::vector<double> forward_deterministic_normalized(const EmulatorParams& params,
                                                     const NormalizedItem& item);

/// Raw-space contract: takes un-normalized states and forcings at month t,
/// returns the predicted mean state at t + h. Throws on h not in H.
StateTensor forward_deterministic(const EmulatorParams& params, const StateTensor& x_prev,
                                  const StateTensor& x_curr, const ForcingSet& forcings,
                                  std::size_t month, std::size_t h);

/// Velocity of the flow head at interpolant r_tau (normalized residual space).
std::vector<double> flow_velocity(const EmulatorParams& det, const FlowParams& flow,
                                  const std::vector<double>& r_tau, double tau,
                                  const NormalizedItem& item);

struct Checkpoint {
  std::size_t step = 0;
  EmulatorParams params;
};

struct TrainLogEntry {
  std::size_t step;
  double lr;
  double loss;
  double loss_mse;       // velocity MSE during the generative phase
  double loss_spectral;  // weighted spectral part (0 in deterministic phase)
};

struct TrainResult {
  EmulatorParams params;
  std::vector<Checkpoint> checkpoints;  // every 5% of total steps
  std::vector<TrainLogEntry> history;
};

TrainResult train_deterministic(const std::vector<const ScenarioDataset*>& datasets,
                                const NormStats& stats, const TrainConfig& cfg,
                                std::uint64_t seed);

struct FlowTrainResult {
  FlowParams params;
  std::vector<TrainLogEntry> history;
};

/// Conditional flow matching on the residual against the ensemble-mean
/// deterministic prediction (h = 1), Eq-style velocity MSE plus the ramped,
/// time-gated spectral loss on the reconstructed state.
FlowTrainResult train_generative(const std::vector<EmulatorParams>& det_ensemble,
                                 const std::vector<const ScenarioDataset*>& datasets,
                                 const TrainConfig& cfg);

enum class GradCheckLoss { Deterministic, FlowVelocity, Spectral };

/// Analytic vs central finite-difference gradients over every parameter.
/// Returns the max relative error.
double gradient_check(const EmulatorParams& params, const FlowParams& flow,
                      const TrainingItem& item, GradCheckLoss which,
                      double fd_step = 1e-4);

void write_params(const std::vector<EmulatorParams>& ensemble,
                  const std::optional<FlowParams>& flow,
                  const std::filesystem::path& path);
struct LoadedParams {
  std::vector<EmulatorParams> ensemble;
  std::optional<FlowParams> flow;
};
LoadedParams read_params(const std::filesystem::path& path);

}  // namespace climemu
