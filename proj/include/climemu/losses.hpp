#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace climemu {

struct SpectralConfig {
  double epsilon = 1e-8;          // PSD log stabilizer
  double eta = 1e-10;             // magnitude sqrt stabilizer
  double lambda_complex = 0.1;    // weight of the complex-distance term
  std::size_t ramp_start = 10000; // lambda_spec ramp, in optimizer steps
  std::size_t ramp_end = 15000;
  double peak = 40.0;
  double tau0 = 0.8;              // flow-time threshold for the time weight

  void validate() const;
};

/// Mean of squared differences over all elements. Shape mismatch throws.
double mse_loss(std::span<const double> predicted, std::span<const double> target);

/// Full 2-D DFT of a real field, row-major [n_lat][n_lon].
std::vector<std::complex<double>> dft2(std::span<const double> x, std::size_t n_lat,
                                       std::size_t n_lon);

/// MSE of log power spectra: MSE(log(|F(yhat)|^2 + eps), log(|F(y)|^2 + eps)).
double psd_loss(std::span<const double> y_hat, std::span<const double> y,
                std::size_t n_lat, std::size_t n_lon, double epsilon = 1e-8);

/// MSE of spectral amplitudes sqrt(Re^2 + Im^2 + eta).
double magnitude_loss(std::span<const double> y_hat, std::span<const double> y,
                      std::size_t n_lat, std::size_t n_lon, double eta = 1e-10);

/// Training spectral loss on the real-valued half spectrum, each independent
/// coefficient counted once:
///   E|log(1+|F_r(yhat)|) - log(1+|F_r(y)|)|^2
///   + lambda_complex * E|F_r(yhat) - F_r(y)|^2.
double spectral_total_loss(std::span<const double> y_hat, std::span<const double> y,
                           std::size_t n_lat, std::size_t n_lon,
                           const SpectralConfig& cfg);

/// Same value, also accumulating d(loss)/d(y_hat) into grad (size n_lat*n_lon)
/// scaled by grad_scale.
double spectral_total_loss_grad(std::span<const double> y_hat, std::span<const double> y,
                                std::size_t n_lat, std::size_t n_lon,
                                const SpectralConfig& cfg, double grad_scale,
                                std::span<double> grad);

/// Spectral-loss weight schedule: 0 before the ramp, linear to the peak over
/// [ramp_start, ramp_end], constant after.
double lambda_spec_at(std::size_t step, const SpectralConfig& cfg);

/// Flow-time gate: 0 for tau < tau0, 1 for tau >= tau0.
double time_weight(double tau, const SpectralConfig& cfg);

}  // namespace climemu
