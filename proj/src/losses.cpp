#include "climemu/losses.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace climemu {

void SpectralConfig::validate() const {
  if (!(epsilon > 0.0 && eta > 0.0))
    throw std::invalid_argument("spectral config: epsilon, eta must be > 0");
  if (!(ramp_start < ramp_end))
    throw std::invalid_argument("spectral config: ramp start must precede end");
  if (peak < 0.0) throw std::invalid_argument("spectral config: peak must be >= 0");
}

double mse_loss(std::span<const double> predicted, std::span<const double> target) {
  if (predicted.size() != target.size())
    throw std::invalid_argument("mse_loss: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double d = predicted[i] - target[i];
    acc += d * d;
  }
  return acc / double(predicted.size());
}

namespace {

using cplx = std::complex<double>;

// Precomputed twiddle table e^{-2 pi i k n / N}, row-major [k][n].
std::vector<cplx> twiddles(std::size_t n) {
  std::vector<cplx> w(n * n);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t j = 0; j < n; ++j) {
      const double a = -2.0 * std::numbers::pi * double(k * j % n) / double(n);
      w[k * n + j] = {std::cos(a), std::sin(a)};
    }
  return w;
}

void check_shapes(std::size_t a, std::size_t b, std::size_t n_lat, std::size_t n_lon) {
  if (a != b || a != n_lat * n_lon)
    throw std::invalid_argument("spectral loss: shape mismatch");
}

}  // namespace

std::vector<cplx> dft2(std::span<const double> x, std::size_t n_lat, std::size_t n_lon) {
  const auto w_lon = twiddles(n_lon);
  const auto w_lat = twiddles(n_lat);
  // Rows first (longitude axis), then columns.
  std::vector<cplx> rows(n_lat * n_lon);
  for (std::size_t i = 0; i < n_lat; ++i)
    for (std::size_t v = 0; v < n_lon; ++v) {
      cplx acc = 0.0;
      for (std::size_t j = 0; j < n_lon; ++j) acc += x[i * n_lon + j] * w_lon[v * n_lon + j];
      rows[i * n_lon + v] = acc;
    }
  std::vector<cplx> out(n_lat * n_lon);
  for (std::size_t u = 0; u < n_lat; ++u)
    for (std::size_t v = 0; v < n_lon; ++v) {
      cplx acc = 0.0;
      for (std::size_t i = 0; i < n_lat; ++i) acc += rows[i * n_lon + v] * w_lat[u * n_lat + i];
      out[u * n_lon + v] = acc;
    }
  return out;
}

double psd_loss(std::span<const double> y_hat, std::span<const double> y,
                std::size_t n_lat, std::size_t n_lon, double epsilon) {
  check_shapes(y_hat.size(), y.size(), n_lat, n_lon);
  const auto fh = dft2(y_hat, n_lat, n_lon);
  const auto fy = dft2(y, n_lat, n_lon);
  double acc = 0.0;
  for (std::size_t k = 0; k < fh.size(); ++k) {
    const double d = std::log(std::norm(fh[k]) + epsilon) -
                     std::log(std::norm(fy[k]) + epsilon);
    acc += d * d;
  }
  return acc / double(fh.size());
}

double magnitude_loss(std::span<const double> y_hat, std::span<const double> y,
                      std::size_t n_lat, std::size_t n_lon, double eta) {
  check_shapes(y_hat.size(), y.size(), n_lat, n_lon);
  const auto fh = dft2(y_hat, n_lat, n_lon);
  const auto fy = dft2(y, n_lat, n_lon);
  double acc = 0.0;
  for (std::size_t k = 0; k < fh.size(); ++k) {
    const double d = std::sqrt(std::norm(fh[k]) + eta) - std::sqrt(std::norm(fy[k]) + eta);
    acc += d * d;
  }
  return acc / double(fh.size());
}

namespace {

// Independent coefficients of the real-input half spectrum: columns
// v = 0..n_lon/2; in the self-conjugate columns (v = 0 and, for even n_lon,
// v = n_lon/2) only rows u <= n_lat/2 are independent.
struct HalfSpectrumMask {
  std::vector<std::pair<std::size_t, std::size_t>> coords;  // (u, v)
  explicit HalfSpectrumMask(std::size_t n_lat, std::size_t n_lon) {
    const std::size_t v_max = n_lon / 2;
    for (std::size_t v = 0; v <= v_max; ++v) {
      const bool self_conj = v == 0 || (n_lon % 2 == 0 && v == v_max);
      const std::size_t u_max = self_conj ? n_lat / 2 : n_lat - 1;
      for (std::size_t u = 0; u <= u_max; ++u) coords.emplace_back(u, v);
    }
  }
};

}  // namespace

double spectral_total_loss(std::span<const double> y_hat, std::span<const double> y,
                           std::size_t n_lat, std::size_t n_lon,
                           const SpectralConfig& cfg) {
  check_shapes(y_hat.size(), y.size(), n_lat, n_lon);
  const auto fh = dft2(y_hat, n_lat, n_lon);
  const auto fy = dft2(y, n_lat, n_lon);
  const HalfSpectrumMask mask(n_lat, n_lon);
  double log_mag = 0.0, complex_dist = 0.0;
  for (const auto& [u, v] : mask.coords) {
    const cplx a = fh[u * n_lon + v], b = fy[u * n_lon + v];
    const double d = std::log(1.0 + std::abs(a)) - std::log(1.0 + std::abs(b));
    log_mag += d * d;
    complex_dist += std::norm(a - b);
  }
  const double n = double(mask.coords.size());
  return log_mag / n + cfg.lambda_complex * complex_dist / n;
}

double spectral_total_loss_grad(std::span<const double> y_hat, std::span<const double> y,
                                std::size_t n_lat, std::size_t n_lon,
                                const SpectralConfig& cfg, double grad_scale,
                                std::span<double> grad) {
  check_shapes(y_hat.size(), y.size(), n_lat, n_lon);
  if (grad.size() != y_hat.size())
    throw std::invalid_argument("spectral_total_loss_grad: grad shape mismatch");
  const auto fh = dft2(y_hat, n_lat, n_lon);
  const auto fy = dft2(y, n_lat, n_lon);
  const HalfSpectrumMask mask(n_lat, n_lon);
  const double n = double(mask.coords.size());

  // dL/dF(yhat) over the masked half spectrum, zero elsewhere.
  std::vector<cplx> g(n_lat * n_lon, 0.0);
  double log_mag = 0.0, complex_dist = 0.0;
  for (const auto& [u, v] : mask.coords) {
    const cplx a = fh[u * n_lon + v], b = fy[u * n_lon + v];
    const double mag = std::abs(a);
    const double d = std::log(1.0 + mag) - std::log(1.0 + std::abs(b));
    log_mag += d * d;
    complex_dist += std::norm(a - b);

    cplx gc = 2.0 / n * cfg.lambda_complex * (a - b);
    if (mag > 0.0) gc += 2.0 / n * d / (1.0 + mag) * (a / mag);
    g[u * n_lon + v] = gc;
  }

  // Adjoint of the forward DFT: grad[i,j] = Re(sum_{u,v} g[u,v] e^{+i theta}).
  const auto w_lon = twiddles(n_lon);
  const auto w_lat = twiddles(n_lat);
  std::vector<cplx> rows(n_lat * n_lon, 0.0);
  for (std::size_t u = 0; u < n_lat; ++u)
    for (std::size_t j = 0; j < n_lon; ++j) {
      cplx acc = 0.0;
      for (std::size_t v = 0; v <= n_lon / 2; ++v)
        acc += g[u * n_lon + v] * std::conj(w_lon[v * n_lon + j]);
      rows[u * n_lon + j] = acc;
    }
  for (std::size_t i = 0; i < n_lat; ++i)
    for (std::size_t j = 0; j < n_lon; ++j) {
      cplx acc = 0.0;
      for (std::size_t u = 0; u < n_lat; ++u)
        acc += rows[u * n_lon + j] * std::conj(w_lat[u * n_lat + i]);
      grad[i * n_lon + j] += grad_scale * acc.real();
    }

  return log_mag / n + cfg.lambda_complex * complex_dist / n;
}

double lambda_spec_at(std::size_t step, const SpectralConfig& cfg) {
  if (step <= cfg.ramp_start) return 0.0;
  if (step >= cfg.ramp_end) return cfg.peak;
  return cfg.peak * double(step - cfg.ramp_start) / double(cfg.ramp_end - cfg.ramp_start);
}

double time_weight(double tau, const SpectralConfig& cfg) {
  return tau >= cfg.tau0 ? 1.0 : 0.0;
}

}  // namespace climemu
