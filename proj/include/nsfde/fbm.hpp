#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>

#include "nsfde/errors.hpp"
#include "nsfde/quadrature.hpp"
#include "nsfde/random.hpp"
#include "nsfde/time_grid.hpp"

namespace nsfde {

// Hurst index of a fractional Brownian motion.  Any value in (0,1) describes
// a valid Gaussian law; the pathwise (Young) stochastic calculus used by the
// model layer additionally needs H > 1/2, which callers query via
// young_regime().
struct HurstParameter {
  explicit HurstParameter(double v) : value(v) {
    if (!(v > 0.0 && v < 1.0))
      throw std::domain_error("Hurst parameter must lie in (0,1), got " +
                              std::to_string(v));
  }
  double value;

  bool young_regime() const { return value > 0.5; }

  void require_young(const char* who) const {
    if (!young_regime())
      throw std::domain_error(std::string(who) +
                              " requires a Hurst parameter in (1/2,1), got " +
                              std::to_string(value));
  }
};

// R_H(s,t) = 1/2 (t^{2H} + s^{2H} - |t-s|^{2H}), the fBm covariance.
inline double fbm_covariance(HurstParameter h, double s, double t) {
  if (s < 0.0 || t < 0.0)
    throw std::domain_error("fbm_covariance: times must be nonnegative");
  const double e = 2.0 * h.value;
  return 0.5 * (std::pow(t, e) + std::pow(s, e) - std::pow(std::abs(t - s), e));
}

// Gram matrix of (beta^H(t_1), ..., beta^H(t_K)); t_0 = 0 is excluded since
// the process starts at zero with probability one.
inline Eigen::MatrixXd fbm_covariance_matrix(HurstParameter h, const TimeGrid& grid) {
  const int K = grid.steps();
  Eigen::MatrixXd R(K, K);
  for (int i = 0; i < K; ++i)
    for (int j = 0; j <= i; ++j) {
      const double v = fbm_covariance(h, grid.point(i + 1), grid.point(j + 1));
      R(i, j) = v;
      R(j, i) = v;
    }
  return R;
}

inline double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// Normalizing constant of the Volterra kernel:
//   c_H = sqrt( H (2H-1) / Beta(2-2H, H-1/2) ),  1/2 < H < 1.
inline double fbm_kernel_scale(HurstParameter h) {
  h.require_young("fbm_kernel_scale");
  const double H = h.value;
  return std::sqrt(H * (2.0 * H - 1.0) /
                   std::exp(log_beta(2.0 - 2.0 * H, H - 0.5)));
}

// Volterra kernel of the moving-average representation
//
//   beta^H(t) = int_0^t K_H(t,s) dW(s),
//   K_H(t,s)  = c_H s^{1/2-H} int_s^t (u-s)^{H-3/2} u^{H-1/2} du,  s < t,
//
// with K_H(t,s) = 0 for t <= s.  The integrand blows up at u = s, so we
// substitute u = s + v^2 (du = 2v dv, v up to V = sqrt(t-s)):
//
//   int_s^t ... du = 2 int_0^V v^{2H-2} (s+v^2)^{H-1/2} dv.
//
// The remaining v^{2H-2} singularity is absorbed in closed form by splitting
// off its coefficient at v = 0:
//
//   = 2 s^{H-1/2} V^{2H-1} / (2H-1)
//     + 2 int_0^V v^{2H-2} [ (s+v^2)^{H-1/2} - s^{H-1/2} ] dv,
//
// where the residual integrand vanishes like v^{2H} at 0 and adaptive
// quadrature converges to full accuracy.
inline double fbm_kernel(HurstParameter h, double t, double s,
                         double quad_tol = 1e-10) {
  h.require_young("fbm_kernel");
  if (t <= s) return 0.0;
  if (!(s > 0.0))
    throw std::domain_error("fbm_kernel: requires 0 < s (kernel has an s^{1/2-H} factor)");
  const double H = h.value;
  const double p = H - 0.5;
  const double V = std::sqrt(t - s);
  const double sp = std::pow(s, p);
  const double closed = 2.0 * sp * std::pow(V, 2.0 * H - 1.0) / (2.0 * H - 1.0);
  const auto residual = [&](double v) {
    if (v == 0.0) return 0.0;
    return std::pow(v, 2.0 * H - 2.0) * (std::pow(s + v * v, p) - sp);
  };
  const double rest = 2.0 * adaptive_simpson(residual, 0.0, V, quad_tol);
  return fbm_kernel_scale(h) * std::pow(s, -p) * (closed + rest);
}

// One sampled path on a grid, starting at zero.
struct FbmPath {
  TimeGrid grid;
  Eigen::VectorXd values;  // size grid.size(), values[0] == 0
  double hurst;
  std::uint64_t seed;

  double value_at_index(int k) const { return values(k); }
  double increment(int k) const { return values(k + 1) - values(k); }  // k = 0..K-1
};

// Exact-on-the-grid Gaussian sampler: Cholesky factor of the covariance
// Gram matrix, driven by a deterministic per-(seed, path, mode) normal
// substream.  Valid for every H in (0,1).
class FbmSampler {
 public:
  FbmSampler(HurstParameter h, TimeGrid grid)
      : hurst_(h), grid_(std::move(grid)) {
    Eigen::MatrixXd R = fbm_covariance_matrix(hurst_, grid_);
    Eigen::LLT<Eigen::MatrixXd> llt(R);
    if (llt.info() != Eigen::Success) {
      // One retry with a recorded diagonal jitter, capped at 1e-12 x the
      // largest diagonal entry; anything worse is a real PSD failure.
      jitter_ = 1e-12 * R.diagonal().maxCoeff();
      R.diagonal().array() += jitter_;
      llt.compute(R);
      if (llt.info() != Eigen::Success)
        throw FactorizationError(
            "fBm covariance is not numerically positive definite even after "
            "jitter " + std::to_string(jitter_));
    }
    chol_ = llt.matrixL();
  }

  FbmPath draw(std::uint64_t seed, std::uint64_t path_index = 0,
               std::uint64_t mode_index = 0) const {
    GaussianStream gs(substream(seed, path_index, mode_index, kStreamTag));
    const int K = grid_.steps();
    Eigen::VectorXd z(K);
    for (int i = 0; i < K; ++i) z(i) = gs.next();
    FbmPath path{grid_, Eigen::VectorXd::Zero(K + 1), hurst_.value, seed};
    path.values.tail(K) = chol_.triangularView<Eigen::Lower>() * z;
    return path;
  }

  const TimeGrid& grid() const { return grid_; }
  HurstParameter hurst() const { return hurst_; }
  double jitter() const { return jitter_; }
  const Eigen::MatrixXd& cholesky_factor() const { return chol_; }

 private:
  static constexpr std::uint64_t kStreamTag = 0xfb01;

  HurstParameter hurst_;
  TimeGrid grid_;
  Eigen::MatrixXd chol_;
  double jitter_ = 0.0;
};

// Moving-average sampler: discretizes beta^H(t_k) = int_0^{t_k} K_H(t_k,s) dW(s)
// with the kernel frozen at subinterval midpoints and i.i.d. Brownian
// increments.  Only consistent (and only defined) for H > 1/2; used to
// cross-validate the Cholesky sampler against an independent construction.
class KernelRepresentation {
 public:
  KernelRepresentation(HurstParameter h, TimeGrid grid, double quad_tol = 1e-10)
      : hurst_(h), grid_(std::move(grid)) {
    h.require_young("KernelRepresentation");
    const int K = grid_.steps();
    weights_ = Eigen::MatrixXd::Zero(K, K);
    for (int k = 1; k <= K; ++k)
      for (int j = 0; j < k; ++j) {
        const double mid = 0.5 * (grid_.point(j) + grid_.point(j + 1));
        weights_(k - 1, j) = fbm_kernel(hurst_, grid_.point(k), mid, quad_tol);
      }
  }

  // Path from given Brownian increments dW_j over [t_j, t_{j+1}] (linearity
  // in the driver is part of the contract and is tested as such).
  FbmPath from_increments(const Eigen::VectorXd& dw) const {
    if (dw.size() != grid_.steps())
      throw std::invalid_argument("KernelRepresentation: increment count mismatch");
    const int K = grid_.steps();
    FbmPath path{grid_, Eigen::VectorXd::Zero(K + 1), hurst_.value, 0};
    path.values.tail(K) = weights_.triangularView<Eigen::Lower>() * dw;
    return path;
  }

  FbmPath draw(std::uint64_t seed, std::uint64_t path_index = 0) const {
    GaussianStream gs(substream(seed, path_index, 0, kStreamTag));
    const int K = grid_.steps();
    Eigen::VectorXd dw(K);
    for (int j = 0; j < K; ++j) dw(j) = std::sqrt(grid_.step(j + 1)) * gs.next();
    FbmPath path = from_increments(dw);
    path.seed = seed;
    return path;
  }

  const Eigen::MatrixXd& kernel_matrix() const { return weights_; }
  const TimeGrid& grid() const { return grid_; }

 private:
  static constexpr std::uint64_t kStreamTag = 0xfb02;

  HurstParameter hurst_;
  TimeGrid grid_;
  Eigen::MatrixXd weights_;
};

}  // namespace nsfde
