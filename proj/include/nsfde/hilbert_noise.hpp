#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <utility>

#include "nsfde/evolution.hpp"
#include "nsfde/fbm.hpp"
#include "nsfde/spectral.hpp"
#include "nsfde/time_grid.hpp"

namespace nsfde {

// Trace-class covariance operator Q e_n = lambda_n e_n of the driving noise,
// stored by its eigenvalue sequence on the sine basis.
class CovarianceOperator {
 public:
  explicit CovarianceOperator(Eigen::VectorXd eigenvalues)
      : lambda_(std::move(eigenvalues)) {
    if (lambda_.size() < 1)
      throw std::domain_error("CovarianceOperator: need at least one mode");
    for (int n = 0; n < lambda_.size(); ++n)
      if (!(lambda_(n) >= 0.0) || !std::isfinite(lambda_(n)))
        throw std::domain_error("CovarianceOperator: eigenvalues must be finite and >= 0");
  }

  // lambda_n = scale * n^{-p}.  p > 1 keeps the full (untruncated) sequence
  // summable; slower decay is rejected because the operator it truncates
  // would not be trace class.
  static CovarianceOperator power(int n_modes, double p, double scale = 1.0) {
    if (!(p > 1.0))
      throw std::domain_error(
          "CovarianceOperator: eigenvalue decay n^{-p} needs p > 1 to be trace class");
    if (!(scale > 0.0))
      throw std::domain_error("CovarianceOperator: scale must be positive");
    Eigen::VectorXd lam(n_modes);
    for (int n = 0; n < n_modes; ++n)
      lam(n) = scale * std::pow(static_cast<double>(n + 1), -p);
    return CovarianceOperator(std::move(lam));
  }

  int modes() const { return static_cast<int>(lambda_.size()); }
  double eigenvalue(int n) const { return lambda_(n); }
  const Eigen::VectorXd& eigenvalues() const { return lambda_; }
  double trace() const { return lambda_.sum(); }

 private:
  Eigen::VectorXd lambda_;
};

// Hilbert-Schmidt norm of a diagonal noise coefficient against Q^{1/2}:
// ||sigma||^2 = sum_n lambda_n sigma_n^2.
inline double hs_norm(const Eigen::VectorXd& sigma_modes, const CovarianceOperator& q) {
  if (sigma_modes.size() != q.modes())
    throw std::invalid_argument("hs_norm: mode count mismatch");
  double acc = 0.0;
  for (int n = 0; n < q.modes(); ++n)
    acc += q.eigenvalue(n) * sigma_modes(n) * sigma_modes(n);
  return std::sqrt(acc);
}

// Q-fractional Brownian motion B^H(t) = sum_n sqrt(lambda_n) e_n beta_n^H(t)
// sampled on a grid: values(k, n) already carries the sqrt(lambda_n) factor.
struct QfbmPath {
  TimeGrid grid;
  Eigen::MatrixXd values;  // (K+1) x N, row 0 is zero
  double hurst;
  std::uint64_t seed;

  int modes() const { return static_cast<int>(values.cols()); }

  // Increment of mode n over [t_k, t_{k+1}].
  double increment(int k, int n) const { return values(k + 1, n) - values(k, n); }

  // Restriction to every stride-th grid point.  Coarse increments are exact
  // sums of fine ones, which is what grid-refinement comparisons need.
  QfbmPath restricted(int stride) const {
    TimeGrid coarse = grid.coarsened(stride);
    Eigen::MatrixXd v(coarse.size(), values.cols());
    for (int k = 0; k < static_cast<int>(coarse.size()); ++k)
      v.row(k) = values.row(k * stride);
    return QfbmPath{std::move(coarse), std::move(v), hurst, seed};
  }
};

// Draw one Q-fBm path; the scalar sampler is shared across modes (same grid,
// same H) with per-mode substreams, so it should be built once per batch.
inline QfbmPath sample_qfbm(const FbmSampler& sampler, const CovarianceOperator& q,
                            std::uint64_t seed, std::uint64_t path_index = 0) {
  const int K = sampler.grid().steps();
  Eigen::MatrixXd values(K + 1, q.modes());
  for (int n = 0; n < q.modes(); ++n) {
    const FbmPath mode = sampler.draw(seed, path_index, static_cast<std::uint64_t>(n) + 1);
    values.col(n) = std::sqrt(q.eigenvalue(n)) * mode.values;
  }
  return QfbmPath{sampler.grid(), std::move(values), sampler.hurst().value, seed};
}

inline QfbmPath sample_qfbm(const CovarianceOperator& q, HurstParameter h,
                            const TimeGrid& grid, std::uint64_t seed,
                            std::uint64_t path_index = 0) {
  return sample_qfbm(FbmSampler(h, grid), q, seed, path_index);
}

// Diagonal noise coefficient sigma(t) acting mode-wise, with its recorded
// uniform Hilbert-Schmidt bound sup_t ||sigma(t)||_{Q} <= hs_bound.
struct NoiseCoefficient {
  std::function<Eigen::VectorXd(double)> modes;  // sigma_n(t), n = 1..n_modes
  int n_modes = 0;
  double hs_bound = 0.0;

  bool zero() const { return !modes; }

  static NoiseCoefficient none() { return NoiseCoefficient{}; }

  Eigen::VectorXd at(double t) const {
    Eigen::VectorXd s = modes(t);
    if (s.size() != n_modes)
      throw std::invalid_argument("NoiseCoefficient: mode count mismatch");
    return s;
  }
};

// Left-point (Young) stochastic sum int_a^b sigma(s) dB^H(s) along the
// path's grid.  Endpoints must be grid points; the left-point rule is the
// one whose Riemann sums converge for H > 1/2.
inline SpectralField wiener_integral(const NoiseCoefficient& sigma,
                                     const QfbmPath& path, double a, double b) {
  HurstParameter(path.hurst).require_young("wiener_integral");
  if (sigma.n_modes != path.modes())
    throw std::invalid_argument("wiener_integral: sigma/path mode count mismatch");
  const int ja = path.grid.index_at(a);
  const int jb = path.grid.index_at(b);
  if (ja > jb) throw std::invalid_argument("wiener_integral: needs a <= b");
  SpectralField acc = SpectralField::Zero(path.modes());
  for (int j = ja; j < jb; ++j) {
    const Eigen::VectorXd s = sigma.at(path.grid.point(j));
    for (int n = 0; n < path.modes(); ++n) acc(n) += s(n) * path.increment(j, n);
  }
  return acc;
}

inline SpectralField wiener_integral(const NoiseCoefficient& sigma,
                                     const QfbmPath& path, double t) {
  return wiener_integral(sigma, path, 0.0, t);
}

// int_0^t U(t,s) sigma(s) dB^H(s), left-point rule on the path's grid.
// The generic overload takes any propagator (t, s, v) -> U(t,s) v; the
// evolution-family overload is the model case.
using Propagator = std::function<SpectralField(double, double, const SpectralField&)>;

inline SpectralField stochastic_convolution(const Propagator& u,
                                            const NoiseCoefficient& sigma,
                                            const QfbmPath& path, double t) {
  HurstParameter(path.hurst).require_young("stochastic_convolution");
  if (sigma.n_modes != path.modes())
    throw std::invalid_argument("stochastic_convolution: sigma/path mode count mismatch");
  const int kt = path.grid.index_at(t);
  SpectralField acc = SpectralField::Zero(path.modes());
  for (int j = 0; j < kt; ++j) {
    const double sj = path.grid.point(j);
    Eigen::VectorXd v = sigma.at(sj);
    for (int n = 0; n < path.modes(); ++n) v(n) *= path.increment(j, n);
    acc += u(t, sj, v);
  }
  return acc;
}

inline SpectralField stochastic_convolution(const EvolutionFamily& fam,
                                            const NoiseCoefficient& sigma,
                                            const QfbmPath& path, double t) {
  return stochastic_convolution(
      [&fam](double tt, double ss, const SpectralField& v) {
        return evolution_apply(fam, tt, ss, v);
      },
      sigma, path, t);
}

}  // namespace nsfde
