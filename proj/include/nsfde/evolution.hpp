#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "nsfde/quadrature.hpp"
#include "nsfde/spectral.hpp"
#include "nsfde/time_grid.hpp"

namespace nsfde {

// Reaction potential b(t, z) <= -gamma_pot < 0 entering the generator
// A(t) = d^2/dz^2 + b(t, .) on (0,pi) with Dirichlet conditions.  Two cases
// are supported: spatially constant b(t) (the family then acts diagonally on
// sine modes and all semigroup identities are exact) and a general nodal
// b(t, z) (acting through collocation projection on the truncated basis).
struct Potential {
  static Potential constant(std::function<double(double)> b, double gamma_pot) {
    Potential p;
    p.spatially_constant = true;
    p.time_profile = std::move(b);
    p.margin = gamma_pot;
    p.check_margin();
    return p;
  }

  static Potential constant_value(double b) {
    if (!(b < 0.0))
      throw std::domain_error("Potential: constant potential must be negative");
    return constant([b](double) { return b; }, -b);
  }

  static Potential nodal(std::function<double(double, double)> b, double gamma_pot) {
    Potential p;
    p.spatially_constant = false;
    p.space_time_profile = std::move(b);
    p.margin = gamma_pot;
    p.check_margin();
    return p;
  }

  double operator()(double t) const { return time_profile(t); }
  double operator()(double t, double z) const {
    return spatially_constant ? time_profile(t) : space_time_profile(t, z);
  }

  bool spatially_constant = true;
  std::function<double(double)> time_profile;
  std::function<double(double, double)> space_time_profile;
  double margin = 0.0;  // gamma_pot: declared uniform bound b <= -margin

 private:
  void check_margin() const {
    if (!(margin > 0.0))
      throw std::domain_error("Potential: dissipativity margin gamma_pot must be positive");
  }
};

// Heat semigroup of d^2/dz^2 on the truncated sine basis:
// (T(t)x)_n = e^{-n^2 t} x_n.
inline SpectralField semigroup_apply(double t, const SpectralField& x) {
  if (t < 0.0) throw std::domain_error("semigroup_apply: time must be nonnegative");
  SpectralField y(x.size());
  for (int n = 0; n < x.size(); ++n) {
    const double k = static_cast<double>(n + 1);
    y(n) = std::exp(-k * k * t) * x(n);
  }
  return y;
}

// A(t) = d^2/dz^2 + b(t, .) restricted to the first N sine modes.
class TimeVaryingGenerator {
 public:
  TimeVaryingGenerator(int n_modes, Potential pot)
      : basis_(n_modes), potential_(std::move(pot)) {}

  int modes() const { return basis_.modes(); }
  const Potential& potential() const { return potential_; }
  const SineBasis& basis() const { return basis_; }

  // Uniform bound on ||A(t)^{-1}||: the spectrum of -A(t) lies in
  // [1 + gamma_pot, infinity) for spatially constant potentials.
  double inverse_norm_bound() const { return 1.0 / (1.0 + potential_.margin); }

 private:
  SineBasis basis_;
  Potential potential_;
};

// A(s) x: diagonal -n^2 part plus the multiplication operator of b(s, .)
// (collocation-projected in the nodal case).
inline SpectralField generator_apply(const TimeVaryingGenerator& gen, double s,
                                     const SpectralField& x) {
  if (x.size() != gen.modes())
    throw std::invalid_argument("generator_apply: mode count mismatch");
  SpectralField y(x.size());
  if (gen.potential().spatially_constant) {
    const double b = gen.potential()(s);
    for (int n = 0; n < x.size(); ++n) {
      const double k = static_cast<double>(n + 1);
      y(n) = (-k * k + b) * x(n);
    }
    return y;
  }
  Eigen::VectorXd u = gen.basis().to_nodal(x);
  for (int j = 0; j < gen.basis().nodes(); ++j)
    u(j) *= gen.potential()(s, gen.basis().node(j));
  y = gen.basis().to_spectral(u);
  for (int n = 0; n < x.size(); ++n) {
    const double k = static_cast<double>(n + 1);
    y(n) += -k * k * x(n);
  }
  return y;
}

// Two-parameter evolution family generated by A(t):
//
//   U(t,s) x = T(t-s) [ exp( int_s^t b(tau, .) dtau ) x ],   t >= s,
//
// which inherits the uniform decay ||U(t,s)|| <= M e^{-beta (t-s)} with
// M = 1 and beta = gamma_pot + 1 (heat gap 1 plus the potential margin).
class EvolutionFamily {
 public:
  explicit EvolutionFamily(TimeVaryingGenerator gen, double decay_m = 0.0,
                           double decay_beta = 0.0)
      : gen_(std::move(gen)),
        m_(decay_m > 0.0 ? decay_m : 1.0),
        beta_(decay_beta > 0.0 ? decay_beta : gen_.potential().margin + 1.0) {
    if (m_ < 1.0)
      throw std::domain_error("EvolutionFamily: decay constant M must be >= 1");
    if (beta_ > gen_.potential().margin + 1.0 + 1e-12)
      throw std::domain_error(
          "EvolutionFamily: declared decay rate exceeds what the potential margin supports");
  }

  const TimeVaryingGenerator& generator() const { return gen_; }
  double decay_m() const { return m_; }
  double decay_beta() const { return beta_; }

  // int_s^t b(tau) dtau for the spatially constant case.
  double potential_integral(double s, double t, double tol = 1e-13) const {
    if (!gen_.potential().spatially_constant)
      throw std::invalid_argument(
          "potential_integral: scalar form needs a spatially constant potential");
    return adaptive_simpson([this](double u) { return gen_.potential()(u); }, s, t, tol);
  }

  // Per-node integrals for the nodal case.
  Eigen::VectorXd potential_integral_nodal(double s, double t, double tol = 1e-13) const {
    const SineBasis& basis = gen_.basis();
    Eigen::VectorXd out(basis.nodes());
    for (int j = 0; j < basis.nodes(); ++j) {
      const double z = basis.node(j);
      out(j) = adaptive_simpson(
          [this, z](double u) { return gen_.potential()(u, z); }, s, t, tol);
    }
    return out;
  }

 private:
  TimeVaryingGenerator gen_;
  double m_;
  double beta_;
};

inline SpectralField evolution_apply(const EvolutionFamily& fam, double t,
                                     double s, const SpectralField& x) {
  if (t < s) throw std::domain_error("evolution_apply: requires t >= s");
  if (x.size() != fam.generator().modes())
    throw std::invalid_argument("evolution_apply: mode count mismatch");
  if (fam.generator().potential().spatially_constant) {
    const double scale = std::exp(fam.potential_integral(s, t));
    return scale * semigroup_apply(t - s, x);
  }
  const SineBasis& basis = fam.generator().basis();
  const Eigen::VectorXd bi = fam.potential_integral_nodal(s, t);
  Eigen::VectorXd u = basis.to_nodal(x);
  for (int j = 0; j < basis.nodes(); ++j) u(j) *= std::exp(bi(j));
  return semigroup_apply(t - s, basis.to_spectral(u));
}

// Worst observed ratio ||U(t,s)x|| / (M e^{-beta(t-s)} ||x||) over a probe
// set; at most 1 (up to round-off) when the declared decay holds.
struct StabilityProbe {
  double t = 0.0, s = 0.0;
  SpectralField x;
};

inline double stability_margin(const EvolutionFamily& fam,
                               const std::vector<StabilityProbe>& probes) {
  double worst = 0.0;
  for (const auto& p : probes) {
    if (p.x.norm() == 0.0) continue;
    const double num = evolution_apply(fam, p.t, p.s, p.x).norm();
    const double den =
        fam.decay_m() * std::exp(-fam.decay_beta() * (p.t - p.s)) * p.x.norm();
    worst = std::max(worst, num / den);
  }
  return worst;
}

// Parabolic smoothing of the heat part: sup_{n <= N} n^2 e^{-n^2 dt} must
// stay below e^{-1}/dt.  Returns the achieved ratio (pass iff <= 1).
inline double smoothing_margin(const EvolutionFamily& fam, double dt) {
  if (!(dt > 0.0)) throw std::domain_error("smoothing_margin: dt must be positive");
  double sup = 0.0;
  for (int n = 1; n <= fam.generator().modes(); ++n) {
    const double k = static_cast<double>(n);
    sup = std::max(sup, k * k * std::exp(-k * k * dt));
  }
  return sup * dt * std::exp(1.0);
}

// Evolution factors cached on a time grid.  All quadrature-heavy work is
// done once at construction; accumulate() is the hot path of the solver and
// the controllability Gramian, so the uniform-grid constant-potential case
// uses a lag table of heat factors and cumulative potential integrals.
class EvolutionGrid {
 public:
  EvolutionGrid(const EvolutionFamily& fam, TimeGrid grid)
      : fam_(&fam), grid_(std::move(grid)), n_(fam.generator().modes()) {
    const int K = grid_.steps();
    const bool constant = fam.generator().potential().spatially_constant;
    fast_ = constant && grid_.uniform();
    if (constant) {
      pot_cum_.resize(K + 1);
      pot_exp_.resize(K + 1);
      pot_cum_[0] = 0.0;
      pot_exp_[0] = 1.0;
      for (int k = 1; k <= K; ++k) {
        pot_cum_[k] = pot_cum_[k - 1] +
                      fam.potential_integral(grid_.point(k - 1), grid_.point(k));
        pot_exp_[k] = std::exp(pot_cum_[k]);
      }
    } else {
      const int J = fam.generator().basis().nodes();
      pot_cum_nodal_.resize(K + 1, J);
      pot_cum_nodal_.row(0).setZero();
      for (int k = 1; k <= K; ++k)
        pot_cum_nodal_.row(k) =
            pot_cum_nodal_.row(k - 1) +
            fam.potential_integral_nodal(grid_.point(k - 1), grid_.point(k))
                .transpose();
    }
    if (fast_) {
      const double h = grid_.step(1);
      heat_lag_.resize(n_, K + 1);
      for (int n = 0; n < n_; ++n) {
        const double k2 = static_cast<double>((n + 1) * (n + 1));
        for (int d = 0; d <= K; ++d) heat_lag_(n, d) = std::exp(-k2 * h * d);
      }
    }
  }

  const TimeGrid& grid() const { return grid_; }
  const EvolutionFamily& family() const { return *fam_; }

  // acc += weight * U(t_k, t_j) v
  void accumulate(int k, int j, double weight, Eigen::Ref<const Eigen::VectorXd> v,
                  Eigen::Ref<Eigen::VectorXd> acc) const {
    check_pair(k, j, v);
    if (fast_) {
      const double scale = weight * pot_ratio(k, j);
      const int d = k - j;
      for (int n = 0; n < n_; ++n) acc(n) += scale * heat_lag_(n, d) * v(n);
      return;
    }
    acc += weight * apply(k, j, v);
  }

  Eigen::VectorXd apply(int k, int j, Eigen::Ref<const Eigen::VectorXd> v) const {
    check_pair(k, j, v);
    const double dt = grid_.point(k) - grid_.point(j);
    if (fam_->generator().potential().spatially_constant) {
      Eigen::VectorXd y(n_);
      const double scale = pot_ratio(k, j);
      if (fast_) {
        const int d = k - j;
        for (int n = 0; n < n_; ++n) y(n) = scale * heat_lag_(n, d) * v(n);
      } else {
        for (int n = 0; n < n_; ++n) {
          const double k2 = static_cast<double>((n + 1) * (n + 1));
          y(n) = scale * std::exp(-k2 * dt) * v(n);
        }
      }
      return y;
    }
    const SineBasis& basis = fam_->generator().basis();
    Eigen::VectorXd u = basis.to_nodal(v);
    for (int m = 0; m < basis.nodes(); ++m)
      u(m) *= std::exp(pot_cum_nodal_(k, m) - pot_cum_nodal_(j, m));
    return semigroup_apply(dt, basis.to_spectral(u));
  }

  // U(t_k, t_j)^T v.  The family is self-adjoint in the spatially constant
  // case; with a nodal potential the projected multiplication operator is
  // symmetric on coefficients, so only the order against the heat factor
  // flips.
  Eigen::VectorXd apply_adjoint(int k, int j, Eigen::Ref<const Eigen::VectorXd> v) const {
    check_pair(k, j, v);
    if (fam_->generator().potential().spatially_constant) return apply(k, j, v);
    const double dt = grid_.point(k) - grid_.point(j);
    const SineBasis& basis = fam_->generator().basis();
    Eigen::VectorXd u = basis.to_nodal(semigroup_apply(dt, v));
    for (int m = 0; m < basis.nodes(); ++m)
      u(m) *= std::exp(pot_cum_nodal_(k, m) - pot_cum_nodal_(j, m));
    return basis.to_spectral(u);
  }

 private:
  void check_pair(int k, int j, Eigen::Ref<const Eigen::VectorXd> v) const {
    if (j < 0 || k > grid_.steps() || j > k)
      throw std::invalid_argument("EvolutionGrid: index pair out of range");
    if (v.size() != n_)
      throw std::invalid_argument("EvolutionGrid: mode count mismatch");
  }

  double pot_ratio(int k, int j) const {
    // e^{B_k - B_j}; B is nonincreasing (b < 0), so cached exponentials can
    // be divided unless the denominator has underflowed.
    const double ej = pot_exp_[static_cast<std::size_t>(j)];
    if (ej >= 1e-290) return pot_exp_[static_cast<std::size_t>(k)] / ej;
    return std::exp(pot_cum_[static_cast<std::size_t>(k)] -
                    pot_cum_[static_cast<std::size_t>(j)]);
  }

  const EvolutionFamily* fam_;
  TimeGrid grid_;
  int n_;
  bool fast_ = false;
  Eigen::MatrixXd heat_lag_;            // N x (K+1), uniform constant case
  std::vector<double> pot_cum_;         // constant potential: B_k = int_0^{t_k} b
  std::vector<double> pot_exp_;         // e^{B_k}
  Eigen::MatrixXd pot_cum_nodal_;       // nodal potential: per-node cumulative
};

}  // namespace nsfde
