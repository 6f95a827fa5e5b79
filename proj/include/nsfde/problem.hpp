#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nsfde/errors.hpp"
#include "nsfde/evolution.hpp"
#include "nsfde/hilbert_noise.hpp"
#include "nsfde/spectral.hpp"
#include "nsfde/time_grid.hpp"

namespace nsfde {

// State-dependent argument delays: the drift reads x(t - rho(t)), the
// neutral term x(t - r(t)).  Both must stay in [0, tau] so every lookback
// lands in [-tau, t].
struct DelayFunctions {
  std::function<double(double)> r;    // neutral-term delay
  std::function<double(double)> rho;  // drift delay
  double tau = 0.0;                   // history depth bound

  void validate(double horizon, int probes = 257) const {
    if (!(tau > 0.0)) throw std::domain_error("DelayFunctions: tau must be positive");
    if (!r || !rho) throw std::domain_error("DelayFunctions: both delays must be set");
    for (int i = 0; i <= probes; ++i) {
      const double t = horizon * static_cast<double>(i) / probes;
      for (double d : {r(t), rho(t)}) {
        if (!(d >= 0.0) || !(d <= tau + 1e-12))
          throw std::domain_error(
              "DelayFunctions: delay value " + std::to_string(d) + " at t = " +
              std::to_string(t) + " leaves [0, tau]");
      }
    }
  }
};

// Initial history phi on [-tau, 0], stored on its own uniform grid and read
// back with linear interpolation.
class HistorySegment {
 public:
  HistorySegment(double tau, std::vector<SpectralField> values)
      : tau_(tau), values_(std::move(values)) {
    if (!(tau > 0.0)) throw std::domain_error("HistorySegment: tau must be positive");
    if (values_.size() < 2)
      throw std::domain_error("HistorySegment: need at least two samples");
    for (const auto& v : values_)
      if (v.size() != values_.front().size())
        throw std::invalid_argument("HistorySegment: inconsistent mode counts");
  }

  HistorySegment(double tau, int steps,
                 const std::function<SpectralField(double)>& phi)
      : HistorySegment(tau, sample(tau, steps, phi)) {}

  double tau() const { return tau_; }
  int modes() const { return static_cast<int>(values_.front().size()); }
  int steps() const { return static_cast<int>(values_.size()) - 1; }

  // phi(t) for t in [-tau, 0].
  SpectralField at(double t) const {
    const double tol = 1e-9 * std::max(1.0, tau_);
    if (t < -tau_ - tol || t > tol)
      throw std::domain_error("HistorySegment: lookup at t = " + std::to_string(t) +
                              " outside [-tau, 0]");
    const double s = std::min(std::max((t + tau_) / tau_, 0.0), 1.0);  // in [0,1]
    const double pos = s * steps();
    const int k = std::min(static_cast<int>(pos), steps() - 1);
    const double w = pos - k;
    return (1.0 - w) * values_[static_cast<std::size_t>(k)] +
           w * values_[static_cast<std::size_t>(k) + 1];
  }

 private:
  static std::vector<SpectralField> sample(double tau, int steps,
                                           const std::function<SpectralField(double)>& phi) {
    if (steps < 1) throw std::domain_error("HistorySegment: need at least one step");
    std::vector<SpectralField> v;
    v.reserve(static_cast<std::size_t>(steps) + 1);
    for (int k = 0; k <= steps; ++k)
      v.push_back(phi(-tau + tau * static_cast<double>(k) / steps));
    return v;
  }

  double tau_;
  std::vector<SpectralField> values_;  // at -tau + k tau/steps
};

// Solution segment: history on [-tau, 0] glued to grid values on [0, T].
// Delayed reads interpolate linearly between grid points.
class Trajectory {
 public:
  Trajectory(HistorySegment history, TimeGrid grid)
      : history_(std::move(history)), grid_(std::move(grid)) {
    values_.assign(grid_.size(), SpectralField::Zero(history_.modes()));
    values_[0] = history_.at(0.0);
  }

  Trajectory(HistorySegment history, TimeGrid grid, std::vector<SpectralField> values)
      : history_(std::move(history)), grid_(std::move(grid)), values_(std::move(values)) {
    if (values_.size() != grid_.size())
      throw std::invalid_argument("Trajectory: one value per grid point required");
    for (const auto& v : values_)
      if (v.size() != history_.modes())
        throw std::invalid_argument("Trajectory: inconsistent mode counts");
  }

  const TimeGrid& grid() const { return grid_; }
  const HistorySegment& history() const { return history_; }
  int modes() const { return history_.modes(); }

  const SpectralField& grid_value(int k) const {
    return values_.at(static_cast<std::size_t>(k));
  }
  void set_grid_value(int k, SpectralField v) {
    values_.at(static_cast<std::size_t>(k)) = std::move(v);
  }
  const std::vector<SpectralField>& grid_values() const { return values_; }

  // x(t) for t in [-tau, T]: history segment for t <= 0, grid interpolation
  // beyond.  Out-of-range lookups are errors, not extrapolations.
  SpectralField value_at(double t) const {
    if (t <= 0.0) return history_.at(t);
    const double T = grid_.horizon();
    const double tol = 1e-9 * std::max(1.0, T);
    if (t > T + tol)
      throw std::domain_error("Trajectory: lookup at t = " + std::to_string(t) +
                              " beyond the horizon");
    int lo = 0, hi = grid_.steps();
    while (hi - lo > 1) {
      const int mid = (lo + hi) / 2;
      (grid_.point(mid) <= t ? lo : hi) = mid;
    }
    const double h = grid_.point(hi) - grid_.point(lo);
    const double w = std::min(std::max((t - grid_.point(lo)) / h, 0.0), 1.0);
    return (1.0 - w) * values_[static_cast<std::size_t>(lo)] +
           w * values_[static_cast<std::size_t>(hi)];
  }

 private:
  HistorySegment history_;
  TimeGrid grid_;
  std::vector<SpectralField> values_;
};

// Lookup that treats the trajectory as one function on [-tau, T].
inline SpectralField history_lookup(const Trajectory& x, double t) {
  return x.value_at(t);
}

// Recorded constants the fixed-point and steering analysis runs on.  All are
// bounds the scenario layer certifies (or the caller supplies directly).
struct ProblemConstants {
  double lipschitz = 0.0;        // shared Lipschitz constant of drift and neutral maps
  double growth = 0.0;           // shared linear-growth constant (squared form)
  double neutral_lipschitz = 0.0;  // Lipschitz constant of A(t) g(t, .)
  double inverse_bound = 0.0;      // sup_t ||A(t)^{-1}||
  double noise_bound = 0.0;        // sup_t ||sigma(t)||_Q
  double decay_m = 1.0;            // evolution bound: ||U(t,s)|| <= M e^{-beta(t-s)}
  double decay_beta = 0.0;
  double input_bound = 0.0;        // ||B||; zero when no control is configured
  double winv_bound = 0.0;         // recorded bound on the Gramian inverse map
  double horizon = 0.0;            // T
};

using FieldMap = std::function<SpectralField(double, const SpectralField&)>;

// The neutral problem
//
//   d[x(t) + g(t, x(t - r(t)))] = [A(t) x(t) + f(t, x(t - rho(t)))] dt
//                                 + sigma(t) dB^H(t),   t in [0, T],
//   x(t) = phi(t),  t in [-tau, 0],
//
// bundled with the evolution family of A(t) and the certified constants.
// Construction enforces the neutral-term smallness gate
// neutral_lipschitz * inverse_bound < 1/sqrt(6), without which the
// fixed-point map has no contraction window at all.
struct NeutralProblem {
  EvolutionFamily family;
  FieldMap drift;          // f
  FieldMap neutral_term;   // g
  NoiseCoefficient noise;  // sigma; zero() for the deterministic problem
  DelayFunctions delays;
  HistorySegment history;
  ProblemConstants constants;

  NeutralProblem(EvolutionFamily fam, FieldMap f, FieldMap g, NoiseCoefficient sigma,
                 DelayFunctions d, HistorySegment phi, ProblemConstants c)
      : family(std::move(fam)),
        drift(std::move(f)),
        neutral_term(std::move(g)),
        noise(std::move(sigma)),
        delays(std::move(d)),
        history(std::move(phi)),
        constants(c) {
    if (history.modes() != family.generator().modes())
      throw std::invalid_argument("NeutralProblem: history/generator mode count mismatch");
    if (history.tau() != delays.tau)
      throw std::invalid_argument("NeutralProblem: history depth differs from delay bound");
    if (!(constants.horizon > 0.0))
      throw std::domain_error("NeutralProblem: horizon must be positive");
    if (!drift || !neutral_term)
      throw std::invalid_argument("NeutralProblem: drift and neutral maps must be set");
    delays.validate(constants.horizon);
    const double gate = constants.neutral_lipschitz * constants.inverse_bound;
    if (!(gate < 1.0 / std::sqrt(6.0)))
      throw HypothesisViolation(
          {"neutral-term contraction gate: Lip(Ag) * sup||A^{-1}|| = " +
           std::to_string(gate) + " must be < 1/sqrt(6) ~ 0.40825"});
  }
};

// Control already mapped into the state space and sampled on a grid; the
// solver consumes it as an extra integrable forcing.
struct GridForcing {
  TimeGrid grid;
  std::vector<SpectralField> values;  // one per grid point

  void check(const TimeGrid& other, int modes) const {
    if (!(grid == other))
      throw std::invalid_argument("GridForcing: grid mismatch");
    if (values.size() != grid.size())
      throw std::invalid_argument("GridForcing: one value per grid point required");
    for (const auto& v : values)
      if (v.size() != modes)
        throw std::invalid_argument("GridForcing: mode count mismatch");
  }
};

}  // namespace nsfde
