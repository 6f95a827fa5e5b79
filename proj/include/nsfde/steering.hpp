#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "nsfde/errors.hpp"
#include "nsfde/mild_solver.hpp"
#include "nsfde/problem.hpp"

namespace nsfde {

// Diagonal input operator B: controls act mode-wise with gain b_n, zero on
// uncontrolled modes.  The control space is R^{Nc} over the controlled
// indices.
class InputOperator {
 public:
  explicit InputOperator(Eigen::VectorXd gains) : gains_(std::move(gains)) {
    for (int n = 0; n < gains_.size(); ++n)
      if (gains_(n) != 0.0) controlled_.push_back(n);
    if (controlled_.empty())
      throw std::invalid_argument("InputOperator: at least one controlled mode required");
  }

  static InputOperator first_modes(int n_modes, int n_controlled, double gain = 1.0) {
    if (n_controlled < 1 || n_controlled > n_modes)
      throw std::invalid_argument("InputOperator: need 1 <= N_ctrl <= N");
    Eigen::VectorXd g = Eigen::VectorXd::Zero(n_modes);
    g.head(n_controlled).setConstant(gain);
    return InputOperator(std::move(g));
  }

  int modes() const { return static_cast<int>(gains_.size()); }
  int controlled_count() const { return static_cast<int>(controlled_.size()); }
  const std::vector<int>& controlled() const { return controlled_; }
  const Eigen::VectorXd& gains() const { return gains_; }
  double norm() const { return gains_.cwiseAbs().maxCoeff(); }

  // B u: scatter the control vector onto its modes.
  SpectralField apply(const Eigen::VectorXd& u) const {
    if (u.size() != controlled_count())
      throw std::invalid_argument("InputOperator: control vector length mismatch");
    SpectralField x = SpectralField::Zero(modes());
    for (int c = 0; c < controlled_count(); ++c) {
      const int n = controlled_[static_cast<std::size_t>(c)];
      x(n) = gains_(n) * u(c);
    }
    return x;
  }

  // B* x: gather controlled components.
  Eigen::VectorXd adjoint(const SpectralField& x) const {
    if (x.size() != modes())
      throw std::invalid_argument("InputOperator: state vector length mismatch");
    Eigen::VectorXd u(controlled_count());
    for (int c = 0; c < controlled_count(); ++c) {
      const int n = controlled_[static_cast<std::size_t>(c)];
      u(c) = gains_(n) * x(n);
    }
    return u;
  }

 private:
  Eigen::VectorXd gains_;
  std::vector<int> controlled_;
};

// Control signal on a grid, valued in the control space R^{Nc}.
struct ControlSignal {
  TimeGrid grid;
  std::vector<Eigen::VectorXd> values;  // one per grid point

  // L^2(0,T) norm by the same composite trapezoid the reachability map uses.
  double energy() const {
    double acc = 0.0;
    const int K = grid.steps();
    for (int j = 0; j <= K; ++j) {
      const double lo = grid.point(j > 0 ? j - 1 : 0);
      const double hi = grid.point(j < K ? j + 1 : K);
      acc += 0.5 * (hi - lo) * values[static_cast<std::size_t>(j)].squaredNorm();
    }
    return std::sqrt(acc);
  }
};

// Reachability structure of the controlled problem on a fixed grid: the
// discrete reachability map
//
//   W u = int_0^T U(T,s) B u(s) ds   (composite trapezoid)
//
// and its Gramian restricted to the controlled-mode coordinates,
//
//   G = P_c [ sum_j w_j (U(T,s_j) B)(U(T,s_j) B)^T ] P_c^T .
//
// Weights and evolution factors are shared with the mild-solution map, so
// applying W after its minimum-norm right inverse reproduces the controlled
// components of the target to round-off, independent of grid resolution.
class ControlSystem {
 public:
  ControlSystem(const EvolutionGrid& evo, InputOperator input,
                double eigenvalue_floor = 1e-12)
      : evo_(&evo), input_(std::move(input)) {
    if (input_.modes() != evo.family().generator().modes())
      throw std::invalid_argument("ControlSystem: input/state mode count mismatch");
    const TimeGrid& grid = evo.grid();
    const int K = grid.steps();
    const int nc = input_.controlled_count();
    gramian_ = Eigen::MatrixXd::Zero(nc, nc);
    Eigen::MatrixXd ub(input_.modes(), nc);
    for (int j = 0; j <= K; ++j) {
      const double lo = grid.point(j > 0 ? j - 1 : 0);
      const double hi = grid.point(j < K ? j + 1 : K);
      const double w = 0.5 * (hi - lo);
      for (int c = 0; c < nc; ++c) {
        Eigen::VectorXd col = Eigen::VectorXd::Zero(input_.modes());
        const int n = input_.controlled()[static_cast<std::size_t>(c)];
        col(n) = input_.gains()(n);
        ub.col(c) = evo.apply(K, j, col);
      }
      const Eigen::MatrixXd pb = project(ub);
      gramian_.noalias() += w * pb * pb.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gramian_);
    min_eig_ = es.eigenvalues().minCoeff();
    const double max_eig = es.eigenvalues().maxCoeff();
    if (!(min_eig_ > eigenvalue_floor * std::max(1.0, max_eig))) {
      int worst = 0;
      es.eigenvectors().col(0).cwiseAbs().maxCoeff(&worst);
      const int mode = input_.controlled()[static_cast<std::size_t>(worst)] + 1;
      throw FactorizationError(
          "ControlSystem: reachability Gramian eigenvalue " + std::to_string(min_eig_) +
          " is below the floor; mode " + std::to_string(mode) +
          " is numerically uncontrollable on this horizon");
    }
    llt_.compute(gramian_);
    if (llt_.info() != Eigen::Success)
      throw FactorizationError("ControlSystem: Gramian factorization failed");
    // Recorded bound for the inverse map, entering the feedback block of the
    // contraction constant: ||B|| M sqrt(T) / lambda_min(G).
    winv_bound_ = input_.norm() * evo.family().decay_m() *
                  std::sqrt(grid.horizon()) / min_eig_;
  }

  const EvolutionGrid& evolution() const { return *evo_; }
  const InputOperator& input() const { return input_; }
  const Eigen::MatrixXd& gramian() const { return gramian_; }
  double min_eigenvalue() const { return min_eig_; }
  double winv_bound() const { return winv_bound_; }

  Eigen::VectorXd gramian_solve(const Eigen::VectorXd& y_controlled) const {
    if (y_controlled.size() != input_.controlled_count())
      throw std::invalid_argument("ControlSystem: controlled vector length mismatch");
    return llt_.solve(y_controlled);
  }

  Eigen::VectorXd restrict(const SpectralField& x) const {
    Eigen::VectorXd y(input_.controlled_count());
    for (int c = 0; c < input_.controlled_count(); ++c)
      y(c) = x(input_.controlled()[static_cast<std::size_t>(c)]);
    return y;
  }

  SpectralField lift(const Eigen::VectorXd& y_controlled) const {
    SpectralField x = SpectralField::Zero(input_.modes());
    for (int c = 0; c < input_.controlled_count(); ++c)
      x(input_.controlled()[static_cast<std::size_t>(c)]) = y_controlled(c);
    return x;
  }

 private:
  Eigen::MatrixXd project(const Eigen::MatrixXd& m) const {
    Eigen::MatrixXd out(input_.controlled_count(), m.cols());
    for (int c = 0; c < input_.controlled_count(); ++c)
      out.row(c) = m.row(input_.controlled()[static_cast<std::size_t>(c)]);
    return out;
  }

  const EvolutionGrid* evo_;
  InputOperator input_;
  Eigen::MatrixXd gramian_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double min_eig_ = 0.0;
  double winv_bound_ = 0.0;
};

// W u with the system's quadrature.
inline SpectralField apply_w(const ControlSystem& sys, const ControlSignal& u) {
  const EvolutionGrid& evo = sys.evolution();
  const TimeGrid& grid = evo.grid();
  if (!(u.grid == grid)) throw std::invalid_argument("apply_w: control grid mismatch");
  if (u.values.size() != grid.size())
    throw std::invalid_argument("apply_w: one control value per grid point required");
  const int K = grid.steps();
  SpectralField acc = SpectralField::Zero(sys.input().modes());
  for (int j = 0; j <= K; ++j) {
    const double lo = grid.point(j > 0 ? j - 1 : 0);
    const double hi = grid.point(j < K ? j + 1 : K);
    const double w = 0.5 * (hi - lo);
    evo.accumulate(K, j, w, sys.input().apply(u.values[static_cast<std::size_t>(j)]), acc);
  }
  return acc;
}

// Minimum-norm right inverse of W on the controlled components:
// u(s) = B* U(T,s)* G^{-1} P_c y.  Components of y outside the controlled
// subspace are ignored (they are not reachable through B).
inline ControlSignal w_inverse(const ControlSystem& sys, const SpectralField& y) {
  const EvolutionGrid& evo = sys.evolution();
  const TimeGrid& grid = evo.grid();
  if (y.size() != sys.input().modes())
    throw std::invalid_argument("w_inverse: target dimension mismatch");
  const Eigen::VectorXd xi = sys.gramian_solve(sys.restrict(y));
  const SpectralField z = sys.lift(xi);
  const int K = grid.steps();
  ControlSignal u{grid, {}};
  u.values.reserve(grid.size());
  for (int j = 0; j <= K; ++j)
    u.values.push_back(sys.input().adjoint(evo.apply_adjoint(K, j, z)));
  return u;
}

// Steering control for a target terminal state, anticipative construction:
// the braced correction is everything the uncontrolled mild map produces at
// the horizon, so
//
//   u = W^{-1} [ x1 - psi_0(x)(T) ]
//
// where psi_0 is the mild-solution map without the control forcing,
// evaluated on the current trajectory iterate.
inline ControlSignal control_for(const ControlSystem& sys, const NeutralProblem& p,
                                 const Trajectory& x, const QfbmPath* noise,
                                 const SpectralField& target) {
  const EvolutionGrid& evo = sys.evolution();
  if (target.size() != p.history.modes())
    throw std::invalid_argument("control_for: target dimension mismatch");
  const SpectralField braced = target - psi_terminal(p, evo, x, nullptr, noise);
  return w_inverse(sys, braced);
}

struct SteerOuterIteration {
  double state_delta = 0.0;          // sup_k ||x_new - x_old||
  double terminal_abs_error = 0.0;   // ||x(T) - x1|| on controlled components
  double control_energy = 0.0;
  int inner_sweeps = 0;
};

struct SteerReport {
  std::vector<SteerOuterIteration> outers;
  bool converged = false;
  double terminal_abs_error = 0.0;       // controlled components
  double terminal_rel_error = 0.0;
  double terminal_abs_error_full = 0.0;  // all modes (equals the above when Nc = N)
  double control_energy = 0.0;
  double gramian_min_eigenvalue = 0.0;
  double winv_bound = 0.0;
  double gamma_feedback_horizon = 0.0;   // contraction constant with the feedback block
  double replay_terminal_gap = 0.0;      // cold re-solve with the returned control
  PicardReport last_inner;
};

struct SteerResult {
  Trajectory trajectory;
  ControlSignal control;
  SteerReport report;
};

// Alternate between the mild solve at a frozen control and the control
// update at the frozen trajectory until the trajectory stops moving.  The
// terminal identity x(T) = x1 (controlled components) holds to round-off at
// a fixed point because control_for and the solver share one quadrature.
inline SteerResult steer(const NeutralProblem& p, const ControlSystem& sys,
                         const QfbmPath* noise, const SpectralField& target,
                         double tol = 1e-9, int max_outer = 60,
                         double inner_tol = 0.0) {
  const EvolutionGrid& evo = sys.evolution();
  const TimeGrid& grid = evo.grid();
  if (inner_tol <= 0.0) inner_tol = 0.1 * tol;

  SteerReport report;
  report.gramian_min_eigenvalue = sys.min_eigenvalue();
  report.winv_bound = sys.winv_bound();
  {
    ProblemConstants with_feedback = p.constants;
    with_feedback.input_bound = sys.input().norm();
    with_feedback.winv_bound = sys.winv_bound();
    report.gamma_feedback_horizon = contraction_constant(with_feedback, grid.horizon());
  }

  Trajectory x(p.history, grid);
  for (int k = 1; k <= grid.steps(); ++k)
    x.set_grid_value(k, evo.apply(k, 0, x.grid_value(0)));

  ControlSignal u{grid, std::vector<Eigen::VectorXd>(
                            grid.size(), Eigen::VectorXd::Zero(sys.input().controlled_count()))};
  const int K = grid.steps();
  std::vector<double> deltas;
  for (int outer = 0; outer < max_outer; ++outer) {
    u = control_for(sys, p, x, noise, target);
    GridForcing forcing{grid, {}};
    forcing.values.reserve(grid.size());
    for (int j = 0; j <= K; ++j)
      forcing.values.push_back(sys.input().apply(u.values[static_cast<std::size_t>(j)]));

    PicardResult inner = picard_solve(p, evo, &forcing, noise, inner_tol, 200, &x);

    SteerOuterIteration it;
    double scale = 1.0;
    for (int k = 0; k <= K; ++k) {
      it.state_delta = std::max(
          it.state_delta,
          (inner.trajectory.grid_value(k) - x.grid_value(k)).norm());
      scale = std::max(scale, inner.trajectory.grid_value(k).norm());
    }
    x = std::move(inner.trajectory);
    it.terminal_abs_error =
        (sys.restrict(x.grid_value(K)) - sys.restrict(target)).norm();
    it.control_energy = u.energy();
    it.inner_sweeps = inner.report.total_sweeps;
    report.outers.push_back(it);
    report.last_inner = inner.report;
    deltas.push_back(it.state_delta);

    if (it.state_delta <= tol * scale) {
      report.converged = true;
      break;
    }
  }
  if (!report.converged)
    throw ConvergenceError(
        "steer: control/state alternation did not converge in " +
            std::to_string(max_outer) + " iterations",
        deltas);

  report.terminal_abs_error =
      (sys.restrict(x.grid_value(K)) - sys.restrict(target)).norm();
  const double tnorm = sys.restrict(target).norm();
  report.terminal_rel_error =
      report.terminal_abs_error / (tnorm > 0.0 ? tnorm : 1.0);
  report.terminal_abs_error_full = (x.grid_value(K) - target).norm();
  report.control_energy = u.energy();

  // Consistency replay: a cold solve with the returned control must land on
  // the same terminal state.
  {
    GridForcing forcing{grid, {}};
    forcing.values.reserve(grid.size());
    for (int j = 0; j <= K; ++j)
      forcing.values.push_back(sys.input().apply(u.values[static_cast<std::size_t>(j)]));
    PicardResult replay = picard_solve(p, evo, &forcing, noise, inner_tol, 200);
    report.replay_terminal_gap =
        (replay.trajectory.grid_value(K) - x.grid_value(K)).norm();
  }
  return SteerResult{std::move(x), std::move(u), std::move(report)};
}

}  // namespace nsfde
