#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace nsfde {

// State-space element of L^2(0,pi), stored by its coefficients against the
// orthonormal Dirichlet eigenbasis e_n(z) = sqrt(2/pi) sin(n z), n = 1..N.
using SpectralField = Eigen::VectorXd;

inline constexpr double kPi = 3.14159265358979323846;

// Truncated sine basis with a collocation grid z_j = j pi / (J+1), j = 1..J.
// The discrete orthogonality sum_{j=1}^J sin(n z_j) sin(m z_j) = (J+1)/2
// delta_{nm} (n,m <= J) makes analysis an exact left inverse of synthesis
// for band-limited fields, which the nonlinearity evaluation relies on.
class SineBasis {
 public:
  explicit SineBasis(int n_modes, int n_nodes = 0)
      : n_modes_(n_modes), n_nodes_(n_nodes > 0 ? n_nodes : 2 * n_modes) {
    if (n_modes < 1) throw std::invalid_argument("SineBasis: need at least one mode");
    if (n_nodes_ < n_modes_)
      throw std::invalid_argument("SineBasis: collocation grid must resolve every mode");
    synthesis_.resize(n_nodes_, n_modes_);
    const double scale = std::sqrt(2.0 / kPi);
    for (int j = 0; j < n_nodes_; ++j)
      for (int n = 0; n < n_modes_; ++n)
        synthesis_(j, n) = scale * std::sin((n + 1) * node(j));
    // Discrete orthogonality: synthesis^T synthesis = ((J+1)/pi) I, so the
    // exact left inverse is (pi/(J+1)) synthesis^T.
    analysis_ = (kPi / (n_nodes_ + 1)) * synthesis_.transpose();
  }

  int modes() const { return n_modes_; }
  int nodes() const { return n_nodes_; }

  // z_j = j pi / (J+1) for j = 1..J, exposed 0-based.
  double node(int j) const { return (j + 1) * kPi / (n_nodes_ + 1); }

  // Point values u(z_j) from coefficients.
  Eigen::VectorXd to_nodal(const SpectralField& x) const {
    check_modes(x);
    return synthesis_ * x;
  }

  // Coefficients from point values; exact inverse of to_nodal on the span
  // of the first N modes, discrete L^2 projection otherwise.
  SpectralField to_spectral(const Eigen::VectorXd& u) const {
    if (u.size() != n_nodes_)
      throw std::invalid_argument("SineBasis: nodal vector length mismatch");
    return analysis_ * u;
  }

  // Evaluate the field at an arbitrary point of (0,pi).
  double eval(const SpectralField& x, double z) const {
    check_modes(x);
    double acc = 0.0;
    const double scale = std::sqrt(2.0 / kPi);
    for (int n = 0; n < n_modes_; ++n) acc += x(n) * scale * std::sin((n + 1) * z);
    return acc;
  }

 private:
  void check_modes(const SpectralField& x) const {
    if (x.size() != n_modes_)
      throw std::invalid_argument("SineBasis: coefficient vector length mismatch");
  }

  int n_modes_;
  int n_nodes_;
  Eigen::MatrixXd synthesis_;  // J x N
  Eigen::MatrixXd analysis_;   // N x J
};

}  // namespace nsfde
