// Sine eigenbasis on (0,pi) and the adaptive quadrature helper.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "nsfde/quadrature.hpp"
#include "nsfde/spectral.hpp"

using namespace nsfde;

TEST_CASE("adaptive Simpson") {
  CHECK(adaptive_simpson([](double x) { return std::sin(x); }, 0.0, kPi, 1e-12) ==
        Catch::Approx(2.0).epsilon(1e-11));
  CHECK(adaptive_simpson([](double x) { return x * x; }, -1.0, 2.0, 1e-13) ==
        Catch::Approx(3.0));
  // integrable endpoint singularity within reach of the refinement depth
  CHECK(adaptive_simpson([](double x) { return 1.0 / std::sqrt(x); }, 1e-12, 1.0,
                         1e-9) == Catch::Approx(2.0 - 2e-6).epsilon(1e-6));

  SECTION("reports failure instead of returning garbage") {
    // a spike far below tolerance scale forces depth exhaustion
    CHECK_THROWS_AS(adaptive_simpson([](double x) { return x > 0.0 ? 1.0 / x : 0.0; },
                                     0.0, 1.0, 1e-14, 20),
                    QuadratureError);
  }
}

TEST_CASE("sine basis round trip") {
  const SineBasis basis(6);
  SpectralField x(6);
  x << 0.3, -1.2, 0.05, 2.0, -0.7, 0.4;

  const Eigen::VectorXd nodal = basis.to_nodal(x);
  const SpectralField back = basis.to_spectral(nodal);
  CHECK((back - x).cwiseAbs().maxCoeff() < 1e-13);

  SECTION("mode columns are orthonormal under the node quadrature weights") {
    Eigen::MatrixXd synth(basis.nodes(), 6);
    for (int n = 0; n < 6; ++n)
      synth.col(n) = basis.to_nodal(SpectralField::Unit(6, n));
    const Eigen::MatrixXd gram =
        (kPi / (basis.nodes() + 1)) * synth.transpose() * synth;
    CHECK((gram - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-13);
  }

  SECTION("eval matches the mode sum") {
    const double z = 1.1;
    double ref = 0.0;
    for (int n = 0; n < 6; ++n)
      ref += x(n) * std::sqrt(2.0 / kPi) * std::sin((n + 1) * z);
    CHECK(basis.eval(x, z) == Catch::Approx(ref));
  }

  SECTION("size mismatch is rejected") {
    CHECK_THROWS_AS(basis.to_nodal(SpectralField::Zero(5)), std::invalid_argument);
  }
}

TEST_CASE("projected pointwise sine map contracts with constant |c|") {
  // F(x) = c * P sin(S x) built from the basis pair; the scaled isometry makes
  // |c| an exact Lipschitz bound, which the hypothesis bookkeeping relies on.
  const int n = 8;
  const SineBasis basis(n);
  const double c = 0.7;
  const auto apply = [&](const SpectralField& x) {
    Eigen::VectorXd u = basis.to_nodal(x);
    for (int j = 0; j < u.size(); ++j) u(j) = std::sin(u(j));
    return SpectralField(c * basis.to_spectral(u));
  };

  std::mt19937_64 gen(99);
  std::normal_distribution<double> normal;
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    SpectralField a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a(i) = normal(gen);
      b(i) = a(i) + 0.3 * normal(gen);
    }
    const double num = (apply(a) - apply(b)).norm();
    const double den = (a - b).norm();
    if (den > 0.0) worst = std::max(worst, num / den);
  }
  CHECK(worst <= c * (1.0 + 1e-12));
  CHECK(worst > 0.5 * c);  // the bound is near-sharp, not vacuous
}
