// Fractional Brownian motion: covariance, Volterra kernel, and the two
// samplers (exact Cholesky and kernel representation).

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "nsfde/fbm.hpp"
#include "test_fixtures.hpp"

using namespace nsfde;

TEST_CASE("Hurst parameter validation") {
  CHECK_THROWS_AS(HurstParameter(0.0), std::domain_error);
  CHECK_THROWS_AS(HurstParameter(1.0), std::domain_error);
  CHECK_THROWS_AS(HurstParameter(-0.2), std::domain_error);
  CHECK(HurstParameter(0.75).value == 0.75);
  CHECK(HurstParameter(0.75).young_regime());
  CHECK_FALSE(HurstParameter(0.5).young_regime());
  CHECK_THROWS_AS(HurstParameter(0.5).require_young("test"), std::domain_error);
}

TEST_CASE("covariance function") {
  const auto pin = pinned("covariance | H=0.75 s=1 t=2");
  CHECK(fbm_covariance(HurstParameter(0.75), 1.0, 2.0) ==
        Catch::Approx(pin.value).epsilon(0).margin(pin.tolerance));

  // H = 1/2 degenerates to Brownian motion
  CHECK(fbm_covariance(HurstParameter(0.5), 0.3, 0.8) == Catch::Approx(0.3));
  CHECK(fbm_covariance(HurstParameter(0.5), 0.8, 0.3) == Catch::Approx(0.3));

  // variance on the diagonal is t^{2H}
  CHECK(fbm_covariance(HurstParameter(0.75), 2.0, 2.0) ==
        Catch::Approx(std::pow(2.0, 1.5)));

  SECTION("covariance matrix is symmetric positive definite") {
    const TimeGrid grid(1.0, 16);
    const Eigen::MatrixXd r = fbm_covariance_matrix(HurstParameter(0.75), grid);
    CHECK((r - r.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
  }
}

TEST_CASE("kernel normalization constant") {
  const auto pin = pinned("c_H | H=0.75");
  CHECK(fbm_kernel_scale(HurstParameter(0.75)) ==
        Catch::Approx(pin.value).epsilon(0).margin(pin.tolerance));
}

TEST_CASE("Volterra kernel values") {
  for (const auto& [key, h, t, s] :
       {std::tuple{"kernel | H=0.75 t=1 s=0.5", 0.75, 1.0, 0.5},
        std::tuple{"kernel | H=0.75 t=1 s=0.25", 0.75, 1.0, 0.25},
        std::tuple{"kernel | H=0.6 t=0.8 s=0.3", 0.6, 0.8, 0.3}}) {
    const auto pin = pinned(key);
    CHECK(fbm_kernel(HurstParameter(h), t, s) ==
          Catch::Approx(pin.value).epsilon(0).margin(pin.tolerance));
  }

  SECTION("vanishes on and above the diagonal") {
    const HurstParameter h(0.75);
    CHECK(fbm_kernel(h, 0.5, 0.5) == 0.0);
    CHECK(fbm_kernel(h, 0.3, 0.5) == 0.0);
  }

  SECTION("domain error for s <= 0") {
    CHECK_THROWS_AS(fbm_kernel(HurstParameter(0.75), 1.0, 0.0), std::domain_error);
    CHECK_THROWS_AS(fbm_kernel(HurstParameter(0.75), 1.0, -0.1), std::domain_error);
  }
}

TEST_CASE("kernel squared-integral reproduces the variance") {
  // int_0^T K(T,s)^2 ds = Var B^H(T) = T^{2H}.  K(T,s)^2 ~ s^{1-2H} as s -> 0
  // (an integrable singularity for H < 1); geometric layers toward 0 with an
  // adaptive rule inside each resolve it without special-casing.
  const auto pin = pinned("kernel_sq_integral | H=0.75 T=1");
  const HurstParameter h(0.75);
  const double T = 1.0;
  double acc = 0.0;
  // geometric layers [T 2^{-k-1}, T 2^{-k}] with Simpson inside each
  for (int layer = 0; layer < 48; ++layer) {
    const double b = T * std::pow(0.5, layer);
    const double a = 0.5 * b;
    acc += adaptive_simpson([&](double s) { double k = fbm_kernel(h, T, s);
                                            return k * k; },
                            a, b, 1e-10);
  }
  CHECK(acc == Catch::Approx(pin.value).epsilon(0).margin(pin.tolerance));
}

TEST_CASE("Cholesky sampler determinism and statistics") {
  const TimeGrid grid(1.0, 32);
  const FbmSampler sampler(HurstParameter(0.75), grid);
  CHECK(sampler.jitter() == 0.0);  // clean factorization at this size

  SECTION("same labels reproduce the path, different labels do not") {
    const FbmPath a = sampler.draw(42, 7, 0);
    const FbmPath b = sampler.draw(42, 7, 0);
    const FbmPath c = sampler.draw(42, 8, 0);
    const FbmPath d = sampler.draw(43, 7, 0);
    CHECK(a.values == b.values);
    CHECK(a.values != c.values);
    CHECK(a.values != d.values);
    CHECK(a.values(0) == 0.0);
  }

  SECTION("empirical variance at the horizon") {
    const int n = 4000;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const double v = sampler.draw(1, static_cast<std::uint64_t>(i), 0).values(32);
      acc += v * v;
    }
    // Var = 1 with SE ~ sqrt(2/n) ~ 0.022
    CHECK(acc / n == Catch::Approx(1.0).margin(0.1));
  }
}

TEST_CASE("kernel representation is linear in the driving increments") {
  const TimeGrid grid(1.0, 16);
  const KernelRepresentation rep(HurstParameter(0.75), grid);

  Eigen::VectorXd dw1(16), dw2(16);
  for (int i = 0; i < 16; ++i) {
    dw1(i) = std::sin(1.0 + i);
    dw2(i) = std::cos(2.0 + 0.5 * i);
  }
  const Eigen::VectorXd sum = rep.from_increments(dw1 + 2.0 * dw2).values;
  const Eigen::VectorXd parts =
      rep.from_increments(dw1).values + 2.0 * rep.from_increments(dw2).values;
  CHECK((sum - parts).cwiseAbs().maxCoeff() < 1e-14);

  SECTION("lower-triangular causality: increments after t cannot move B(t)") {
    Eigen::VectorXd late = Eigen::VectorXd::Zero(16);
    late(15) = 3.0;  // increment on the last interval only
    const Eigen::VectorXd path = rep.from_increments(late).values;
    for (int k = 0; k <= 15; ++k) CHECK(path(k) == 0.0);
    CHECK(path(16) != 0.0);
  }

  SECTION("weights reproduce the kernel at left endpoints up to O(h)") {
    // weight(k,j) approximates K(t_k, midpoint of [t_j, t_{j+1}]) * ... the
    // induced variance is checked statistically in the validation suite; here
    // just pin the determinism of draw()
    const FbmPath a = rep.draw(11, 3);
    const FbmPath b = rep.draw(11, 3);
    CHECK(a.values == b.values);
  }
}
