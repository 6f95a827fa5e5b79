// Fixed-point solver for the mild formulation: contraction constants, closed
// forms, windowing, and convergence behavior.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "nsfde/mild_solver.hpp"
#include "test_fixtures.hpp"

using namespace nsfde;

namespace {

// Single-mode problem with b = -1 (so the mode-1 rate is -2), history phi = 1,
// nothing stochastic.  Delay choices and maps vary per test.
struct ScalarSetup {
  double tau = 0.25;
  double horizon = 1.0;
  FieldMap drift;
  double drift_lipschitz = 0.0;
  std::function<double(double)> rho = [](double) { return 0.0; };

  NeutralProblem build() const {
    EvolutionFamily fam(TimeVaryingGenerator(1, Potential::constant_value(-1.0)));
    DelayFunctions delays;
    delays.tau = tau;
    delays.r = [](double) { return 0.0; };
    delays.rho = rho;
    ProblemConstants c;
    c.lipschitz = drift_lipschitz;
    c.growth = drift_lipschitz * drift_lipschitz;
    c.inverse_bound = 0.5;
    c.decay_beta = 2.0;
    c.horizon = horizon;
    HistorySegment history(tau, 4, [](double) {
      return SpectralField(SpectralField::Ones(1));
    });
    const auto zero_map = [](double, const SpectralField& x) {
      return SpectralField(SpectralField::Zero(x.size()));
    };
    return NeutralProblem(std::move(fam), drift, zero_map, NoiseCoefficient::none(),
                          delays, std::move(history), c);
  }
};

ProblemConstants default_constants() {
  // mirrors the shipped default scenario: C1 = 0.5, L* = 0.65, M* = 0.5,
  // M = 1, beta = 2, T = 1, with the control block at Mb = 1, Mw = 130
  ProblemConstants c;
  c.lipschitz = 0.5;
  c.neutral_lipschitz = 0.65;
  c.inverse_bound = 0.5;
  c.decay_m = 1.0;
  c.decay_beta = 2.0;
  c.input_bound = 1.0;
  c.winv_bound = 130.0;
  c.horizon = 1.0;
  return c;
}

}  // namespace

TEST_CASE("contraction constant") {
  const ProblemConstants c = default_constants();

  SECTION("t = 0 collapses to the neutral block, exactly") {
    const auto pin = pinned("gamma | default t=0");
    // equality, not approximation: at t = 0 the formula must reduce to
    // 6 L*^2 M*^2 with no quadrature residue
    CHECK(contraction_constant(c, 0.0) == pin.value);
  }

  SECTION("full value with the feedback block") {
    const auto pin = pinned("gamma | default t=1 (with control block)");
    CHECK(contraction_constant(c, 1.0) ==
          Catch::Approx(pin.value).epsilon(pin.tolerance));
  }

  SECTION("solver variant freezes the input blocks") {
    const auto pin = pinned("gamma_solver | default t=1 (Mb=0)");
    ProblemConstants frozen = c;
    frozen.input_bound = 0.0;
    frozen.winv_bound = 0.0;
    CHECK(contraction_constant(frozen, 1.0) ==
          Catch::Approx(pin.value).epsilon(pin.tolerance));
  }

  SECTION("monotone increasing in t") {
    double prev = contraction_constant(c, 0.0);
    for (double t = 0.1; t <= 1.0; t += 0.1) {
      const double g = contraction_constant(c, t);
      CHECK(g > prev);
      prev = g;
    }
  }

  CHECK_THROWS_AS(contraction_constant(c, -0.1), std::domain_error);
}

TEST_CASE("undelayed linear problem matches the exponential") {
  // x' = -2x - x = -3x with x(0) = 1; mode-1 value at t is e^{-3t}
  ScalarSetup s;
  s.drift = [](double, const SpectralField& x) { return SpectralField(-x); };
  s.drift_lipschitz = 1.0;
  const NeutralProblem p = s.build();
  const TimeGrid grid(1.0, 512);
  const EvolutionGrid evo(p.family, grid);

  const PicardResult res = picard_solve(p, evo);
  REQUIRE(res.report.converged);

  const auto pin = pinned("linear_ode | xp=-3x x0=1 t=1");
  CHECK(res.trajectory.grid_value(512)(0) ==
        Catch::Approx(pin.value).epsilon(0).margin(pin.tolerance));

  double worst = 0.0;
  for (int k = 0; k <= 512; ++k)
    worst = std::max(worst, std::abs(res.trajectory.grid_value(k)(0) -
                                     std::exp(-3.0 * grid.point(k))));
  CHECK(worst < 1e-5);

  SECTION("the returned trajectory is a fixed point of the map") {
    const Trajectory again = apply_psi(p, evo, res.trajectory);
    double gap = 0.0;
    for (int k = 0; k <= 512; ++k)
      gap = std::max(gap,
                     (again.grid_value(k) - res.trajectory.grid_value(k)).norm());
    CHECK(gap < 1e-9);
  }
}

TEST_CASE("constant drift has the closed-form convolution") {
  // x' = -2x + c with x(0) = 1: x(t) = e^{-2t} + c (1 - e^{-2t}) / 2.
  // The map does not depend on the iterate at all, so one sweep settles it.
  const double c = 0.8;
  ScalarSetup s;
  s.drift = [c](double, const SpectralField&) {
    return SpectralField(SpectralField::Constant(1, c));
  };
  s.drift_lipschitz = 0.0;
  const NeutralProblem p = s.build();
  const TimeGrid grid(1.0, 512);
  const EvolutionGrid evo(p.family, grid);
  const PicardResult res = picard_solve(p, evo);
  REQUIRE(res.report.converged);
  CHECK(res.report.windows.size() == 1);  // gamma == 0: no subdivision

  for (const double t : {0.25, 0.5, 1.0}) {
    const double expect = std::exp(-2.0 * t) + 0.5 * c * (1.0 - std::exp(-2.0 * t));
    CHECK(res.trajectory.value_at(t)(0) == Catch::Approx(expect).margin(1e-6));
  }
}

TEST_CASE("delayed linear problem matches the method-of-steps solution") {
  // x' = -2x(t) - x(t - 1/4), phi = 1, on [0, 1/2]:
  //   [0, 1/4]:  x = 1.5 e^{-2t} - 0.5
  //   [1/4,1/2]: x = e^{-2v}(x(1/4) - 1.5 v) + 0.25 (1 - e^{-2v}),  v = t - 1/4
  ScalarSetup s;
  s.drift = [](double, const SpectralField& x) { return SpectralField(-x); };
  s.drift_lipschitz = 1.0;
  s.rho = [](double) { return 0.25; };
  s.horizon = 0.5;
  const NeutralProblem p = s.build();
  const TimeGrid grid(0.5, 256);
  const EvolutionGrid evo(p.family, grid);
  const PicardResult res = picard_solve(p, evo);
  REQUIRE(res.report.converged);

  const double x_quarter = 1.5 * std::exp(-0.5) - 0.5;
  const auto oracle = [x_quarter](double t) {
    if (t <= 0.25) return 1.5 * std::exp(-2.0 * t) - 0.5;
    const double v = t - 0.25;
    return std::exp(-2.0 * v) * (x_quarter - 1.5 * v) +
           0.25 * (1.0 - std::exp(-2.0 * v));
  };
  double worst = 0.0;
  for (int k = 0; k <= 256; ++k)
    worst = std::max(worst,
                     std::abs(res.trajectory.grid_value(k)(0) - oracle(grid.point(k))));
  CHECK(worst < 1e-4);
}

TEST_CASE("per-sweep residuals contract at the predicted rate") {
  // On a window with gamma <= 0.9 the mean-square estimate yields
  // res_{k+1} <= gamma res_k; pathwise we allow 10% slack.  Iterate the map
  // explicitly on [0, T1] and watch the ratios.
  ScalarSetup s;
  s.drift = [](double, const SpectralField& x) {
    return SpectralField(0.8 * x.array().sin().matrix());
  };
  s.drift_lipschitz = 0.8;
  const NeutralProblem p = s.build();

  ProblemConstants frozen = p.constants;
  frozen.input_bound = 0.0;
  frozen.winv_bound = 0.0;
  double t1 = 1.0;
  if (contraction_constant(frozen, t1) > 0.9) {
    double lo = 0.0, hi = t1;
    for (int i = 0; i < 100; ++i) {
      const double mid = 0.5 * (lo + hi);
      (contraction_constant(frozen, mid) <= 0.9 ? lo : hi) = mid;
    }
    t1 = lo;
  }
  const double gamma = contraction_constant(frozen, t1);
  REQUIRE(gamma <= 0.9);

  // restrict the problem to [0, T1]
  ScalarSetup s1 = s;
  s1.horizon = t1;
  const NeutralProblem p1 = s1.build();
  const int steps = 128;
  const TimeGrid grid(t1, steps);
  const EvolutionGrid evo(p1.family, grid);

  Trajectory x(p1.history, grid);
  for (int k = 1; k <= steps; ++k) x.set_grid_value(k, evo.apply(k, 0, x.grid_value(0)));

  double prev_res = -1.0;
  for (int sweep = 0; sweep < 40; ++sweep) {
    const Trajectory next = apply_psi(p1, evo, x);
    double res = 0.0;
    for (int k = 0; k <= steps; ++k)
      res = std::max(res, (next.grid_value(k) - x.grid_value(k)).norm());
    if (prev_res > 0.0 && prev_res > 1e-12)
      CHECK(res <= 1.1 * gamma * prev_res);
    prev_res = res;
    x = next;
    if (res < 1e-12) break;
  }
  CHECK(prev_res < 1e-10);
}

TEST_CASE("non-convergence carries the residual history") {
  ScalarSetup s;
  s.drift = [](double, const SpectralField& x) { return SpectralField(-x); };
  s.drift_lipschitz = 1.0;
  const NeutralProblem p = s.build();
  const TimeGrid grid(1.0, 64);
  const EvolutionGrid evo(p.family, grid);
  try {
    picard_solve(p, evo, nullptr, nullptr, 1e-14, 2);
    FAIL("expected ConvergenceError");
  } catch (const ConvergenceError& e) {
    CHECK_FALSE(e.residual_history.empty());
    CHECK(std::string(e.what()).find("sweep") != std::string::npos);
  }
}

TEST_CASE("warm start reproduces the cold solution") {
  ScalarSetup s;
  s.drift = [](double, const SpectralField& x) {
    return SpectralField(0.5 * x.array().cos().matrix());
  };
  s.drift_lipschitz = 0.5;
  const NeutralProblem p = s.build();
  const TimeGrid grid(1.0, 128);
  const EvolutionGrid evo(p.family, grid);

  const PicardResult cold = picard_solve(p, evo);
  const PicardResult warm =
      picard_solve(p, evo, nullptr, nullptr, 1e-10, 200, &cold.trajectory);
  REQUIRE(warm.report.converged);
  CHECK(warm.report.total_sweeps <= cold.report.total_sweeps);
  double gap = 0.0;
  for (int k = 0; k <= 128; ++k)
    gap = std::max(gap,
                   (warm.trajectory.grid_value(k) - cold.trajectory.grid_value(k)).norm());
  CHECK(gap < 1e-9);
}
