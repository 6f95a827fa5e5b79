// Reachability map, Gramian inversion, and the outer steering loop.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "nsfde/steering.hpp"
#include "test_fixtures.hpp"

using namespace nsfde;

namespace {

EvolutionFamily heat_family(int n_modes, double b = -1.0) {
  return EvolutionFamily(TimeVaryingGenerator(n_modes, Potential::constant_value(b)));
}

NeutralProblem trivial_problem(int n_modes) {
  // f = g = sigma = 0: the state is the free decay plus the control response
  DelayFunctions delays;
  delays.tau = 0.25;
  delays.r = [](double) { return 0.1; };
  delays.rho = [](double) { return 0.1; };
  ProblemConstants c;
  c.inverse_bound = 0.5;
  c.decay_beta = 2.0;
  c.input_bound = 1.0;
  c.horizon = 1.0;
  HistorySegment history(0.25, 4, [n_modes](double) {
    return SpectralField(SpectralField::Zero(n_modes));
  });
  const auto zero_map = [](double, const SpectralField& x) {
    return SpectralField(SpectralField::Zero(x.size()));
  };
  return NeutralProblem(heat_family(n_modes), zero_map, zero_map,
                        NoiseCoefficient::none(), delays, std::move(history), c);
}

}  // namespace

TEST_CASE("input operator scatter and gather") {
  const InputOperator b = InputOperator::first_modes(5, 2, 3.0);
  CHECK(b.controlled_count() == 2);
  CHECK(b.norm() == 3.0);

  Eigen::VectorXd u(2);
  u << 1.0, -2.0;
  const SpectralField x = b.apply(u);
  CHECK(x(0) == 3.0);
  CHECK(x(1) == -6.0);
  CHECK(x(2) == 0.0);

  const Eigen::VectorXd back = b.adjoint(x);
  CHECK(back(0) == 9.0);  // gain applied twice, as B*B u
  CHECK(back(1) == -18.0);

  CHECK_THROWS_AS(InputOperator(Eigen::VectorXd::Zero(3)), std::invalid_argument);
  CHECK_THROWS_AS(InputOperator::first_modes(3, 4), std::invalid_argument);
}

TEST_CASE("single-mode Gramian matches the closed-form integral") {
  // b = -1: U(1,s) e_1 = e^{-2(1-s)} e_1, so W_11 = int_0^1 e^{-4(1-s)} ds
  const auto pin = pinned("gramian_mode1 | b=-1 T=1");
  const TimeGrid grid(1.0, 512);
  const EvolutionGrid evo(heat_family(1), grid);
  const ControlSystem sys(evo, InputOperator::first_modes(1, 1));
  CHECK(sys.gramian()(0, 0) ==
        Catch::Approx(pin.value).epsilon(0).margin(pin.tolerance));
  CHECK(sys.min_eigenvalue() ==
        Catch::Approx(pin.value).epsilon(0).margin(pin.tolerance));
}

TEST_CASE("reachability map on a constant control") {
  // W(1) for a single mode: int_0^1 e^{-2(1-s)} ds = (1 - e^{-2}) / 2
  const auto pin = pinned("apply_w_mode1_const_u | b=-1 T=1 u=1");
  const TimeGrid grid(1.0, 512);
  const EvolutionGrid evo(heat_family(1), grid);
  const ControlSystem sys(evo, InputOperator::first_modes(1, 1));
  ControlSignal u{grid, std::vector<Eigen::VectorXd>(grid.size(), Eigen::VectorXd::Ones(1))};
  CHECK(apply_w(sys, u)(0) ==
        Catch::Approx(pin.value).epsilon(0).margin(pin.tolerance));
}

TEST_CASE("the reachability map inverts its Gramian representer exactly") {
  // apply_w(w_inverse(y)) must reproduce the controlled components of y to
  // round-off because both sides share quadrature weights and evolution
  // factors; this holds on any grid, coarse ones included.
  const int n = 6, nc = 4;
  std::mt19937_64 gen(2024);
  std::normal_distribution<double> normal;
  for (const int steps : {16, 64, 256}) {
    const TimeGrid grid(1.0, steps);
    const EvolutionGrid evo(heat_family(n), grid);
    const ControlSystem sys(evo, InputOperator::first_modes(n, nc, 0.8));
    SpectralField y(n);
    for (int i = 0; i < n; ++i) y(i) = normal(gen);

    const ControlSignal u = w_inverse(sys, y);
    const SpectralField reached = apply_w(sys, u);
    for (int c = 0; c < nc; ++c)
      CHECK(reached(c) == Catch::Approx(y(c)).epsilon(1e-11).margin(1e-12));
    // uncontrolled modes stay untouched by the input
    for (int i = nc; i < n; ++i) CHECK(reached(i) == 0.0);
  }
}

TEST_CASE("Gramian floor rejects effectively unreachable modes") {
  // a mode with a vanishing gain cannot appear among the controlled ones, so
  // emulate unreachability with a floor far above the smallest eigenvalue;
  // the error message must name the offending mode
  const TimeGrid grid(1.0, 64);
  const EvolutionGrid evo(heat_family(6), grid);
  try {
    const ControlSystem sys(evo, InputOperator::first_modes(6, 6), 0.5);
    FAIL("expected FactorizationError");
  } catch (const FactorizationError& e) {
    // mode 6 decays fastest, its Gramian column is the weakest
    CHECK(std::string(e.what()).find("mode 6") != std::string::npos);
  }
}

TEST_CASE("steering the trivial system hits the target in one outer pass") {
  const int n = 4;
  const NeutralProblem p = trivial_problem(n);
  const TimeGrid grid(1.0, 256);
  const EvolutionGrid evo(p.family, grid);
  const ControlSystem sys(evo, InputOperator::first_modes(n, n));

  SpectralField target(n);
  target << 0.4, -0.2, 0.1, 0.05;
  const SteerResult res = steer(p, sys, nullptr, target, 1e-9);
  REQUIRE(res.report.converged);
  // with f = g = 0 the psi map is control-affine: the first corrected control
  // is already exact and the loop stops after verifying that
  CHECK(res.report.outers.size() <= 2);
  CHECK(res.report.terminal_abs_error < 1e-8);
  CHECK((res.trajectory.grid_value(256) - target).norm() < 1e-8);

  SECTION("the control certificate replays from scratch") {
    GridForcing forcing{grid, {}};
    forcing.values.reserve(grid.size());
    for (int k = 0; k <= 256; ++k)
      forcing.values.push_back(p.constants.input_bound == 0.0
                                   ? SpectralField(SpectralField::Zero(n))
                                   : sys.input().apply(res.control.values[static_cast<std::size_t>(k)]));
    const PicardResult replay = picard_solve(p, evo, &forcing, nullptr);
    CHECK((replay.trajectory.grid_value(256) - target).norm() < 1e-8);
  }
}

TEST_CASE("partial control moves only the controlled block") {
  const int n = 5, nc = 2;
  const NeutralProblem p = trivial_problem(n);
  const TimeGrid grid(1.0, 128);
  const EvolutionGrid evo(p.family, grid);
  const ControlSystem sys(evo, InputOperator::first_modes(n, nc));

  SpectralField target(n);
  target << 0.3, 0.2, 100.0, -5.0, 7.0;  // unreachable junk outside the block
  const SteerResult res = steer(p, sys, nullptr, target, 1e-9);
  REQUIRE(res.report.converged);
  // controlled components reached
  for (int c = 0; c < nc; ++c)
    CHECK(res.trajectory.grid_value(128)(c) == Catch::Approx(target(c)).margin(1e-8));
  // uncontrolled ones follow the free dynamics (zero here), not the target
  for (int i = nc; i < n; ++i)
    CHECK(std::abs(res.trajectory.grid_value(128)(i)) < 1e-12);
  // and the reported relative error is measured on the controlled block only
  CHECK(res.report.terminal_rel_error < 1e-8);
}

TEST_CASE("control energy uses the shared trapezoid rule") {
  const TimeGrid grid(2.0, 4);
  ControlSignal u{grid, {}};
  for (int k = 0; k <= 4; ++k)
    u.values.push_back(Eigen::VectorXd::Constant(1, static_cast<double>(k)));
  // trapezoid of u(t)^2 = (2t)^2 on [0,2] with h = 0.5:
  // 0.25 * (0 + 2 + 8 + 18 + 16) = 11  -> sqrt(11)
  CHECK(u.energy() == Catch::Approx(std::sqrt(11.0)));
}
