// Problem assembly: history segments, trajectories, delay validation, and the
// hypothesis gates enforced at construction.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "nsfde/problem.hpp"

using namespace nsfde;

namespace {

HistorySegment ramp_history(double tau, int modes) {
  return HistorySegment(tau, 32, [modes](double t) {
    return SpectralField(SpectralField::Constant(modes, 1.0 + t));
  });
}

NeutralProblem make_problem(double neutral_lip, double inverse_bound) {
  EvolutionFamily fam(TimeVaryingGenerator(2, Potential::constant_value(-1.0)));
  DelayFunctions delays;
  delays.tau = 0.5;
  delays.r = [](double) { return 0.25; };
  delays.rho = [](double) { return 0.1; };
  ProblemConstants c;
  c.lipschitz = 0.1;
  c.neutral_lipschitz = neutral_lip;
  c.inverse_bound = inverse_bound;
  c.decay_beta = 2.0;
  c.horizon = 1.0;
  const auto zero_map = [](double, const SpectralField& x) {
    return SpectralField(SpectralField::Zero(x.size()));
  };
  return NeutralProblem(std::move(fam), zero_map, zero_map, NoiseCoefficient::none(),
                        delays, ramp_history(0.5, 2), c);
}

}  // namespace

TEST_CASE("history segment interpolation") {
  const HistorySegment h(1.0, 4, [](double t) {
    return SpectralField(SpectralField::Constant(3, t * t));
  });
  CHECK(h.tau() == 1.0);
  CHECK(h.modes() == 3);
  CHECK(h.at(0.0)(0) == Catch::Approx(0.0).margin(1e-15));
  CHECK(h.at(-1.0)(0) == Catch::Approx(1.0));
  // sample points are exact, in between is linear
  CHECK(h.at(-0.5)(1) == Catch::Approx(0.25));
  CHECK(h.at(-0.375)(0) == Catch::Approx(0.5 * (0.25 + 0.0625)));

  CHECK_THROWS_AS(h.at(0.5), std::domain_error);
  CHECK_THROWS_AS(h.at(-1.5), std::domain_error);
}

TEST_CASE("trajectory lookup spans history and grid") {
  const TimeGrid grid(1.0, 4);
  Trajectory x(ramp_history(0.5, 2), grid);
  // fill with x_n(t_k) = k
  for (int k = 0; k <= 4; ++k)
    x.set_grid_value(k, SpectralField::Constant(2, static_cast<double>(k)));

  CHECK(x.value_at(-0.25)(0) == Catch::Approx(0.75));  // history side
  CHECK(x.value_at(0.5)(0) == Catch::Approx(2.0));     // grid point
  CHECK(x.value_at(0.625)(1) == Catch::Approx(2.5));   // interpolated
  CHECK(x.value_at(1.0)(0) == Catch::Approx(4.0));
  CHECK_THROWS_AS(x.value_at(1.1), std::domain_error);

  SECTION("negative times delegate to the history segment") {
    CHECK((x.value_at(-0.5) - ramp_history(0.5, 2).at(-0.5)).cwiseAbs().maxCoeff() ==
          0.0);
  }
}

TEST_CASE("delay validation sweeps the horizon") {
  DelayFunctions d;
  d.tau = 0.3;
  d.r = [](double t) { return 0.2 + 0.2 * std::sin(5.0 * t); };  // exceeds tau
  d.rho = [](double) { return 0.1; };
  CHECK_THROWS_AS(d.validate(1.0), std::domain_error);

  d.r = [](double t) { return 0.1 + 0.1 * std::sin(5.0 * t); };
  CHECK_NOTHROW(d.validate(1.0));

  d.rho = [](double t) { return t < 0.9 ? 0.1 : -0.01; };  // negative late
  CHECK_THROWS_AS(d.validate(1.0), std::domain_error);
}

TEST_CASE("neutral problem construction gates") {
  SECTION("valid constants pass") { CHECK_NOTHROW(make_problem(0.65, 0.5)); }

  SECTION("contraction gate rejects Lip(Ag) * M* >= 1/sqrt(6)") {
    CHECK_THROWS_AS(make_problem(1.0, 0.5), HypothesisViolation);
    try {
      make_problem(1.0, 0.5);
    } catch (const HypothesisViolation& e) {
      CHECK(std::string(e.what()).find("1/sqrt(6)") != std::string::npos);
    }
  }

  SECTION("history depth must equal the delay bound") {
    EvolutionFamily fam(TimeVaryingGenerator(2, Potential::constant_value(-1.0)));
    DelayFunctions delays;
    delays.tau = 0.5;
    delays.r = [](double) { return 0.25; };
    delays.rho = [](double) { return 0.1; };
    ProblemConstants c;
    c.horizon = 1.0;
    const auto zero_map = [](double, const SpectralField& x) {
      return SpectralField(SpectralField::Zero(x.size()));
    };
    CHECK_THROWS_AS(NeutralProblem(std::move(fam), zero_map, zero_map,
                                   NoiseCoefficient::none(), delays,
                                   ramp_history(0.4, 2), c),
                    std::invalid_argument);
  }
}

TEST_CASE("grid forcing shape checks") {
  const TimeGrid grid(1.0, 8);
  GridForcing f{grid, std::vector<SpectralField>(9, SpectralField::Zero(3))};
  CHECK_NOTHROW(f.check(grid, 3));
  CHECK_THROWS_AS(f.check(grid, 2), std::invalid_argument);
  CHECK_THROWS_AS(f.check(TimeGrid(1.0, 4), 3), std::invalid_argument);

  GridForcing g{grid, std::vector<SpectralField>(5, SpectralField::Zero(3))};
  CHECK_THROWS_AS(g.check(grid, 3), std::invalid_argument);
}
