#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nsfde/errors.hpp"
#include "nsfde/problem.hpp"
#include "nsfde/steering.hpp"

namespace nsfde {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Named ingredient specs.  Everything a scenario may reference comes from a
// small registry with known Lipschitz/growth constants, so the hypothesis
// checks can be performed honestly instead of trusting user expressions.
// ---------------------------------------------------------------------------

struct MapSpec {
  std::string type = "zero";  // zero | linear | scaled-sine
  double c = 0.0;

  double lipschitz() const { return type == "zero" ? 0.0 : std::abs(c); }
  // squared-form linear growth constant: ||f(x)||^2 <= growth * (1 + ||x||^2)
  double growth() const {
    if (type == "zero") return 0.0;
    if (type == "linear") return c * c;
    return kPi * c * c;  // scaled-sine image is bounded by |c| sqrt(pi)
  }
};

struct DelaySpec {
  std::string type = "constant";  // constant | sinusoidal
  double value = 0.0;             // constant case
  double center = 0.0, amplitude = 0.0, frequency = 0.0, phase = 0.0;

  double eval(double t) const {
    if (type == "constant") return value;
    return center + amplitude * std::sin(frequency * t + phase);
  }
  double max_value() const {
    return type == "constant" ? value : center + std::abs(amplitude);
  }
  double min_value() const {
    return type == "constant" ? value : center - std::abs(amplitude);
  }
};

struct PotentialSpec {
  std::string type = "constant";  // constant | time-sinusoidal | nodal
  double value = -1.0;            // constant case
  double base = -1.0, amplitude = 0.0, frequency = 0.0;  // time-sinusoidal
  double space_amplitude = 0.0;                           // nodal extra term

  double margin() const {  // gamma_pot: b <= -margin everywhere
    if (type == "constant") return -value;
    return -(base + std::abs(amplitude) + std::abs(space_amplitude));
  }
  double sup_abs() const {  // sup |b|
    if (type == "constant") return std::abs(value);
    return std::abs(base) + std::abs(amplitude) + std::abs(space_amplitude);
  }
};

struct SigmaSpec {
  std::string type = "zero";  // zero | constant | sinusoidal
  double base = 0.0, amplitude = 0.0, frequency = 0.0, phase = 0.0;
  double mode_decay = 0.0;  // sigma_n gets an extra n^{-mode_decay}

  double sup_abs() const {
    if (type == "zero") return 0.0;
    if (type == "constant") return std::abs(base);
    return std::abs(base) + std::abs(amplitude);
  }
  double scalar(double t) const {
    if (type == "zero") return 0.0;
    if (type == "constant") return base;
    return base + amplitude * std::sin(frequency * t + phase);
  }
};

struct FieldSpec {
  std::string type = "zero";  // zero | constant-modes | ramp-modes | power-modes | unit-mode
  double scale = 0.0;
  double decay = 0.0;  // n^{-decay}
  double slope = 0.0;  // ramp-modes: factor (1 + slope * t)
  int mode = 1;        // unit-mode

  SpectralField eval(int n_modes, double t) const {
    SpectralField x = SpectralField::Zero(n_modes);
    if (type == "zero") return x;
    if (type == "unit-mode") {
      x(mode - 1) = scale;
      return x;
    }
    for (int n = 0; n < n_modes; ++n) {
      double v = scale * std::pow(static_cast<double>(n + 1), -decay);
      if (type == "ramp-modes") v *= 1.0 + slope * t;
      x(n) = v;
    }
    return x;
  }
};

// ---------------------------------------------------------------------------
// Parsed scenario.
// ---------------------------------------------------------------------------

struct ScenarioConfig {
  double hurst = 0.75;
  double horizon = 1.0;
  int steps = 512;
  int n_modes = 8;
  int n_controlled = 8;

  std::string covariance_rule = "power";  // power | list
  double covariance_exponent = 2.0;
  double covariance_scale = 1.0;
  std::vector<double> covariance_values;  // list rule

  PotentialSpec potential;
  MapSpec drift;    // f
  MapSpec neutral;  // g
  double tau = 0.5;
  DelaySpec delay_r;    // neutral-term delay
  DelaySpec delay_rho;  // drift delay
  FieldSpec history;
  SigmaSpec sigma;
  FieldSpec target;

  double input_gain = 1.0;
  double gramian_floor = 1e-12;
  double solver_tol = 1e-10;
  double steer_tol = 1e-9;

  std::uint64_t seed = 1;
  int paths = 100;
  std::string output_dir = "out";

  json echo;  // normalized form; re-parses to an equal config

  // --- derived model constants -------------------------------------------
  double gamma_pot() const { return potential.margin(); }
  double decay_m() const { return 1.0; }
  double decay_beta() const { return gamma_pot() + 1.0; }
  double inverse_bound() const { return 1.0 / (1.0 + gamma_pot()); }
  double lipschitz_shared() const {
    return std::max(drift.lipschitz(), neutral.lipschitz());
  }
  double growth_shared() const { return std::max(drift.growth(), neutral.growth()); }
  // Lip of A(t) g(t,.): |c_g| (N^2 + sup|b|) on the truncated space
  double neutral_lipschitz() const {
    return neutral.lipschitz() *
           (static_cast<double>(n_modes) * n_modes + potential.sup_abs());
  }
  double trace_q() const {
    double acc = 0.0;
    for (int n = 0; n < n_modes; ++n) acc += lambda(n);
    return acc;
  }
  double lambda(int n) const {
    if (covariance_rule == "list") return covariance_values.at(static_cast<std::size_t>(n));
    return covariance_scale * std::pow(static_cast<double>(n + 1), -covariance_exponent);
  }
  double noise_bound() const {
    double acc = 0.0;
    for (int n = 0; n < n_modes; ++n)
      acc += lambda(n) * std::pow(static_cast<double>(n + 1), -2.0 * sigma.mode_decay);
    return sigma.sup_abs() * std::sqrt(acc);
  }

  ProblemConstants constants() const {
    ProblemConstants c;
    c.lipschitz = lipschitz_shared();
    c.growth = growth_shared();
    c.neutral_lipschitz = neutral_lipschitz();
    c.inverse_bound = inverse_bound();
    c.noise_bound = noise_bound();
    c.decay_m = decay_m();
    c.decay_beta = decay_beta();
    c.horizon = horizon;
    return c;
  }
};

namespace detail {

inline double get_num(const json& j, const char* key, double dflt) {
  auto it = j.find(key);
  return it == j.end() ? dflt : it->get<double>();
}

inline MapSpec parse_map(const json& j) {
  MapSpec m;
  if (j.is_null()) return m;
  m.type = j.value("type", "zero");
  m.c = get_num(j, "c", 0.0);
  if (m.type != "zero" && m.type != "linear" && m.type != "scaled-sine")
    throw std::invalid_argument("unknown nonlinearity type '" + m.type +
                                "' (registry: zero | linear | scaled-sine)");
  return m;
}

inline DelaySpec parse_delay(const json& j) {
  DelaySpec d;
  d.type = j.value("type", "constant");
  if (d.type == "constant") {
    d.value = get_num(j, "value", 0.0);
  } else if (d.type == "sinusoidal") {
    d.center = get_num(j, "center", 0.0);
    d.amplitude = get_num(j, "amplitude", 0.0);
    d.frequency = get_num(j, "frequency", 0.0);
    d.phase = get_num(j, "phase", 0.0);
  } else {
    throw std::invalid_argument("unknown delay type '" + d.type +
                                "' (constant | sinusoidal)");
  }
  return d;
}

inline FieldSpec parse_field(const json& j) {
  FieldSpec f;
  if (j.is_null()) return f;
  f.type = j.value("type", "zero");
  f.scale = get_num(j, "scale", 0.0);
  f.decay = get_num(j, "decay", 0.0);
  f.slope = get_num(j, "slope", 0.0);
  f.mode = static_cast<int>(get_num(j, "mode", 1));
  if (f.type != "zero" && f.type != "constant-modes" && f.type != "ramp-modes" &&
      f.type != "power-modes" && f.type != "unit-mode")
    throw std::invalid_argument("unknown field type '" + f.type + "'");
  return f;
}

}  // namespace detail

// Parse + validate a scenario document.  Structural problems (bad JSON,
// unknown registry names) throw immediately with position context from the
// JSON parser; semantic violations of the model hypotheses are collected in
// full and thrown together, each naming its hypothesis.
inline ScenarioConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }

  ScenarioConfig c;
  c.hurst = detail::get_num(j, "hurst", c.hurst);
  if (j.contains("grid")) {
    c.horizon = detail::get_num(j["grid"], "horizon", c.horizon);
    c.steps = static_cast<int>(detail::get_num(j["grid"], "steps", c.steps));
  }
  if (j.contains("modes")) {
    c.n_modes = static_cast<int>(detail::get_num(j["modes"], "state", c.n_modes));
    c.n_controlled =
        static_cast<int>(detail::get_num(j["modes"], "controlled", c.n_controlled));
  }
  if (j.contains("covariance")) {
    const json& q = j["covariance"];
    c.covariance_rule = q.value("rule", "power");
    c.covariance_exponent = detail::get_num(q, "exponent", c.covariance_exponent);
    c.covariance_scale = detail::get_num(q, "scale", c.covariance_scale);
    if (q.contains("values"))
      c.covariance_values = q["values"].get<std::vector<double>>();
    if (c.covariance_rule != "power" && c.covariance_rule != "list")
      throw std::invalid_argument("unknown covariance rule '" + c.covariance_rule + "'");
  }
  if (j.contains("potential")) {
    const json& p = j["potential"];
    c.potential.type = p.value("type", "constant");
    c.potential.value = detail::get_num(p, "value", c.potential.value);
    c.potential.base = detail::get_num(p, "base", c.potential.base);
    c.potential.amplitude = detail::get_num(p, "amplitude", 0.0);
    c.potential.frequency = detail::get_num(p, "frequency", 0.0);
    c.potential.space_amplitude = detail::get_num(p, "space_amplitude", 0.0);
    if (c.potential.type != "constant" && c.potential.type != "time-sinusoidal" &&
        c.potential.type != "nodal")
      throw std::invalid_argument("unknown potential type '" + c.potential.type + "'");
  }
  c.drift = detail::parse_map(j.contains("drift") ? j["drift"] : json());
  c.neutral = detail::parse_map(j.contains("neutral") ? j["neutral"] : json());
  if (j.contains("delays")) {
    const json& d = j["delays"];
    c.tau = detail::get_num(d, "tau", c.tau);
    if (d.contains("r")) c.delay_r = detail::parse_delay(d["r"]);
    if (d.contains("rho")) c.delay_rho = detail::parse_delay(d["rho"]);
  }
  c.history = detail::parse_field(j.contains("history") ? j["history"] : json());
  if (j.contains("sigma")) {
    const json& s = j["sigma"];
    c.sigma.type = s.value("type", "zero");
    c.sigma.base = detail::get_num(s, "base", 0.0);
    c.sigma.amplitude = detail::get_num(s, "amplitude", 0.0);
    c.sigma.frequency = detail::get_num(s, "frequency", 0.0);
    c.sigma.phase = detail::get_num(s, "phase", 0.0);
    c.sigma.mode_decay = detail::get_num(s, "mode_decay", 0.0);
    if (c.sigma.type != "zero" && c.sigma.type != "constant" && c.sigma.type != "sinusoidal")
      throw std::invalid_argument("unknown sigma type '" + c.sigma.type + "'");
  }
  c.target = detail::parse_field(j.contains("target") ? j["target"] : json());
  if (j.contains("control")) {
    c.input_gain = detail::get_num(j["control"], "input_gain", c.input_gain);
    c.gramian_floor = detail::get_num(j["control"], "gramian_floor", c.gramian_floor);
  }
  if (j.contains("tolerances")) {
    c.solver_tol = detail::get_num(j["tolerances"], "solver", c.solver_tol);
    c.steer_tol = detail::get_num(j["tolerances"], "steer", c.steer_tol);
  }
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  c.paths = static_cast<int>(detail::get_num(j, "paths", c.paths));
  c.output_dir = j.value("output_dir", c.output_dir);

  // ---- semantic validation: collect every violation -----------------------
  std::vector<std::string> bad;
  if (!(c.hurst > 0.0 && c.hurst < 1.0))
    bad.push_back("Hurst parameter must lie in (0,1)");
  else if (!(c.hurst > 0.5) && c.sigma.type != "zero")
    bad.push_back("noisy scenarios need a Hurst parameter in (1/2,1) for the "
                  "pathwise stochastic integrals");
  if (!(c.horizon > 0.0)) bad.push_back("grid horizon must be positive");
  if (c.steps < 1) bad.push_back("grid needs at least one step");
  if (c.n_modes < 1) bad.push_back("state mode count must be >= 1");
  if (c.n_controlled < 1 || c.n_controlled > c.n_modes)
    bad.push_back("controlled mode count must satisfy 1 <= N_ctrl <= N");

  if (c.covariance_rule == "power" && !(c.covariance_exponent > 1.0))
    bad.push_back("trace-class requirement: eigenvalue rule lambda_n = n^{-p} needs p > 1 "
                  "(the extended sequence must be summable)");
  if (c.covariance_rule == "list" &&
      static_cast<int>(c.covariance_values.size()) != c.n_modes)
    bad.push_back("covariance value list must have one entry per state mode");

  if (!(c.potential.margin() > 0.0))
    bad.push_back("(H.1): potential must satisfy b(t,z) <= -gamma_pot < 0; configured "
                  "margin is " + std::to_string(c.potential.margin()));

  const double gate = c.neutral_lipschitz() * c.inverse_bound();
  if (!(gate < 1.0 / std::sqrt(6.0)))
    bad.push_back("(H.3): neutral-term smallness requires Lip(Ag) * sup||A^{-1}|| < "
                  "1/sqrt(6) ~ 0.40825; configured value is " + std::to_string(gate));

  if (!(c.tau > 0.0)) bad.push_back("(H.4): history depth tau must be positive");
  for (const auto* d : {&c.delay_r, &c.delay_rho}) {
    if (d->min_value() < 0.0 || d->max_value() > c.tau + 1e-12) {
      bad.push_back("(H.4): delay range [" + std::to_string(d->min_value()) + ", " +
                    std::to_string(d->max_value()) + "] must stay within [0, tau]");
      break;
    }
  }

  if (c.sigma.type != "zero" && !(c.noise_bound() > 0.0))
    bad.push_back("(H.5): configured noise coefficient has a zero Hilbert-Schmidt "
                  "bound; use type 'zero' for the deterministic problem");
  if (!std::isfinite(c.noise_bound()))
    bad.push_back("(H.5): noise coefficient bound must be finite");

  if (!(c.solver_tol > 0.0) || !(c.steer_tol > 0.0))
    bad.push_back("tolerances must be positive");
  if (c.paths < 1) bad.push_back("path count must be >= 1");

  if (!bad.empty()) throw HypothesisViolation(std::move(bad));

  // ---- normalized echo ----------------------------------------------------
  json e;
  e["hurst"] = c.hurst;
  e["grid"] = {{"horizon", c.horizon}, {"steps", c.steps}};
  e["modes"] = {{"state", c.n_modes}, {"controlled", c.n_controlled}};
  if (c.covariance_rule == "power")
    e["covariance"] = {{"rule", "power"},
                       {"exponent", c.covariance_exponent},
                       {"scale", c.covariance_scale}};
  else
    e["covariance"] = {{"rule", "list"}, {"values", c.covariance_values}};
  if (c.potential.type == "constant")
    e["potential"] = {{"type", "constant"}, {"value", c.potential.value}};
  else
    e["potential"] = {{"type", c.potential.type},
                      {"base", c.potential.base},
                      {"amplitude", c.potential.amplitude},
                      {"frequency", c.potential.frequency},
                      {"space_amplitude", c.potential.space_amplitude}};
  e["drift"] = {{"type", c.drift.type}, {"c", c.drift.c}};
  e["neutral"] = {{"type", c.neutral.type}, {"c", c.neutral.c}};
  auto delay_json = [](const DelaySpec& d) -> json {
    if (d.type == "constant") return {{"type", "constant"}, {"value", d.value}};
    return {{"type", "sinusoidal"},
            {"center", d.center},
            {"amplitude", d.amplitude},
            {"frequency", d.frequency},
            {"phase", d.phase}};
  };
  e["delays"] = {{"tau", c.tau}, {"r", delay_json(c.delay_r)}, {"rho", delay_json(c.delay_rho)}};
  auto field_json = [](const FieldSpec& f) -> json {
    return {{"type", f.type}, {"scale", f.scale}, {"decay", f.decay},
            {"slope", f.slope}, {"mode", f.mode}};
  };
  e["history"] = field_json(c.history);
  e["sigma"] = {{"type", c.sigma.type},       {"base", c.sigma.base},
                {"amplitude", c.sigma.amplitude}, {"frequency", c.sigma.frequency},
                {"phase", c.sigma.phase},     {"mode_decay", c.sigma.mode_decay}};
  e["target"] = field_json(c.target);
  e["control"] = {{"input_gain", c.input_gain}, {"gramian_floor", c.gramian_floor}};
  e["tolerances"] = {{"solver", c.solver_tol}, {"steer", c.steer_tol}};
  e["seed"] = c.seed;
  e["paths"] = c.paths;
  e["output_dir"] = c.output_dir;
  c.echo = std::move(e);
  return c;
}

// ---------------------------------------------------------------------------
// Concrete model objects from a validated config.
// ---------------------------------------------------------------------------

struct ScenarioInstance {
  ScenarioConfig config;
  HurstParameter hurst;
  TimeGrid grid;
  CovarianceOperator covariance;
  NeutralProblem problem;
  InputOperator input;
  SpectralField target;
};

inline FieldMap make_field_map(const MapSpec& spec, int n_modes) {
  if (spec.type == "zero") {
    return [n_modes](double, const SpectralField&) {
      return SpectralField(SpectralField::Zero(n_modes));
    };
  }
  if (spec.type == "linear") {
    const double c = spec.c;
    return [c](double, const SpectralField& x) { return SpectralField(c * x); };
  }
  // scaled-sine: c * P sin( synth(x) ); exact Lipschitz constant |c| because
  // synthesis/analysis are a scaled isometry pair on the truncated space.
  const double c = spec.c;
  auto basis = std::make_shared<SineBasis>(n_modes);
  return [c, basis](double, const SpectralField& x) {
    Eigen::VectorXd u = basis->to_nodal(x);
    for (int j = 0; j < u.size(); ++j) u(j) = std::sin(u(j));
    return SpectralField(c * basis->to_spectral(u));
  };
}

inline Potential make_potential(const PotentialSpec& spec) {
  if (spec.type == "constant") return Potential::constant_value(spec.value);
  if (spec.type == "time-sinusoidal") {
    const double base = spec.base, amp = spec.amplitude, freq = spec.frequency;
    return Potential::constant(
        [base, amp, freq](double t) { return base + amp * std::sin(freq * t); },
        spec.margin());
  }
  const double base = spec.base, amp = spec.amplitude, freq = spec.frequency,
               samp = spec.space_amplitude;
  return Potential::nodal(
      [base, amp, freq, samp](double t, double z) {
        return base + amp * std::sin(freq * t) + samp * std::sin(z);
      },
      spec.margin());
}

inline NoiseCoefficient make_noise(const SigmaSpec& spec, int n_modes, double bound) {
  if (spec.type == "zero") return NoiseCoefficient::none();
  NoiseCoefficient nc;
  nc.n_modes = n_modes;
  nc.hs_bound = bound;
  const SigmaSpec s = spec;
  nc.modes = [s, n_modes](double t) {
    Eigen::VectorXd v(n_modes);
    const double scalar = s.scalar(t);
    for (int n = 0; n < n_modes; ++n)
      v(n) = scalar * std::pow(static_cast<double>(n + 1), -s.mode_decay);
    return v;
  };
  return nc;
}

inline CovarianceOperator make_covariance(const ScenarioConfig& c) {
  if (c.covariance_rule == "power")
    return CovarianceOperator::power(c.n_modes, c.covariance_exponent, c.covariance_scale);
  Eigen::VectorXd lam(c.n_modes);
  for (int n = 0; n < c.n_modes; ++n) lam(n) = c.covariance_values[static_cast<std::size_t>(n)];
  return CovarianceOperator(std::move(lam));
}

inline ScenarioInstance build_scenario(const ScenarioConfig& c) {
  TimeGrid grid(c.horizon, c.steps);
  EvolutionFamily family(TimeVaryingGenerator(c.n_modes, make_potential(c.potential)));

  DelayFunctions delays;
  delays.tau = c.tau;
  const DelaySpec r = c.delay_r, rho = c.delay_rho;
  delays.r = [r](double t) { return r.eval(t); };
  delays.rho = [rho](double t) { return rho.eval(t); };

  const FieldSpec hist = c.history;
  const int n_modes = c.n_modes;
  HistorySegment history(c.tau, 64, [hist, n_modes](double t) {
    return hist.eval(n_modes, t);
  });

  NeutralProblem problem(std::move(family), make_field_map(c.drift, c.n_modes),
                         make_field_map(c.neutral, c.n_modes),
                         make_noise(c.sigma, c.n_modes, c.noise_bound()), delays,
                         std::move(history), c.constants());

  return ScenarioInstance{c,
                          HurstParameter(c.hurst),
                          std::move(grid),
                          make_covariance(c),
                          std::move(problem),
                          InputOperator::first_modes(c.n_modes, c.n_controlled, c.input_gain),
                          c.target.eval(c.n_modes, 0.0)};
}

}  // namespace nsfde
