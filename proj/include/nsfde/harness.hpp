#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "nsfde/scenario.hpp"
#include "nsfde/stats.hpp"
#include "nsfde/version.hpp"

namespace nsfde {

struct CheckResult {
  std::string name;
  bool pass = false;
  double value = 0.0;
  double bound = 0.0;
  std::string note;
};

struct RunReport {
  std::string command;
  std::vector<CheckResult> checks;
  json summary;
  json document;  // full JSON written to disk
  std::vector<std::string> files_written;

  bool ok() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return true;
  }
};

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<int> paths;
  std::optional<std::string> out_dir;  // CLI flag; env override applied by caller
  std::optional<double> tol;
};

namespace detail {

inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Collects everything written so a failed run can remove partial outputs.
class OutputSink {
 public:
  explicit OutputSink(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  std::filesystem::path path(const std::string& name) const { return dir_ / name; }

  void write_text(const std::string& name, const std::string& text) {
    const auto p = path(name);
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + p.string() + " for writing");
    out << text;
    if (!out) throw std::runtime_error("write failed for " + p.string());
    written_.push_back(p.string());
  }

  void remove_all_written() {
    for (const auto& f : written_) {
      std::error_code ec;
      std::filesystem::remove(f, ec);
    }
    written_.clear();
  }

  const std::vector<std::string>& written() const { return written_; }

 private:
  std::filesystem::path dir_;
  std::vector<std::string> written_;
};

inline std::string trajectory_csv(const Trajectory& x) {
  std::string s = "t";
  for (int n = 1; n <= x.modes(); ++n) s += ",mode_" + std::to_string(n);
  s += "\n";
  for (int k = 0; k <= x.grid().steps(); ++k) {
    s += format_g17(x.grid().point(k));
    const SpectralField& v = x.grid_value(k);
    for (int n = 0; n < x.modes(); ++n) s += "," + format_g17(v(n));
    s += "\n";
  }
  return s;
}

inline std::string control_csv(const ControlSignal& u) {
  const int nc = u.values.empty() ? 0 : static_cast<int>(u.values.front().size());
  std::string s = "t";
  for (int c = 1; c <= nc; ++c) s += ",u_" + std::to_string(c);
  s += "\n";
  for (int k = 0; k <= u.grid.steps(); ++k) {
    s += format_g17(u.grid.point(k));
    for (int c = 0; c < nc; ++c)
      s += "," + format_g17(u.values[static_cast<std::size_t>(k)](c));
    s += "\n";
  }
  return s;
}

inline json checks_json(const std::vector<CheckResult>& checks) {
  json arr = json::array();
  for (const auto& c : checks) {
    json j;
    j["name"] = c.name;
    j["pass"] = c.pass;
    j["value"] = c.value;
    j["bound"] = c.bound;
    if (!c.note.empty()) j["note"] = c.note;
    arr.push_back(std::move(j));
  }
  return arr;
}

// Run fn(i) for i in [0, count) on a small worker pool; results must be
// written into preallocated per-index slots so the output is independent of
// scheduling.
template <class Fn>
void parallel_for(int count, const Fn& fn) {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const int workers = static_cast<int>(std::min<unsigned>(hw, static_cast<unsigned>(count)));
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(error_mu);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// Linear interpolation of a control signal onto a refinement of its grid.
inline ControlSignal interpolate_control(const ControlSignal& u, const TimeGrid& fine) {
  ControlSignal out{fine, {}};
  out.values.reserve(fine.size());
  for (int k = 0; k <= fine.steps(); ++k) {
    const double t = fine.point(k);
    // locate on the coarse grid
    const TimeGrid& g = u.grid;
    int lo = 0, hi = g.steps();
    while (hi - lo > 1) {
      const int mid = (lo + hi) / 2;
      (g.point(mid) <= t ? lo : hi) = mid;
    }
    const double h = g.point(hi) - g.point(lo);
    const double w = std::min(std::max((t - g.point(lo)) / h, 0.0), 1.0);
    out.values.push_back((1.0 - w) * u.values[static_cast<std::size_t>(lo)] +
                         w * u.values[static_cast<std::size_t>(hi)]);
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Validation suites
// ---------------------------------------------------------------------------

// Statistical validation of the noise stack on a fixed 64-step grid over the
// scenario horizon.  Path counts: `paths` for the law checks, a documented
// 2000-path batch for the convolution energy bound.
inline std::vector<CheckResult> noise_suite(const ScenarioConfig& cfg,
                                            std::uint64_t seed, int paths) {
  std::vector<CheckResult> checks;
  const double T = cfg.horizon;
  const TimeGrid grid(T, 64);
  const HurstParameter h(cfg.hurst);
  const CovarianceOperator q = make_covariance(cfg);
  const double t2h = std::pow(T, 2.0 * cfg.hurst);

  {  // terminal variance and mid/terminal covariance against the exact law
    const FbmSampler sampler(h, grid);
    std::vector<double> x_mid(static_cast<std::size_t>(paths));
    std::vector<double> x_end(static_cast<std::size_t>(paths));
    for (int i = 0; i < paths; ++i) {
      const FbmPath p = sampler.draw(seed, static_cast<std::uint64_t>(i), 0);
      x_mid[static_cast<std::size_t>(i)] = p.values(32);
      x_end[static_cast<std::size_t>(i)] = p.values(64);
    }
    const MomentEstimate var = product_moment(x_end, x_end);
    CheckResult c1{"terminal-variance", false, var.value, t2h, ""};
    c1.pass = std::abs(var.value - t2h) <= 3.0 * var.se;
    c1.note = "3 SE = " + detail::format_g17(3.0 * var.se);
    checks.push_back(c1);

    const MomentEstimate cov = product_moment(x_mid, x_end);
    // R(T/2, T) = T^{2H}/2 for every H (the s and t-s powers cancel)
    CheckResult c2{"mid-terminal-covariance", false, cov.value, 0.5 * t2h, ""};
    c2.pass = std::abs(cov.value - 0.5 * t2h) <= 3.0 * cov.se;
    c2.note = "3 SE = " + detail::format_g17(3.0 * cov.se);
    checks.push_back(c2);

    // Two-construction cross-check: the kernel-representation sampler must
    // produce the same terminal law (two-sample KS at the 1% level).
    if (cfg.hurst > 0.5) {
      const KernelRepresentation krep(h, grid);
      std::vector<double> y_end(static_cast<std::size_t>(paths));
      const std::uint64_t seed2 = substream(seed, 0x6b73);
      for (int i = 0; i < paths; ++i)
        y_end[static_cast<std::size_t>(i)] =
            krep.draw(seed2, static_cast<std::uint64_t>(i)).values(64);
      const double d = two_sample_ks(x_end, y_end);
      const double thr = ks_threshold(x_end.size(), y_end.size());
      checks.push_back({"kernel-vs-cholesky-ks", d <= thr, d, thr, ""});
    } else {
      checks.push_back({"kernel-vs-cholesky-ks", true, 0.0, 0.0,
                        "skipped: kernel representation needs H > 1/2"});
    }
  }

  {  // H = 1/2 degenerate case: Brownian covariance min(s,t)
    const FbmSampler bm(HurstParameter(0.5), grid);
    const int n_bm = paths;
    GaussianStream idx_rng(substream(seed, 0xb101));
    int pair_idx[5][2];
    for (auto& pr : pair_idx) {
      pr[0] = 1 + static_cast<int>(idx_rng.unit() * 64) % 64;
      pr[1] = 1 + static_cast<int>(idx_rng.unit() * 64) % 64;
    }
    std::vector<std::vector<double>> xs(5), ys(5);
    for (auto& v : xs) v.resize(static_cast<std::size_t>(n_bm));
    for (auto& v : ys) v.resize(static_cast<std::size_t>(n_bm));
    for (int i = 0; i < n_bm; ++i) {
      const FbmPath p = bm.draw(substream(seed, 0xb102), static_cast<std::uint64_t>(i), 0);
      for (int k = 0; k < 5; ++k) {
        xs[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)] = p.values(pair_idx[k][0]);
        ys[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)] = p.values(pair_idx[k][1]);
      }
    }
    // worst deviation measured in units of its own 3-SE allowance
    double worst_ratio = 0.0;
    for (int k = 0; k < 5; ++k) {
      const MomentEstimate cov =
          product_moment(xs[static_cast<std::size_t>(k)], ys[static_cast<std::size_t>(k)]);
      const double expect =
          std::min(grid.point(pair_idx[k][0]), grid.point(pair_idx[k][1]));
      worst_ratio = std::max(worst_ratio, std::abs(cov.value - expect) / (3.0 * cov.se));
    }
    checks.push_back({"brownian-degenerate-covariance", worst_ratio <= 1.0, worst_ratio,
                      1.0, "worst |cov - min(s,t)| / (3 SE) over 5 random pairs"});
  }

  {  // cross-mode independence of the Q-fBm modes
    const FbmSampler sampler(h, grid);
    const int n = std::min(paths, 5000);
    Eigen::MatrixXd term(n, q.modes());
    for (int i = 0; i < n; ++i) {
      const QfbmPath p = sample_qfbm(sampler, q, substream(seed, 0x9f01),
                                     static_cast<std::uint64_t>(i));
      term.row(i) = p.values.row(64);
    }
    double worst = 0.0;
    int n_pairs = 0;
    for (int a = 0; a < q.modes(); ++a)
      for (int b = a + 1; b < q.modes(); ++b) {
        const double num = (term.col(a).array() * term.col(b).array()).mean();
        const double den = std::sqrt(term.col(a).squaredNorm() / n) *
                           std::sqrt(term.col(b).squaredNorm() / n);
        worst = std::max(worst, std::abs(num / den));
        ++n_pairs;
      }
    // Gaussian tail threshold for the max over all pairs at overall level 1%:
    // P(max |corr| > z/sqrt(n)) <~ n_pairs * 2 Phi(-z) = 0.01
    const double bound =
        std::sqrt(2.0 * std::log(2.0 * n_pairs / 0.01)) / std::sqrt(static_cast<double>(n));
    checks.push_back({"mode-independence", worst <= bound, worst, bound,
                      "max |corr| over " + std::to_string(n_pairs) + " mode pairs"});
  }

  {  // convolution energy bound E||Z(t)||^2 <= 2H t^{2H} M^2 L^2
    if (cfg.sigma.type == "zero") {
      checks.push_back({"convolution-energy-bound", true, 0.0, 0.0,
                        "skipped: deterministic scenario (sigma = 0)"});
    } else {
      const EvolutionFamily family(
          TimeVaryingGenerator(cfg.n_modes, make_potential(cfg.potential)));
      const NoiseCoefficient sigma = make_noise(cfg.sigma, cfg.n_modes, cfg.noise_bound());
      const FbmSampler sampler(h, grid);
      const int n_energy = 2000;
      const double m = cfg.decay_m();
      const double l = cfg.noise_bound();
      bool pass = true;
      double worst_ratio = 0.0;
      json detail_rows = json::array();
      for (const double frac : {0.25, 0.5, 1.0}) {
        const double t = frac * T;
        double acc = 0.0;
        for (int i = 0; i < n_energy; ++i) {
          const QfbmPath p = sample_qfbm(sampler, q, substream(seed, 0x5a01),
                                         static_cast<std::uint64_t>(i));
          acc += stochastic_convolution(family, sigma, p, t).squaredNorm();
        }
        const double estimate = acc / n_energy;
        const double bound =
            2.0 * cfg.hurst * std::pow(t, 2.0 * cfg.hurst) * m * m * l * l;
        if (estimate > bound) pass = false;
        worst_ratio = std::max(worst_ratio, estimate / bound);
        detail_rows.push_back({{"t", t}, {"estimate", estimate}, {"bound", bound}});
      }
      checks.push_back({"convolution-energy-bound", pass, worst_ratio, 1.0,
                        detail_rows.dump()});
    }
  }
  return checks;
}

// Deterministic validation of the evolution family.
inline std::vector<CheckResult> evolution_suite(const ScenarioConfig& cfg,
                                                std::uint64_t seed) {
  std::vector<CheckResult> checks;
  const EvolutionFamily family(
      TimeVaryingGenerator(cfg.n_modes, make_potential(cfg.potential)));
  const double T = cfg.horizon;
  GaussianStream rng(substream(seed, 0xe01));
  const auto rand_unit = [&rng]() {
    // fold a normal into (0,1) deterministically
    const double u = std::abs(rng.next());
    return u - std::floor(u);
  };
  const auto rand_field = [&rng](int n) {
    SpectralField x(n);
    for (int i = 0; i < n; ++i) x(i) = rng.next();
    return x;
  };

  {  // U(s,s) = I, exactly
    bool pass = true;
    for (int i = 0; i < 20; ++i) {
      const double s = rand_unit() * T;
      const SpectralField x = rand_field(cfg.n_modes);
      if ((evolution_apply(family, s, s, x) - x).cwiseAbs().maxCoeff() != 0.0) pass = false;
    }
    checks.push_back({"identity", pass, pass ? 0.0 : 1.0, 0.0, "U(s,s) x == x bitwise"});
  }

  {  // composition identity, exact for spatially constant potentials
    if (cfg.potential.type != "nodal") {
      double worst = 0.0;
      for (int i = 0; i < 100; ++i) {
        double a = rand_unit() * T, b = rand_unit() * T, c = rand_unit() * T;
        if (a > b) std::swap(a, b);
        if (b > c) std::swap(b, c);
        if (a > b) std::swap(a, b);
        const SpectralField x = rand_field(cfg.n_modes);
        const SpectralField two = evolution_apply(family, c, b, evolution_apply(family, b, a, x));
        const SpectralField one = evolution_apply(family, c, a, x);
        worst = std::max(worst, (two - one).norm() / std::max(one.norm(), 1e-300));
      }
      checks.push_back({"composition", worst <= 1e-10, worst, 1e-10,
                        "U(t,s) U(s,r) vs U(t,r), 100 random triples"});
    } else {
      checks.push_back({"composition", true, 0.0, 1e-10,
                        "skipped: nodal potential acts through basis projection, "
                        "identity holds only up to truncation"});
    }
  }

  {  // exponential stability against the declared envelope
    std::vector<StabilityProbe> probes;
    for (int i = 0; i < 100; ++i) {
      double s = rand_unit() * T, t = rand_unit() * T;
      if (s > t) std::swap(s, t);
      probes.push_back({t, s, rand_field(cfg.n_modes)});
    }
    const double worst = stability_margin(family, probes);
    checks.push_back({"stability-envelope", worst <= 1.0 + 1e-12, worst, 1.0 + 1e-12,
                      "||U(t,s)x|| / (M e^{-beta(t-s)} ||x||), 100 probes"});
  }

  {  // parabolic smoothing bound at three gap sizes
    bool pass = true;
    double worst = 0.0;
    for (const double dt : {0.01, 0.1, 1.0}) {
      const double ratio = smoothing_margin(family, dt);
      worst = std::max(worst, ratio);
      if (ratio > 1.0) pass = false;
    }
    checks.push_back({"smoothing", pass, worst, 1.0,
                      "dt * e * sup_n n^2 e^{-n^2 dt} over dt in {0.01, 0.1, 1}"});
  }

  {  // strong continuity in t
    const SpectralField x = rand_field(cfg.n_modes);
    const double s = 0.0, t = 0.5 * T;
    const SpectralField base = evolution_apply(family, t, s, x);
    double prev = -1.0;
    bool decreasing = true;
    double last = 0.0;
    for (const double step : {1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8}) {
      last = (evolution_apply(family, t + step * T, s, x) - base).norm();
      if (prev >= 0.0 && last > prev) decreasing = false;
      prev = last;
    }
    checks.push_back({"strong-continuity", decreasing && last <= 1e-6, last, 1e-6,
                      "||U(t+h,s)x - U(t,s)x|| along h -> 0"});
  }

  {  // resolvent bound sup_t ||A(t)^{-1}|| <= M*
    if (cfg.potential.type != "nodal") {
      double worst = 0.0;
      for (int i = 0; i <= 32; ++i) {
        const double t = T * i / 32.0;
        const double b = family.generator().potential()(t);
        worst = std::max(worst, 1.0 / (1.0 + std::abs(b)));
      }
      const double bound = family.generator().inverse_norm_bound();
      checks.push_back({"inverse-bound", worst <= bound + 1e-15, worst, bound,
                        "sup over probe times of 1/(1+|b(t)|)"});
    } else {
      checks.push_back({"inverse-bound", true, 0.0, 0.0,
                        "skipped: nodal potential (bound asserted for the "
                        "spatially constant case)"});
    }
  }
  return checks;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline RunReport run_command(const std::string& command, const ScenarioConfig& config,
                             const RunOptions& opts) {
  const std::uint64_t seed = opts.seed.value_or(config.seed);
  const int paths = opts.paths.value_or(config.paths);
  std::string out_dir = opts.out_dir.value_or(config.output_dir);
  if (const char* env = std::getenv("NSFDE_OUT"); env != nullptr && *env != '\0')
    out_dir = env;

  RunReport report;
  report.command = command;
  detail::OutputSink sink{out_dir};
  json summary;
  double jitter = 0.0;

  try {
    if (command == "validate-noise") {
      report.checks = noise_suite(config, seed, paths);
    } else if (command == "validate-evolution") {
      report.checks = evolution_suite(config, seed);
    } else if (command == "solve" || command == "steer") {
      ScenarioInstance inst = build_scenario(config);
      const EvolutionGrid evo(inst.problem.family, inst.grid);
      std::optional<QfbmPath> noise;
      if (!inst.problem.noise.zero()) {
        const FbmSampler sampler(inst.hurst, inst.grid);
        jitter = sampler.jitter();
        noise = sample_qfbm(sampler, inst.covariance, seed, 0);
      }
      if (command == "solve") {
        PicardResult res = picard_solve(inst.problem, evo, nullptr,
                                        noise ? &*noise : nullptr, config.solver_tol);
        sink.write_text("trajectory.csv", detail::trajectory_csv(res.trajectory));
        summary["windows"] = res.report.windows.size();
        summary["total_sweeps"] = res.report.total_sweeps;
        summary["final_residual"] = res.report.final_residual;
        summary["gamma_horizon"] = res.report.gamma_horizon;
        summary["window_target"] = res.report.window_target;
        summary["terminal_norm"] = res.trajectory.grid_value(inst.grid.steps()).norm();
        json windows = json::array();
        for (const auto& w : res.report.windows)
          windows.push_back({{"from", inst.grid.point(w.begin_index)},
                             {"to", inst.grid.point(w.end_index)},
                             {"gamma", w.gamma},
                             {"sweeps", w.sweeps},
                             {"residual", w.final_residual}});
        summary["window_detail"] = std::move(windows);
        report.checks.push_back({"solver-converged", res.report.converged,
                                 res.report.final_residual, config.solver_tol, ""});
      } else {
        const ControlSystem sys(evo, inst.input, config.gramian_floor);
        SteerResult res = steer(inst.problem, sys, noise ? &*noise : nullptr,
                                inst.target, config.steer_tol);
        sink.write_text("trajectory.csv", detail::trajectory_csv(res.trajectory));
        sink.write_text("control.csv", detail::control_csv(res.control));
        summary["terminal_abs_error"] = res.report.terminal_abs_error;
        summary["terminal_rel_error"] = res.report.terminal_rel_error;
        summary["terminal_abs_error_full"] = res.report.terminal_abs_error_full;
        summary["control_energy"] = res.report.control_energy;
        summary["outer_iterations"] = res.report.outers.size();
        summary["gramian_min_eigenvalue"] = res.report.gramian_min_eigenvalue;
        summary["winv_bound"] = res.report.winv_bound;
        summary["gamma_feedback_horizon"] = res.report.gamma_feedback_horizon;
        summary["replay_terminal_gap"] = res.report.replay_terminal_gap;
        const double tol = opts.tol.value_or(1e-6);
        report.checks.push_back({"steer-converged", res.report.converged,
                                 res.report.terminal_rel_error, tol, ""});
        report.checks.push_back({"terminal-relative-error",
                                 res.report.terminal_rel_error <= tol,
                                 res.report.terminal_rel_error, tol, ""});
        const double replay_bound = std::max(1e-8, 100.0 * config.steer_tol);
        report.checks.push_back({"replay-consistency",
                                 res.report.replay_terminal_gap <= replay_bound,
                                 res.report.replay_terminal_gap, replay_bound,
                                 "cold re-solve with the returned control"});
      }
    } else if (command == "mc-batch") {
      ScenarioInstance inst = build_scenario(config);
      if (inst.problem.noise.zero())
        throw std::invalid_argument("mc-batch: scenario has sigma = 0; use 'steer'");
      const TimeGrid fine(config.horizon, 2 * config.steps);
      const EvolutionGrid evo(inst.problem.family, inst.grid);
      const EvolutionGrid evo_fine(inst.problem.family, fine);
      const ControlSystem sys(evo, inst.input, config.gramian_floor);
      const FbmSampler sampler_fine(inst.hurst, fine);
      jitter = sampler_fine.jitter();

      struct PathRow {
        double same_grid_rel = 0.0, refined_rel = 0.0, energy = 0.0;
        int outers = 0, sweeps = 0;
      };
      std::vector<PathRow> rows(static_cast<std::size_t>(paths));
      const double target_scale = sys.restrict(inst.target).norm();
      detail::parallel_for(paths, [&](int i) {
        const QfbmPath noise_fine =
            sample_qfbm(sampler_fine, inst.covariance, seed, static_cast<std::uint64_t>(i));
        const QfbmPath noise = noise_fine.restricted(2);
        SteerResult res =
            steer(inst.problem, sys, &noise, inst.target, config.steer_tol);
        // re-simulate the returned open-loop control on the refined grid with
        // the restriction-consistent fine noise
        const ControlSignal u_fine = detail::interpolate_control(res.control, fine);
        GridForcing forcing{fine, {}};
        forcing.values.reserve(fine.size());
        for (int k = 0; k <= fine.steps(); ++k)
          forcing.values.push_back(inst.input.apply(u_fine.values[static_cast<std::size_t>(k)]));
        PicardResult refined = picard_solve(inst.problem, evo_fine, &forcing,
                                            &noise_fine, config.solver_tol);
        PathRow row;
        row.same_grid_rel = res.report.terminal_rel_error;
        row.refined_rel =
            (sys.restrict(refined.trajectory.grid_value(fine.steps())) -
             sys.restrict(inst.target)).norm() /
            (target_scale > 0.0 ? target_scale : 1.0);
        row.energy = res.report.control_energy;
        row.outers = static_cast<int>(res.report.outers.size());
        row.sweeps = res.report.last_inner.total_sweeps;
        rows[static_cast<std::size_t>(i)] = row;
      });

      std::vector<double> refined, same, energy;
      for (const auto& r : rows) {
        refined.push_back(r.refined_rel);
        same.push_back(r.same_grid_rel);
        energy.push_back(r.energy);
      }
      const double tol = opts.tol.value_or(1e-3);
      const double worst = *std::max_element(refined.begin(), refined.end());
      report.checks.push_back({"all-paths-refined-error", worst <= tol, worst, tol,
                               std::to_string(paths) + " paths"});
      summary["paths"] = paths;
      summary["median_refined_rel_error"] = median(refined);
      summary["max_refined_rel_error"] = worst;
      summary["median_same_grid_rel_error"] = median(same);
      summary["median_control_energy"] = median(energy);

      std::string csv = "path,seed,same_grid_rel_error,refined_rel_error,control_energy,outer_iterations,inner_sweeps\n";
      for (int i = 0; i < paths; ++i) {
        const auto& r = rows[static_cast<std::size_t>(i)];
        csv += std::to_string(i) + "," + std::to_string(seed) + "," +
               detail::format_g17(r.same_grid_rel) + "," +
               detail::format_g17(r.refined_rel) + "," + detail::format_g17(r.energy) +
               "," + std::to_string(r.outers) + "," + std::to_string(r.sweeps) + "\n";
      }
      sink.write_text("paths.csv", csv);
    } else if (command == "convergence-study") {
      ScenarioInstance inst = build_scenario(config);
      if (inst.problem.noise.zero())
        throw std::invalid_argument("convergence-study: scenario has sigma = 0");
      if (config.steps % 4 != 0)
        throw std::invalid_argument("convergence-study: step count must be divisible by 4");
      const int study_paths = std::min(paths, 16);
      std::vector<int> levels = {config.steps / 4, config.steps / 2, config.steps};
      // Common random numbers across levels: every level sees a restriction of
      // the same base sample, so "halving the step" compares discretizations of
      // one fixed driving path instead of three independent draws.
      const TimeGrid base_grid(config.horizon, 2 * config.steps);
      const FbmSampler base_sampler(inst.hurst, base_grid);
      std::vector<QfbmPath> base_noise;
      base_noise.reserve(static_cast<std::size_t>(study_paths));
      for (int i = 0; i < study_paths; ++i)
        base_noise.push_back(sample_qfbm(base_sampler, inst.covariance, seed,
                                         static_cast<std::uint64_t>(i)));
      std::vector<double> medians;
      json level_rows = json::array();
      std::string csv = "steps,median_refined_rel_error,max_refined_rel_error\n";
      for (const int steps : levels) {
        const TimeGrid grid_l(config.horizon, steps);
        const TimeGrid fine(config.horizon, 2 * steps);
        const EvolutionGrid evo_l(inst.problem.family, grid_l);
        const EvolutionGrid evo_fine(inst.problem.family, fine);
        const ControlSystem sys(evo_l, inst.input, config.gramian_floor);
        const double target_scale = sys.restrict(inst.target).norm();
        std::vector<double> errs(static_cast<std::size_t>(study_paths));
        detail::parallel_for(study_paths, [&](int i) {
          const QfbmPath& base = base_noise[static_cast<std::size_t>(i)];
          const QfbmPath noise_fine = base.restricted(config.steps / steps);
          const QfbmPath noise = noise_fine.restricted(2);
          SteerResult res = steer(inst.problem, sys, &noise, inst.target, config.steer_tol);
          const ControlSignal u_fine = detail::interpolate_control(res.control, fine);
          GridForcing forcing{fine, {}};
          forcing.values.reserve(fine.size());
          for (int k = 0; k <= fine.steps(); ++k)
            forcing.values.push_back(
                inst.input.apply(u_fine.values[static_cast<std::size_t>(k)]));
          PicardResult refined = picard_solve(inst.problem, evo_fine, &forcing,
                                              &noise_fine, config.solver_tol);
          errs[static_cast<std::size_t>(i)] =
              (sys.restrict(refined.trajectory.grid_value(fine.steps())) -
               sys.restrict(inst.target)).norm() /
              (target_scale > 0.0 ? target_scale : 1.0);
        });
        const double med = median(errs);
        medians.push_back(med);
        const double worst = *std::max_element(errs.begin(), errs.end());
        level_rows.push_back({{"steps", steps}, {"median", med}, {"max", worst}});
        csv += std::to_string(steps) + "," + detail::format_g17(med) + "," +
               detail::format_g17(worst) + "\n";
      }
      sink.write_text("levels.csv", csv);
      summary["levels"] = std::move(level_rows);
      for (std::size_t l = 1; l < medians.size(); ++l) {
        const double ratio = medians[l] / medians[l - 1];
        report.checks.push_back(
            {"halving-ratio-" + std::to_string(levels[l - 1]) + "-to-" +
                 std::to_string(levels[l]),
             ratio >= 0.3 && ratio <= 0.8, ratio, 0.8,
             "median error ratio after halving the step"});
      }
      summary["paths_per_level"] = study_paths;
    } else {
      throw std::invalid_argument(
          "unknown command '" + command +
          "' (validate-noise | validate-evolution | solve | steer | mc-batch | "
          "convergence-study)");
    }

    json doc;
    doc["command"] = command;
    doc["version"] = version;
    doc["ok"] = true;  // placeholder, fixed below
    doc["checks"] = detail::checks_json(report.checks);
    doc["summary"] = std::move(summary);
    doc["config"] = config.echo;
    doc["provenance"] = {{"seed", seed},
                         {"paths", paths},
                         {"jitter", jitter},
                         {"timestamp", detail::utc_timestamp()}};
    doc["ok"] = report.ok();
    report.document = std::move(doc);
    sink.write_text("report.json", report.document.dump(2) + "\n");
    report.summary = report.document["summary"];
    report.files_written = sink.written();
    return report;
  } catch (...) {
    sink.remove_all_written();
    throw;
  }
}

}  // namespace nsfde
