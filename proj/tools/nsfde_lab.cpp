#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "nsfde/harness.hpp"

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nsfde-lab: simulation and steering workbench for neutral "
               "stochastic delay systems driven by fractional noise"};

  std::string command;
  std::string config_path;
  std::uint64_t seed = 0;
  int paths = 0;
  std::string out_dir;
  double tol = 0.0;

  app.add_option("command", command,
                 "one of: validate-noise, validate-evolution, solve, steer, "
                 "mc-batch, convergence-study")
      ->required();
  app.add_option("-c,--config", config_path, "scenario JSON file")->required();
  auto* seed_opt = app.add_option("-s,--seed", seed, "override the scenario seed");
  auto* paths_opt = app.add_option("-p,--paths", paths, "override the scenario path count");
  auto* out_opt = app.add_option("-o,--out", out_dir,
                                 "output directory (NSFDE_OUT env var wins over both "
                                 "this flag and the config)");
  auto* tol_opt = app.add_option("-t,--tol", tol,
                                 "override the pass/fail tolerance for steer and mc-batch");

  CLI11_PARSE(app, argc, argv);

  try {
    const nsfde::ScenarioConfig config = nsfde::parse_config(read_file(config_path));
    nsfde::RunOptions opts;
    if (seed_opt->count() > 0) opts.seed = seed;
    if (paths_opt->count() > 0) opts.paths = paths;
    if (out_opt->count() > 0) opts.out_dir = out_dir;
    if (tol_opt->count() > 0) opts.tol = tol;

    const nsfde::RunReport report = nsfde::run_command(command, config, opts);

    for (const auto& c : report.checks) {
      std::printf("[%s] %-34s value=%.6g bound=%.6g%s%s\n", c.pass ? "PASS" : "FAIL",
                  c.name.c_str(), c.value, c.bound, c.note.empty() ? "" : "  ",
                  c.note.c_str());
    }
    for (const auto& f : report.files_written) std::printf("wrote %s\n", f.c_str());
    std::printf("%s: %s\n", command.c_str(), report.ok() ? "ok" : "CHECKS FAILED");
    return report.ok() ? 0 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
