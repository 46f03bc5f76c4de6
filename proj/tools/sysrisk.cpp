#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "sysrisk/experiment.hpp"

namespace {

std::vector<double> parse_h0_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(sysrisk::detail::parse_real("h0", item));
  if (out.empty()) throw sysrisk::ParseError("h0", "empty list");
  return out;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Central-agent systemic risk experiments"};
  app.require_subcommand(1);
  app.fallthrough();

  sysrisk::ExperimentSpec spec;
  std::string sweep, h0_list;
  std::uint64_t seed = 0;
  double riccati_dt = 0.0;

  app.add_option("--config", spec.config_path, "key=value config file")->required()->check(CLI::ExistingFile);
  app.add_option("--out", spec.output_dir, "output directory")->capture_default_str();
  app.add_option("--set", spec.overrides, "override a config entry (key=value, repeatable)");
  app.add_option("--seed", seed, "override the config seed");
  app.add_option("--jobs", spec.jobs, "concurrent sweep points")->check(CLI::PositiveNumber)->capture_default_str();

  auto* sim = app.add_subcommand("simulate", "Euler-Maruyama path of (x0, xbar)");
  sim->add_option("--stride", spec.stride, "keep every stride-th step")->check(CLI::PositiveNumber);
  sim->add_flag("--full", spec.full, "simulate all N agents instead of the reduced pair");

  auto* fl = app.add_subcommand("fluctuations", "stationary covariance and its large-theta limits");
  fl->add_option("--sweep", sweep, "name:start:end:count");

  auto* path = app.add_subcommand("ldp-path", "most probable transition path");
  auto* lsw = app.add_subcommand("ldp-sweep", "rate infimum over h0 or another parameter");
  lsw->add_option("--h0", h0_list, "comma-separated increasing h0 values");
  lsw->add_option("--sweep", sweep, "name:start:end:count");
  for (auto* c : {path, lsw}) {
    c->add_option("--mesh", spec.mesh, "mesh points")->check(CLI::Range(3, 1000000));
    c->add_option("--step", spec.continuation_step, "h0 continuation step")->check(CLI::PositiveNumber);
  }

  auto* ric = app.add_subcommand("riccati", "Riccati coefficients and their steady state");
  ric->add_option("--dt", riccati_dt, "integration step (default: config dt)")->check(CLI::PositiveNumber);

  auto* demo = app.add_subcommand("control-demo", "controlled vs uncontrolled transitions, same noise");
  demo->add_option("--stride", spec.stride, "keep every stride-th step")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  spec.command = app.get_subcommands().front()->get_name();
  if (!sweep.empty()) spec.sweep = sweep;
  if (app.count("--seed")) spec.seed = seed;
  if (ric->count("--dt")) spec.riccati_dt = riccati_dt;
  try {
    if (!h0_list.empty()) spec.h0_list = parse_h0_list(h0_list);
  } catch (const sysrisk::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  const auto result = sysrisk::run_experiment(spec);
  for (const auto& f : result.files) std::cout << f.string() << '\n';
  if (result.exit_code != 0) std::cerr << "error: " << result.message << '\n';
  return result.exit_code;
}
