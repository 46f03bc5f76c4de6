#pragma once

// Experiment driver behind the command-line tool. Every command reads a config,
// applies overrides, and writes seed-stamped CSV files plus a JSON manifest.

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sysrisk/control.hpp"
#include "sysrisk/fluctuations.hpp"
#include "sysrisk/ldp.hpp"
#include "sysrisk/model.hpp"
#include "sysrisk/sde.hpp"

namespace sysrisk {

inline const std::vector<std::string>& experiment_commands() {
  static const std::vector<std::string> names{"simulate", "fluctuations", "ldp-path", "ldp-sweep", "riccati", "control-demo"};
  return names;
}

/// Uniform grid `name:start:end:count` over one config key.
struct SweepSpec {
  std::string name;
  double start = 0.0;
  double end = 0.0;
  std::size_t count = 1;

  double value(std::size_t i) const {
    if (count == 1) return start;
    return std::lerp(start, end, static_cast<double>(i) / static_cast<double>(count - 1)); // exact at both ends
  }
};

inline SweepSpec parse_sweep(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ':');) parts.push_back(item);
  if (parts.size() != 4) throw ParseError("sweep", "expected name:start:end:count");
  SweepSpec s;
  s.name = parts[0];
  if (!config_keys().count(s.name) || s.name == "N" || s.name == "seed")
    throw ParseError("sweep", "cannot sweep '" + s.name + "'");
  s.start = detail::parse_real("sweep", parts[1]);
  s.end = detail::parse_real("sweep", parts[2]);
  s.count = detail::parse_uint("sweep", parts[3]);
  if (s.count < 1) throw ParseError("sweep", "count must be >= 1");
  return s;
}

struct ExperimentSpec {
  std::string command;
  std::string config_path;
  std::string output_dir = ".";
  std::vector<std::string> overrides; // key=value, applied after the file
  std::optional<std::string> sweep;
  std::optional<std::uint64_t> seed;
  unsigned jobs = 1;
  // Command-specific knobs.
  std::vector<double> h0_list;     // ldp-sweep
  std::size_t mesh = 2001;         // ldp-path, ldp-sweep
  double continuation_step = 0.25; // ldp-path, ldp-sweep
  std::size_t stride = 1;          // simulate, control-demo
  bool full = false;               // simulate: all N agents instead of the reduced pair
  std::optional<double> riccati_dt;
};

struct RunResult {
  int exit_code = 0;
  std::vector<std::filesystem::path> files;
  std::string message;
};

namespace detail {

inline std::string line_key(std::string_view line) {
  if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
  const auto eq = line.find('=');
  if (eq == std::string_view::npos) return {};
  return std::string(trim(line.substr(0, eq)));
}

/// Config text with `overrides` replacing (or adding) their keys.
inline std::string merge_overrides(const std::string& text, const std::vector<std::string>& overrides) {
  std::map<std::string, std::string> set;
  std::vector<std::string> order;
  for (const auto& o : overrides) {
    const auto key = line_key(o);
    if (key.empty()) throw ParseError(o, "override must be key=value");
    if (!set.count(key)) order.push_back(key);
    set[key] = o;
  }
  std::string out;
  std::stringstream ss(text);
  for (std::string line; std::getline(ss, line);)
    if (!set.count(line_key(line))) out += line + '\n';
  for (const auto& k : order) out += set[k] + '\n';
  return out;
}

inline ExperimentConfig load_config(const ExperimentSpec& spec, const std::vector<std::string>& extra = {}) {
  std::ifstream in(spec.config_path, std::ios::binary);
  if (!in) throw ParseError("config", "cannot read " + spec.config_path);
  std::stringstream buf;
  buf << in.rdbuf();
  auto overrides = spec.overrides;
  overrides.insert(overrides.end(), extra.begin(), extra.end());
  if (spec.seed) overrides.push_back("seed=" + std::to_string(*spec.seed));
  return parse_config(merge_overrides(buf.str(), overrides));
}

inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <class Writer>
std::string render(Writer&& w) {
  std::ostringstream os;
  w(os);
  return os.str();
}

inline std::string format_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_real(v[i]);
  return s;
}

/// Shared state of one run: names, written files, manifest.
class Run {
public:
  Run(const ExperimentSpec& spec, const ExperimentConfig& cfg) : spec_(spec), cfg_(cfg) {
    const std::string salt = spec.command + '|' + options_text();
    char buf[80];
    std::snprintf(buf, sizeof buf, "_%016" PRIx64 "_s%" PRIu64, config_hash(cfg, salt), cfg.sim.seed);
    stem_ = spec.command + buf;
    std::filesystem::create_directories(spec.output_dir);
  }

  std::filesystem::path write(const std::string& suffix, const std::string& content) {
    const auto path = std::filesystem::path(spec_.output_dir) / (stem_ + suffix + ".csv");
    write_atomic(path, content);
    files_.push_back(path);
    return path;
  }

  /// Files written so far plus the manifest itself.
  std::vector<std::filesystem::path> finish(const std::string& status, const nlohmann::ordered_json& results = {}) {
    nlohmann::ordered_json m;
    m["command"] = spec_.command;
    m["status"] = status;
    nlohmann::ordered_json params;
    std::stringstream ss(serialize_config(cfg_));
    for (std::string line; std::getline(ss, line);) {
      const auto eq = line.find('=');
      params[line.substr(0, eq)] = line.substr(eq + 1);
    }
    if (cfg_.control) params["control_horizon"] = format_real(cfg_.control->horizon);
    m["parameters"] = params;
    m["overrides"] = spec_.overrides;
    m["options"] = options_json();
    if (!results.is_null()) m["results"] = results;
    auto outputs = nlohmann::ordered_json::array();
    for (const auto& f : files_) outputs.push_back(f.filename().string());
    m["outputs"] = outputs;
    const auto path = std::filesystem::path(spec_.output_dir) / (stem_ + ".manifest.json");
    write_atomic(path, m.dump(2) + '\n');
    files_.push_back(path);
    return files_;
  }

private:
  nlohmann::ordered_json options_json() const {
    nlohmann::ordered_json o;
    if (spec_.sweep) o["sweep"] = *spec_.sweep;
    if (spec_.command == "ldp-sweep" && !spec_.h0_list.empty()) o["h0"] = format_list(spec_.h0_list);
    if (spec_.command == "ldp-path" || spec_.command == "ldp-sweep") {
      o["mesh"] = spec_.mesh;
      o["continuation_step"] = format_real(spec_.continuation_step);
    }
    if (spec_.command == "simulate" || spec_.command == "control-demo") o["stride"] = spec_.stride;
    if (spec_.command == "simulate") o["full"] = spec_.full;
    if (spec_.riccati_dt) o["riccati_dt"] = format_real(*spec_.riccati_dt);
    return o;
  }
  std::string options_text() const { return options_json().dump(); }

  const ExperimentSpec& spec_;
  const ExperimentConfig& cfg_;
  std::string stem_;
  std::vector<std::filesystem::path> files_;
};

// Continuation schedule 0, step, 2 step, ..., h0.
inline std::vector<double> ramp_to(double h0, double step) {
  std::vector<double> s{0.0};
  if (h0 <= 0.0) return s;
  const auto n = static_cast<std::size_t>(std::ceil(h0 / step - 1e-12));
  for (std::size_t i = 1; i <= n; ++i) s.push_back(i == n ? h0 : step * static_cast<double>(i));
  return s;
}

inline BvpSolution most_probable_path(const ModelParams& p, double t_final, const ExperimentSpec& spec) {
  if (!(spec.continuation_step > 0.0)) throw InvalidArgument("continuation step must be > 0");
  return continue_in_h0(p, t_final, ramp_to(p.h0, spec.continuation_step), spec.mesh).back();
}

inline std::string path_csv(const BvpSolution& s) {
  return render([&](std::ostream& os) { write_path_csv(os, s); });
}

inline RunResult cmd_simulate(const ExperimentSpec& spec) {
  if (spec.sweep) throw ParseError("sweep", "simulate does not take a sweep");
  const auto cfg = load_config(spec);
  Run run(spec, cfg);
  PathGrid g = spec.full ? simulate_full(cfg.model, cfg.sim, RecordOptions{spec.stride, false})
                         : simulate_reduced(cfg.model, cfg.sim, spec.stride);
  run.write("", render([&](std::ostream& os) { g.write_csv(os); }));
  nlohmann::ordered_json res;
  res["transitions_xbar"] = count_transitions(g.series("xbar"));
  return {0, run.finish("ok", res), {}};
}

inline RunResult cmd_fluctuations(const ExperimentSpec& spec) {
  const auto base = load_config(spec);
  Run run(spec, base);
  std::vector<FluctuationRow> rows;
  if (!spec.sweep) {
    rows.push_back({"none", 0.0, stationary_covariance(base.model, -1.0)});
  } else {
    const auto sw = parse_sweep(*spec.sweep);
    std::vector<ExperimentConfig> cfgs;
    for (std::size_t i = 0; i < sw.count; ++i) cfgs.push_back(load_config(spec, {sw.name + "=" + format_real(sw.value(i))}));
    rows = run_replicas<FluctuationRow>(sw.count, 0, spec.jobs, [&](std::size_t i, std::uint64_t) {
      return FluctuationRow{sw.name, sw.value(i), stationary_covariance(cfgs[i].model, -1.0)};
    });
  }
  run.write("", render([&](std::ostream& os) { write_fluctuation_csv(os, rows); }));
  return {0, run.finish("ok"), {}};
}

inline RunResult cmd_ldp_path(const ExperimentSpec& spec) {
  if (spec.sweep) throw ParseError("sweep", "ldp-path does not take a sweep; use ldp-sweep");
  const auto cfg = load_config(spec);
  Run run(spec, cfg);
  try {
    const auto s = most_probable_path(cfg.model, cfg.sim.t_final, spec);
    run.write("", path_csv(s));
    nlohmann::ordered_json res;
    res["rate_infimum"] = format_real(s.rate_value);
    res["log_probability"] = format_real(transition_probability(s.rate_value, cfg.model.n_agents).log_probability);
    res["newton_iterations"] = s.newton_iterations;
    return {0, run.finish("ok", res), {}};
  } catch (const ContinuationError& e) {
    if (!e.last_iterate().nodes.empty()) run.write("_last_iterate", path_csv(e.last_iterate()));
    return {3, run.finish("nonconvergence"), e.what()};
  }
}

inline RunResult cmd_ldp_sweep(const ExperimentSpec& spec) {
  const auto base = load_config(spec);
  Run run(spec, base);
  nlohmann::ordered_json res;
  if (spec.sweep && !spec.h0_list.empty()) throw ParseError("sweep", "give either --h0 or --sweep");
  if (!spec.sweep) {
    // Rate against h0 along one continuation.
    auto schedule = spec.h0_list.empty() ? ramp_to(base.model.h0, 1.0) : spec.h0_list;
    std::vector<SweepRow> rows;
    int code = 0;
    std::string message;
    try {
      std::vector<BvpSolution> sols;
      if (schedule.front() > 0.0) {
        // Ramp up to the first requested value, then follow the schedule.
        auto ramp = ramp_to(schedule.front(), spec.continuation_step);
        ramp.insert(ramp.end(), schedule.begin() + 1, schedule.end());
        sols = continue_in_h0(base.model, base.sim.t_final, ramp, spec.mesh);
        sols.erase(sols.begin(), sols.end() - static_cast<std::ptrdiff_t>(schedule.size()));
      } else {
        sols = continue_in_h0(base.model, base.sim.t_final, schedule, spec.mesh);
      }
      for (std::size_t i = 0; i < sols.size(); ++i) {
        rows.push_back({sols[i].h0, sols[i].rate_value, sols[i].converged, sols[i].newton_iterations});
        run.write("_p" + std::to_string(i), path_csv(sols[i]));
      }
    } catch (const ContinuationError& e) {
      for (const auto& s : e.completed()) rows.push_back({s.h0, s.rate_value, s.converged, s.newton_iterations});
      if (!e.last_iterate().nodes.empty()) run.write("_last_iterate", path_csv(e.last_iterate()));
      code = 3;
      message = e.what();
    }
    run.write("", render([&](std::ostream& os) { write_sweep_csv(os, rows); }));
    return {code, run.finish(code == 0 ? "ok" : "nonconvergence"), message};
  }

  // Independent points over another parameter, each reached by its own continuation.
  const auto sw = parse_sweep(*spec.sweep);
  std::vector<ExperimentConfig> cfgs;
  for (std::size_t i = 0; i < sw.count; ++i) cfgs.push_back(load_config(spec, {sw.name + "=" + format_real(sw.value(i))}));
  struct Point {
    std::optional<BvpSolution> sol;
    std::string error;
  };
  auto points = run_replicas<Point>(sw.count, 0, spec.jobs, [&](std::size_t i, std::uint64_t) {
    try {
      return Point{most_probable_path(cfgs[i].model, cfgs[i].sim.t_final, spec), {}};
    } catch (const ContinuationError& e) {
      return Point{std::nullopt, e.what()};
    }
  });
  std::string out = "param_swept,value,h0,rate_infimum,converged,iterations\n";
  int code = 0;
  std::string message;
  for (std::size_t i = 0; i < points.size(); ++i) {
    char buf[160];
    const auto& pt = points[i];
    const double rate = pt.sol ? pt.sol->rate_value : std::numeric_limits<double>::quiet_NaN();
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%d,%d\n", sw.value(i), cfgs[i].model.h0, rate, pt.sol ? 1 : 0,
                  pt.sol ? pt.sol->newton_iterations : 0);
    out += sw.name + ',' + buf;
    if (pt.sol) run.write("_p" + std::to_string(i), path_csv(*pt.sol));
    else {
      code = 3;
      message = pt.error;
    }
  }
  run.write("", out);
  return {code, run.finish(code == 0 ? "ok" : "nonconvergence"), message};
}

inline ControlParams require_control(const ExperimentConfig& cfg) {
  if (!cfg.control) throw ParseError("theta_c", "this command needs theta_c in the config");
  return *cfg.control;
}

inline RunResult cmd_riccati(const ExperimentSpec& spec) {
  if (spec.sweep) throw ParseError("sweep", "riccati does not take a sweep");
  const auto cfg = load_config(spec);
  const auto ctrl = require_control(cfg);
  Run run(spec, cfg);
  const auto traj = integrate_riccati(cfg.model, ctrl, spec.riccati_dt.value_or(cfg.sim.dt));
  const auto steady = solve_algebraic_riccati(cfg.model, ctrl);
  run.write("", render([&](std::ostream& os) { write_riccati_csv(os, traj); }));
  run.write("_steady", render([&](std::ostream& os) { write_steady_csv(os, steady); }));
  nlohmann::ordered_json res;
  res["ode_steady_converged"] = traj.steady.converged;
  return {0, run.finish("ok", res), {}};
}

inline RunResult cmd_control_demo(const ExperimentSpec& spec) {
  if (spec.sweep) throw ParseError("sweep", "control-demo does not take a sweep");
  const auto cfg = load_config(spec);
  const auto ctrl = require_control(cfg);
  Run run(spec, cfg);
  const auto steady = solve_algebraic_riccati(cfg.model, ctrl);
  const auto law = build_feedback(steady, ctrl.theta_c);
  const auto free = simulate_reduced(cfg.model, cfg.sim, spec.stride);
  const auto held = simulate_controlled(cfg.model, cfg.sim, law, spec.stride);
  PathGrid g = PathGrid::from_times(free.t());
  g.set("x0", free.series("x0"));
  g.set("xbar", free.series("xbar"));
  g.set("x0_controlled", held.series("x0"));
  g.set("xbar_controlled", held.series("xbar"));
  g.set("control", held.series("control"));
  run.write("", render([&](std::ostream& os) { g.write_csv(os); }));
  run.write("_steady", render([&](std::ostream& os) { write_steady_csv(os, steady); }));
  // Counted on the recorded (possibly thinned) series.
  const auto n_free = count_transitions(free.series("xbar"));
  const auto n_held = count_transitions(held.series("xbar"));
  run.write("_transitions", "run,transitions_xbar\nuncontrolled," + std::to_string(n_free) + "\ncontrolled," +
                                std::to_string(n_held) + "\n");
  nlohmann::ordered_json res;
  res["transitions_uncontrolled"] = n_free;
  res["transitions_controlled"] = n_held;
  return {0, run.finish("ok", res), {}};
}

} // namespace detail

/// Exit codes: 0 success, 2 configuration or argument error, 3 solver
/// non-convergence (the last iterate is still written), 1 any other failure.
inline RunResult run_experiment(const ExperimentSpec& spec) {
  try {
    if (spec.command == "simulate") return detail::cmd_simulate(spec);
    if (spec.command == "fluctuations") return detail::cmd_fluctuations(spec);
    if (spec.command == "ldp-path") return detail::cmd_ldp_path(spec);
    if (spec.command == "ldp-sweep") return detail::cmd_ldp_sweep(spec);
    if (spec.command == "riccati") return detail::cmd_riccati(spec);
    if (spec.command == "control-demo") return detail::cmd_control_demo(spec);
    return {2, {}, "unknown command '" + spec.command + "'"};
  } catch (const ParseError& e) {
    return {2, {}, std::string("config error: ") + e.what()};
  } catch (const InvalidArgument& e) {
    return {2, {}, std::string("invalid argument: ") + e.what()};
  } catch (const NonConvergenceError& e) {
    return {3, {}, e.what()};
  } catch (const std::exception& e) {
    return {1, {}, e.what()};
  }
}

} // namespace sysrisk
