#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include "sysrisk/error.hpp"

namespace sysrisk {

/// Constants of the central-agent / local-agents system.
struct ModelParams {
  double h0 = 0.0;     // intrinsic stability of the central agent
  double h = 0.0;      // intrinsic stability of each local agent
  double sigma0 = 0.0; // central noise (enters as sigma0 / sqrt(N))
  double sigma = 1.0;  // local noise
  double theta0 = 0.0; // pull of the central agent towards the local mean
  double theta = 0.0;  // pull of each local agent towards the central agent
  std::uint64_t n_agents = 1;

  /// Simulation entry points pass `allow_zero_sigma` so noiseless runs are possible.
  void validate(bool allow_zero_sigma = false) const {
    auto nonneg = [](double v, const char* name) {
      if (!(v >= 0.0) || !std::isfinite(v))
        throw InvalidArgument(std::string(name) + " must be finite and >= 0");
    };
    nonneg(h0, "h0");
    nonneg(h, "h");
    nonneg(sigma0, "sigma0");
    nonneg(theta0, "theta0");
    nonneg(theta, "theta");
    if (allow_zero_sigma) nonneg(sigma, "sigma");
    else if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidArgument("sigma must be finite and > 0");
    if (n_agents < 1) throw InvalidArgument("N must be >= 1");
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Linear-quadratic control setup for the local agents.
struct ControlParams {
  double theta_c = 1.0; // control cost / tracking weight
  double h_cap0 = 0.0;  // H0, linearized stiffness of the central agent (2*h0 matches V''(-1)=2)
  double horizon = 100.0;

  /// 100 / min(theta_c, theta, 1), ignoring a zero theta.
  static double default_horizon(double theta_c, double theta) {
    double rate = std::min(theta_c, 1.0);
    if (theta > 0.0) rate = std::min(rate, theta);
    return 100.0 / rate;
  }

  void validate() const {
    if (!(theta_c > 0.0) || !std::isfinite(theta_c)) throw InvalidArgument("theta_c must be > 0");
    if (!(h_cap0 >= 0.0) || !std::isfinite(h_cap0)) throw InvalidArgument("H0 must be >= 0");
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw InvalidArgument("control horizon must be > 0");
  }

  friend bool operator==(const ControlParams&, const ControlParams&) = default;
};

struct SimConfig {
  double t_final = 1.0;
  double dt = 1e-3;
  std::uint64_t seed = 0;
  double burn_in_fraction = 0.1;

  std::size_t steps() const { return static_cast<std::size_t>(std::llround(t_final / dt)); }

  void validate() const {
    if (!(t_final > 0.0) || !std::isfinite(t_final)) throw InvalidArgument("T must be > 0");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidArgument("dt must be > 0");
    if (!(dt < t_final)) throw InvalidArgument("dt must be smaller than T");
    const double ratio = t_final / dt;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 * std::max(1.0, ratio))
      throw InvalidArgument("T/dt must be an integer");
    if (!(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0))
      throw InvalidArgument("burn_in_fraction must lie in [0,1)");
  }

  friend bool operator==(const SimConfig&, const SimConfig&) = default;
};

struct ExperimentConfig {
  ModelParams model;
  SimConfig sim;
  std::optional<ControlParams> control;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline double parse_real(const std::string& key, std::string_view text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v))
    throw ParseError(key, "expected a finite real, got '" + std::string(text) + "'");
  return v;
}

inline std::uint64_t parse_uint(const std::string& key, std::string_view text) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end)
    throw ParseError(key, "expected a non-negative integer, got '" + std::string(text) + "'");
  return v;
}

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

} // namespace detail

/// The recognised config keys, in canonical serialization order.
inline const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys{"h0", "h",  "sigma0", "sigma", "theta0", "theta", "N",
                                          "T",  "dt", "seed",   "burn_in_fraction", "theta_c", "H0"};
  return keys;
}

/// Apply one `key=value` assignment to `cfg`; the value is range-checked immediately.
inline void apply_config_entry(ExperimentConfig& cfg, const std::string& key, std::string_view value) {
  auto nonneg = [&](double v) {
    if (v < 0.0) throw ParseError(key, "must be >= 0");
    return v;
  };
  auto positive = [&](double v) {
    if (!(v > 0.0)) throw ParseError(key, "must be > 0");
    return v;
  };
  auto& m = cfg.model;
  auto& s = cfg.sim;
  if (key == "h0") m.h0 = nonneg(detail::parse_real(key, value));
  else if (key == "h") m.h = nonneg(detail::parse_real(key, value));
  else if (key == "sigma0") m.sigma0 = nonneg(detail::parse_real(key, value));
  else if (key == "sigma") m.sigma = positive(detail::parse_real(key, value));
  else if (key == "theta0") m.theta0 = nonneg(detail::parse_real(key, value));
  else if (key == "theta") m.theta = nonneg(detail::parse_real(key, value));
  else if (key == "N") {
    m.n_agents = detail::parse_uint(key, value);
    if (m.n_agents < 1) throw ParseError(key, "must be >= 1");
  } else if (key == "T") s.t_final = positive(detail::parse_real(key, value));
  else if (key == "dt") s.dt = positive(detail::parse_real(key, value));
  else if (key == "seed") s.seed = detail::parse_uint(key, value);
  else if (key == "burn_in_fraction") {
    s.burn_in_fraction = nonneg(detail::parse_real(key, value));
    if (!(s.burn_in_fraction < 1.0)) throw ParseError(key, "must be < 1");
  } else if (key == "theta_c") {
    if (!cfg.control) cfg.control.emplace();
    cfg.control->theta_c = positive(detail::parse_real(key, value));
  } else if (key == "H0") {
    if (!cfg.control) cfg.control.emplace();
    cfg.control->h_cap0 = nonneg(detail::parse_real(key, value));
  } else {
    throw ParseError(key, "unknown key");
  }
}

/// Cross-field checks and defaults once every line has been applied.
inline void finalize_config(ExperimentConfig& cfg, const std::set<std::string>& seen) {
  for (const char* k : {"h0", "sigma0", "sigma", "theta0", "theta", "N", "T", "dt"})
    if (!seen.count(k)) throw ParseError(k, "missing required key");
  if (cfg.control) {
    if (!seen.count("theta_c")) throw ParseError("H0", "H0 requires theta_c");
    cfg.control->horizon = ControlParams::default_horizon(cfg.control->theta_c, cfg.model.theta);
  }
  try {
    cfg.sim.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError("dt", e.what());
  }
}

/// Parse a flat `key=value` document (one entry per line, `#` starts a comment).
///
/// Required keys: h0 sigma0 sigma theta0 theta N T dt. Defaults: h=0, seed=0,
/// burn_in_fraction=0.1. Giving theta_c (optionally H0, default 0) enables the
/// control block.
inline ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ParseError("", "line " + std::to_string(line_no) + ": expected key=value");
    const std::string key(detail::trim(line.substr(0, eq)));
    const auto value = detail::trim(line.substr(eq + 1));
    if (!config_keys().count(key)) throw ParseError(key, "unknown key");
    if (!seen.insert(key).second) throw ParseError(key, "duplicate key");
    apply_config_entry(cfg, key, value);
  }
  finalize_config(cfg, seen);
  return cfg;
}

/// Canonical text form; parse_config(serialize_config(c)) == c for any parsed c.
inline std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  const auto& m = cfg.model;
  const auto& s = cfg.sim;
  os << "h0=" << detail::format_real(m.h0) << '\n'
     << "h=" << detail::format_real(m.h) << '\n'
     << "sigma0=" << detail::format_real(m.sigma0) << '\n'
     << "sigma=" << detail::format_real(m.sigma) << '\n'
     << "theta0=" << detail::format_real(m.theta0) << '\n'
     << "theta=" << detail::format_real(m.theta) << '\n'
     << "N=" << m.n_agents << '\n'
     << "T=" << detail::format_real(s.t_final) << '\n'
     << "dt=" << detail::format_real(s.dt) << '\n'
     << "seed=" << s.seed << '\n'
     << "burn_in_fraction=" << detail::format_real(s.burn_in_fraction) << '\n';
  if (cfg.control) {
    os << "theta_c=" << detail::format_real(cfg.control->theta_c) << '\n'
       << "H0=" << detail::format_real(cfg.control->h_cap0) << '\n';
  }
  return os.str();
}

/// FNV-1a over the canonical serialization; stable across runs and platforms.
inline std::uint64_t config_hash(const ExperimentConfig& cfg, std::string_view salt = {}) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  mix(serialize_config(cfg));
  mix(salt);
  return h;
}

} // namespace sysrisk
