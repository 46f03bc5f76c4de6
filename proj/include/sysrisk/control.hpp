#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <vector>

#include "sysrisk/error.hpp"
#include "sysrisk/model.hpp"
#include "sysrisk/path_grid.hpp"
#include "sysrisk/sde.hpp"

namespace sysrisk {

/// Riccati coefficients (a, b, d, e) of the linear-quadratic feedback.
struct RiccatiState {
  double a = 0.0, b = 0.0, d = 0.0, e = 0.0;

  std::array<double, 4> array() const { return {a, b, d, e}; }
  static RiccatiState from(const std::array<double, 4>& v) { return {v[0], v[1], v[2], v[3]}; }
};

/// Steady coefficients. `converged` is false when the backward integration did not
/// settle; `exact` is false when only the long-horizon ODE values are available.
struct RiccatiSteady {
  RiccatiState value;
  bool converged = false;
  bool exact = false;
};

struct RiccatiTrajectory {
  PathGrid grid; // series a, b, d, e in forward time; zero at t = T
  RiccatiSteady steady;
};

/// Time derivatives (a', b', d', e') in forward time.
inline RiccatiState riccati_rhs(const ModelParams& p, const ControlParams& c, const RiccatiState& s) {
  const double k0 = p.theta0 + c.h_cap0, th = p.theta, tc = c.theta_c;
  return {2.0 * k0 * s.a - 2.0 * th * s.b + tc * s.b * s.b - tc,
          (k0 + th) * s.b - th * s.d - p.theta0 * s.a + tc * s.b * s.d + tc - th * s.e + tc * s.b * s.e,
          2.0 * th * s.d + tc * s.d * s.d - tc,
          -2.0 * p.theta0 * s.b + 2.0 * th * s.e + tc * (2.0 * s.d * s.e + s.e * s.e)};
}

/// Positive root of 2 theta d + theta_c d^2 = theta_c.
inline double d_inf_closed_form(double theta, double theta_c) {
  return (-theta + std::hypot(theta, theta_c)) / theta_c;
}

namespace detail {

inline void require_control_inputs(const ModelParams& p, const ControlParams& c) {
  c.validate();
  if (!(p.theta0 >= 0.0) || !(p.theta >= 0.0)) throw InvalidArgument("couplings must be >= 0");
}

inline RiccatiTrajectory integrate_riccati_steps(const ModelParams& p, const ControlParams& c, std::size_t steps) {
  const double dt = c.horizon / static_cast<double>(steps);
  std::vector<std::array<double, 4>> back(steps + 1);
  RiccatiState s;
  back[0] = s.array();
  // March in backward time tau = T - t, where d/dtau = -d/dt.
  auto f = [&](const RiccatiState& x) {
    const auto r = riccati_rhs(p, c, x);
    return RiccatiState{-r.a, -r.b, -r.d, -r.e};
  };
  auto axpy = [](const RiccatiState& x, double h, const RiccatiState& k) {
    return RiccatiState{x.a + h * k.a, x.b + h * k.b, x.d + h * k.d, x.e + h * k.e};
  };
  for (std::size_t i = 0; i < steps; ++i) {
    const auto k1 = f(s), k2 = f(axpy(s, dt / 2, k1)), k3 = f(axpy(s, dt / 2, k2)), k4 = f(axpy(s, dt, k3));
    s = RiccatiState{s.a + dt / 6 * (k1.a + 2 * k2.a + 2 * k3.a + k4.a), s.b + dt / 6 * (k1.b + 2 * k2.b + 2 * k3.b + k4.b),
                     s.d + dt / 6 * (k1.d + 2 * k2.d + 2 * k3.d + k4.d), s.e + dt / 6 * (k1.e + 2 * k2.e + 2 * k3.e + k4.e)};
    back[i + 1] = s.array();
    const auto v = back[i + 1];
    if (!std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); })) {
      const double tau = dt * static_cast<double>(i + 1);
      throw DivergenceError(i + 1, c.horizon - tau, "Riccati coefficients blew up");
    }
  }

  RiccatiTrajectory out;
  out.grid = PathGrid::uniform(c.horizon, steps);
  const char* names[] = {"a", "b", "d", "e"};
  for (int k = 0; k < 4; ++k) {
    std::vector<double> series(steps + 1);
    for (std::size_t i = 0; i <= steps; ++i) series[i] = back[steps - i][k];
    out.grid.set(names[k], std::move(series));
  }

  // Steady when nothing moved by 1e-8 over the last tenth of backward time.
  const auto tail = std::max<std::size_t>(1, steps / 10);
  double change = 0.0;
  for (std::size_t i = steps - tail; i <= steps; ++i)
    for (int k = 0; k < 4; ++k) change = std::max(change, std::abs(back[i][k] - back[steps][k]));
  out.steady.value = s;
  out.steady.converged = change < 1e-8;
  return out;
}

// Uniform step count with dt close to `target`.
inline std::size_t steps_for(double horizon, double target) {
  return static_cast<std::size_t>(std::max(10.0, std::ceil(horizon / target)));
}

} // namespace detail

/// Backward RK4 from (0, 0, 0, 0) at t = T down to t = 0.
inline RiccatiTrajectory integrate_riccati(const ModelParams& p, const ControlParams& c, double dt) {
  detail::require_control_inputs(p, c);
  if (!(dt > 0.0) || !(dt <= c.horizon)) throw InvalidArgument("dt must be in (0, horizon]");
  const double ratio = c.horizon / dt;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 * std::max(1.0, ratio))
    throw InvalidArgument("control horizon must be an integer multiple of dt");
  return detail::integrate_riccati_steps(p, c, static_cast<std::size_t>(std::llround(ratio)));
}

/// Algebraic residuals of all four equations at `s`.
inline std::array<double, 4> algebraic_riccati_residual(const ModelParams& p, const ControlParams& c, const RiccatiState& s) {
  return riccati_rhs(p, c, s).array();
}

/// Steady coefficients: d from its closed form, (a, b, e) by Newton seeded with the
/// long-horizon integration. The stabilizing branch is the one that backward
/// integration selects.
inline RiccatiSteady solve_algebraic_riccati(const ModelParams& p, const ControlParams& c) {
  detail::require_control_inputs(p, c);
  const double rate = std::max({1.0, c.theta_c, p.theta, p.theta0 + c.h_cap0});
  const auto traj = detail::integrate_riccati_steps(p, c, detail::steps_for(c.horizon, 0.01 / rate));
  RiccatiState s = traj.steady.value;
  s.d = d_inf_closed_form(p.theta, c.theta_c);

  // Unknowns (a, b, e); a drops out entirely when theta0 + H0 = 0.
  const bool with_a = p.theta0 + c.h_cap0 > 0.0;
  const double k0 = p.theta0 + c.h_cap0, th = p.theta, tc = c.theta_c;
  auto residual = [&](const RiccatiState& x) {
    const auto r = riccati_rhs(p, c, x);
    return std::array<double, 3>{r.a, r.b, r.e};
  };
  auto norm = [](const std::array<double, 3>& r, bool all) {
    return std::max({all ? std::abs(r[0]) : 0.0, std::abs(r[1]), std::abs(r[2])});
  };
  RiccatiSteady out{s, traj.steady.converged, false};
  for (int it = 0; it < 50; ++it) {
    const auto r = residual(s);
    if (norm(r, with_a) < 1e-14) break;
    // Rows: a-, b-, e-equation; columns: a, b, e.
    const double j[3][3] = {{2.0 * k0, -2.0 * th + 2.0 * tc * s.b, 0.0},
                            {-p.theta0, k0 + th + tc * s.d + tc * s.e, -th + tc * s.b},
                            {0.0, -2.0 * p.theta0, 2.0 * th + 2.0 * tc * (s.d + s.e)}};
    double da = 0.0, db = 0.0, de = 0.0;
    if (with_a) {
      const double det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0]) +
                         j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
      if (det == 0.0 || !std::isfinite(det)) break;
      auto cramer = [&](int col) {
        double m[3][3];
        for (int row = 0; row < 3; ++row)
          for (int k = 0; k < 3; ++k) m[row][k] = k == col ? -r[row] : j[row][k];
        return (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])) /
               det;
      };
      da = cramer(0);
      db = cramer(1);
      de = cramer(2);
    } else {
      const double det = j[1][1] * j[2][2] - j[1][2] * j[2][1];
      if (det == 0.0 || !std::isfinite(det)) break;
      db = (-r[1] * j[2][2] + r[2] * j[1][2]) / det;
      de = (-r[2] * j[1][1] + r[1] * j[2][1]) / det;
    }
    // Halve until the residual drops; the seed is already close, so this rarely triggers.
    double lambda = 1.0;
    RiccatiState trial;
    for (int h = 0; h < 20; ++h, lambda *= 0.5) {
      trial = {s.a + lambda * da, s.b + lambda * db, s.d, s.e + lambda * de};
      if (norm(residual(trial), with_a) < norm(r, with_a)) break;
    }
    s = trial;
  }
  const auto r = algebraic_riccati_residual(p, c, s);
  const double scale = std::max({1.0, std::abs(s.a), std::abs(s.b), std::abs(s.e)});
  const bool ok = std::all_of(r.begin(), r.end(), [&](double v) { return std::abs(v) < 1e-12 * scale; });
  if (ok) {
    out.value = s;
    out.exact = true;
    out.converged = true;
  }
  return out;
}

enum class RegimeCase { decoupled, small_theta0, small_theta0_H0 };

/// First-order steady coefficients in the three small-parameter regimes.
struct RegimeExpansion {
  RegimeCase case_id = RegimeCase::decoupled;
  double b_inf_approx = 0.0;
  double e_inf_approx = 0.0;
  double effective_coupling = 0.0; // rate pulling xbar toward x0
  double direct_control = 0.0;     // extra restoring rate on xbar alone
};

inline RegimeExpansion regime_expansion(const ModelParams& p, const ControlParams& c, RegimeCase which) {
  const double r = std::hypot(p.theta, c.theta_c);
  const double d = d_inf_closed_form(p.theta, c.theta_c);
  const double loss = (r - p.theta) / r;
  RegimeExpansion out;
  out.case_id = which;
  switch (which) {
  case RegimeCase::decoupled:
    out.b_inf_approx = -d;
    out.effective_coupling = r;
    break;
  case RegimeCase::small_theta0:
    out.b_inf_approx = -d + p.theta0 * d / r;
    out.e_inf_approx = -p.theta0 * d / r;
    out.effective_coupling = r - p.theta0 * loss;
    break;
  case RegimeCase::small_theta0_H0:
    out.b_inf_approx = -d + (c.h_cap0 + p.theta0) * d / r;
    out.e_inf_approx = -p.theta0 * d / r;
    out.effective_coupling = r - (p.theta0 + c.h_cap0) * loss;
    out.direct_control = c.h_cap0 * loss;
    break;
  }
  return out;
}

inline FeedbackLaw build_feedback(const RiccatiSteady& steady, double theta_c) {
  if (!steady.converged) throw InvalidArgument("feedback needs converged steady Riccati coefficients");
  if (!(theta_c > 0.0)) throw InvalidArgument("theta_c must be > 0");
  return {steady.value.b, steady.value.d, steady.value.e, theta_c};
}

/// `t,a,b,d,e` rows.
inline void write_riccati_csv(std::ostream& os, const RiccatiTrajectory& r) { r.grid.write_csv(os); }

/// Header plus one row with the steady coefficients and their flags.
inline void write_steady_csv(std::ostream& os, const RiccatiSteady& s) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "a_inf,b_inf,d_inf,e_inf,converged,exact\n%.17g,%.17g,%.17g,%.17g,%d,%d\n", s.value.a,
                s.value.b, s.value.d, s.value.e, s.converged ? 1 : 0, s.exact ? 1 : 0);
  os << buf;
}

} // namespace sysrisk
