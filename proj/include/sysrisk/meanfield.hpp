#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>

#include "sysrisk/error.hpp"
#include "sysrisk/model.hpp"
#include "sysrisk/path_grid.hpp"
#include "sysrisk/potential.hpp"

namespace sysrisk {

struct MeanFieldState {
  double y0 = -1.0;
  double ybar = -1.0;
};

struct EquilibriumReport {
  double y0e = 0.0;
  double ybar_e = 0.0;
  double order1_shift = 0.0;
  double partition_norm = 0.0;
};

/// Right-hand side of the h = 0 limit ODE pair.
inline MeanFieldState meanfield_rhs(const ModelParams& p, MeanFieldState s) {
  return {-p.h0 * Potential::d1(s.y0) - p.theta0 * (s.y0 - s.ybar), -p.theta * (s.ybar - s.y0)};
}

/// Classical RK4 on the limit ODEs; records y0 and ybar.
inline PathGrid integrate_meanfield(const ModelParams& p, double y0_init, double ybar_init, double t_final, double dt) {
  if (p.h != 0.0) throw InvalidArgument("integrate_meanfield requires h = 0");
  SimConfig grid_cfg{t_final, dt, 0, 0.0};
  grid_cfg.validate();
  const std::size_t steps = grid_cfg.steps();
  std::vector<double> y0(steps + 1), ybar(steps + 1);
  MeanFieldState s{y0_init, ybar_init};
  y0[0] = s.y0;
  ybar[0] = s.ybar;
  auto axpy = [](MeanFieldState a, double c, MeanFieldState k) { return MeanFieldState{a.y0 + c * k.y0, a.ybar + c * k.ybar}; };
  for (std::size_t i = 0; i < steps; ++i) {
    const auto k1 = meanfield_rhs(p, s);
    const auto k2 = meanfield_rhs(p, axpy(s, dt / 2, k1));
    const auto k3 = meanfield_rhs(p, axpy(s, dt / 2, k2));
    const auto k4 = meanfield_rhs(p, axpy(s, dt, k3));
    s.y0 += dt / 6 * (k1.y0 + 2 * k2.y0 + 2 * k3.y0 + k4.y0);
    s.ybar += dt / 6 * (k1.ybar + 2 * k2.ybar + 2 * k3.ybar + k4.ybar);
    if (!std::isfinite(s.y0) || !std::isfinite(s.ybar))
      throw DivergenceError(i + 1, dt * static_cast<double>(i + 1), "non-finite mean-field state");
    y0[i + 1] = s.y0;
    ybar[i + 1] = s.ybar;
  }
  auto g = PathGrid::uniform(t_final, steps);
  g.set("y0", std::move(y0));
  g.set("ybar", std::move(ybar));
  return g;
}

namespace detail {

inline void require_density_params(const ModelParams& p) {
  if (!(p.sigma > 0.0)) throw InvalidArgument("stationary density requires sigma > 0");
  if (!(p.theta > 0.0)) throw InvalidArgument("stationary density requires theta > 0");
}

// Unnormalized density on the +-10 standard deviation window of the h = 0 Gaussian.
template <class F>
double window_integral(const ModelParams& p, double y0e, F&& weight_times) {
  const double sd = p.sigma / std::sqrt(2.0 * p.theta);
  const double a = y0e - 10.0 * sd, b = y0e + 10.0 * sd;
  auto f = [&](double x) {
    const double expo = -(2.0 * p.h * Potential::value(x) + p.theta * (x - y0e) * (x - y0e)) / (p.sigma * p.sigma);
    return weight_times(x) * std::exp(expo);
  };
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 20, 1e-13);
}

} // namespace detail

/// Z(y0e) = integral of exp(-[2hV(x) + theta (x - y0e)^2] / sigma^2).
inline double partition_norm(const ModelParams& p, double y0e) {
  detail::require_density_params(p);
  return detail::window_integral(p, y0e, [](double) { return 1.0; });
}

inline double stationary_density(const ModelParams& p, double y0e, double x) {
  const double z = partition_norm(p, y0e);
  return std::exp(-(2.0 * p.h * Potential::value(x) + p.theta * (x - y0e) * (x - y0e)) / (p.sigma * p.sigma)) / z;
}

/// Mean of the stationary local-agent density given the central agent sits at y0e.
inline double stationary_mean(const ModelParams& p, double y0e) {
  detail::require_density_params(p);
  const double z = detail::window_integral(p, y0e, [](double) { return 1.0; });
  return detail::window_integral(p, y0e, [](double x) { return x; }) / z;
}

/// Residual of the consistency equation at a candidate central equilibrium y.
inline double consistency_residual(const ModelParams& p, double y) {
  return stationary_mean(p, y) - y - p.h0 / p.theta0 * Potential::d1(y);
}

/// Root of the consistency equation inside `bracket`, located by TOMS 748.
inline double solve_consistency(const ModelParams& p, std::pair<double, double> bracket) {
  if (!(p.h0 > 0.0) || !(p.theta0 > 0.0)) throw InvalidArgument("solve_consistency requires h0 > 0 and theta0 > 0");
  auto f = [&](double y) { return consistency_residual(p, y); };
  const auto [a, b] = bracket;
  const double fa = f(a), fb = f(b);
  if (fa == 0.0) return a;
  if (fb == 0.0) return b;
  if ((fa < 0.0) == (fb < 0.0)) throw BracketError("consistency residual has no sign change on the bracket");
  std::uintmax_t iters = 200;
  auto tol = [](double lo, double hi) { return std::abs(hi - lo) <= 1e-12; };
  const auto r = boost::math::tools::toms748_solve(f, a, b, fa, fb, tol, iters);
  return 0.5 * (r.first + r.second);
}

/// First-order shift y0e1 of the central equilibrium for small h, from the Gaussian
/// average of V' around y0e0. Equals -+3 theta0 sigma^2 / (4 h0 theta^2) at y0e0 = +-1.
inline double equilibrium_shift(const ModelParams& p, double y0e0) {
  if (!(p.h0 > 0.0) || !(p.theta > 0.0)) throw InvalidArgument("equilibrium_shift requires h0 > 0 and theta > 0");
  if (!(p.sigma > 0.0)) throw InvalidArgument("equilibrium_shift requires sigma > 0");
  const double sd = p.sigma / std::sqrt(2.0 * p.theta);
  auto gauss = [&](double x) { return std::exp(-p.theta * x * x / (p.sigma * p.sigma)); };
  using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
  const double num = GK::integrate([&](double x) { return gauss(x) * Potential::d1(y0e0 + x); }, -10 * sd, 10 * sd, 20, 1e-13);
  const double den = GK::integrate(gauss, -10 * sd, 10 * sd, 20, 1e-13);
  return -p.theta0 / (p.h0 * p.theta * Potential::d2(y0e0)) * num / den;
}

/// Equilibrium near y0e0 = +-1: exact root for the given h, plus the first-order shift.
inline EquilibriumReport equilibrium(const ModelParams& p, double y0e0) {
  EquilibriumReport r;
  if (p.h == 0.0) {
    r.y0e = y0e0;
  } else {
    r.y0e = solve_consistency(p, {y0e0 - 0.5, y0e0 + 0.5});
  }
  r.ybar_e = p.theta0 > 0.0 ? r.y0e + p.h0 / p.theta0 * Potential::d1(r.y0e) : r.y0e;
  r.order1_shift = (p.h0 > 0.0 && p.theta > 0.0) ? equilibrium_shift(p, y0e0) : 0.0;
  r.partition_norm = partition_norm(p, r.y0e);
  return r;
}

} // namespace sysrisk
