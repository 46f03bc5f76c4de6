#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include "sysrisk/collocation.hpp"
#include "sysrisk/error.hpp"
#include "sysrisk/model.hpp"
#include "sysrisk/path_grid.hpp"
#include "sysrisk/potential.hpp"

namespace sysrisk {

// ---------------------------------------------------------------------------
// Rate functionals on user-supplied paths
// ---------------------------------------------------------------------------

/// Value of a rate functional, or the infeasible marker when the path violates
/// the noiseless central-agent constraint.
struct RateEvaluation {
  bool feasible = true;
  double value = 0.0;               // meaningful only when feasible
  double constraint_residual = 0.0; // max violation of the x0 constraint (degenerate case)

  static RateEvaluation infeasible(double residual) { return {false, 0.0, residual}; }
};

/// Centered differences inside, second-order one-sided differences at both ends.
inline std::vector<double> grid_derivative(const std::vector<double>& f, double h) {
  const std::size_t n = f.size();
  if (n < 3) throw ShapeError("need at least three grid points to differentiate");
  std::vector<double> d(n);
  d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
  for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (f[i + 1] - f[i - 1]) / (2.0 * h);
  d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
  return d;
}

inline double trapezoid(const std::vector<double>& g, double h) {
  double s = 0.5 * (g.front() + g.back());
  for (std::size_t i = 1; i + 1 < g.size(); ++i) s += g[i];
  return s * h;
}

namespace detail {

inline void require_ldp_params(const ModelParams& p) {
  p.validate();
  if (p.h != 0.0) throw InvalidArgument("large-deviation routines require h = 0");
}

inline std::vector<double> central_drift(const ModelParams& p, const std::vector<double>& x0, const std::vector<double>& xbar) {
  std::vector<double> r(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) r[i] = -p.h0 * Potential::d1(x0[i]) - p.theta0 * (x0[i] - xbar[i]);
  return r;
}

// Heun integration of the noiseless central agent driven by the grid values of xbar.
inline std::vector<double> reconstruct_x0(const ModelParams& p, const std::vector<double>& xbar, double h) {
  std::vector<double> x0(xbar.size());
  x0[0] = xbar[0];
  auto g = [&](double x, double xb) { return -p.h0 * Potential::d1(x) - p.theta0 * (x - xb); };
  for (std::size_t i = 0; i + 1 < xbar.size(); ++i) {
    const double k1 = g(x0[i], xbar[i]);
    const double k2 = g(x0[i] + h * k1, xbar[i + 1]);
    x0[i + 1] = x0[i] + 0.5 * h * (k1 + k2);
  }
  return x0;
}

} // namespace detail

/// (1 / 2 sigma^2) * integral of (xbar' + theta (xbar - x0))^2 for sigma0 = 0.
///
/// x0 is taken from the path when present and checked against its noiseless
/// dynamics (relative tolerance `constraint_tol`); otherwise it is rebuilt from
/// xbar starting at x0(0) = xbar(0).
inline RateEvaluation rate_degenerate(const PathGrid& path, const ModelParams& p, double constraint_tol = 1e-3) {
  detail::require_ldp_params(p);
  if (p.sigma0 != 0.0) throw InvalidArgument("rate_degenerate requires sigma0 = 0");
  if (!path.has("xbar")) throw ShapeError("rate_degenerate needs an xbar series");
  const double h = path.dt();
  const auto& xbar = path.series("xbar");
  RateEvaluation out;
  std::vector<double> x0;
  if (path.has("x0")) {
    x0 = path.series("x0");
    const auto dx0 = grid_derivative(x0, h);
    const auto drift = detail::central_drift(p, x0, xbar);
    double scale = 1.0;
    for (double v : dx0) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < x0.size(); ++i)
      out.constraint_residual = std::max(out.constraint_residual, std::abs(dx0[i] - drift[i]));
    if (out.constraint_residual > constraint_tol * scale) return RateEvaluation::infeasible(out.constraint_residual);
  } else {
    x0 = detail::reconstruct_x0(p, xbar, h);
  }
  const auto dxbar = grid_derivative(xbar, h);
  std::vector<double> g(xbar.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double r = dxbar[i] + p.theta * (xbar[i] - x0[i]);
    g[i] = r * r;
  }
  out.value = trapezoid(g, h) / (2.0 * p.sigma * p.sigma);
  return out;
}

/// Sum of the two quadratic action integrals weighted by 1/(2 sigma0^2) and 1/(2 sigma^2).
inline double rate_nondegenerate(const PathGrid& path, const ModelParams& p) {
  detail::require_ldp_params(p);
  if (!(p.sigma0 > 0.0)) throw InvalidArgument("rate_nondegenerate requires sigma0 > 0");
  if (!path.has("x0") || !path.has("xbar")) throw ShapeError("rate_nondegenerate needs x0 and xbar series");
  const double h = path.dt();
  const auto& x0 = path.series("x0");
  const auto& xbar = path.series("xbar");
  const auto dx0 = grid_derivative(x0, h);
  const auto dxbar = grid_derivative(xbar, h);
  const auto drift = detail::central_drift(p, x0, xbar);
  std::vector<double> g0(x0.size()), g1(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double r0 = dx0[i] - drift[i];
    const double r1 = dxbar[i] + p.theta * (xbar[i] - x0[i]);
    g0[i] = r0 * r0;
    g1[i] = r1 * r1;
  }
  return trapezoid(g0, h) / (2.0 * p.sigma0 * p.sigma0) + trapezoid(g1, h) / (2.0 * p.sigma * p.sigma);
}

// ---------------------------------------------------------------------------
// Most probable paths
// ---------------------------------------------------------------------------

enum class BvpKind { degenerate, nondegenerate };

/// Most probable path from (-1,-1) to (1,1). `nodes` holds the state-costate
/// vector (x0, xbar, p0, pbar) at every grid point.
struct BvpSolution {
  BvpKind kind = BvpKind::degenerate;
  double h0 = 0.0;
  PathGrid grid; // series x0, xbar
  std::vector<State4> nodes;
  double rate_value = 0.0;
  double ode_residual_norm = 0.0;
  double boundary_residual = 0.0;
  int newton_iterations = 0;
  bool converged = false;
};

/// Newton gave up; `last_iterate()` can seed a continuation step.
class NonConvergenceError : public Error {
public:
  NonConvergenceError(BvpSolution last, const std::string& what) : Error(what), last_(std::move(last)) {}
  const BvpSolution& last_iterate() const noexcept { return last_; }

private:
  BvpSolution last_;
};

/// Continuation in h0 could not bridge [h0_from, h0_to] within the bisection depth.
class ContinuationError : public Error {
public:
  ContinuationError(double from, double to, std::vector<BvpSolution> done, BvpSolution last = {})
      : Error("continuation in h0 failed between " + std::to_string(from) + " and " + std::to_string(to)),
        from_(from), to_(to), done_(std::move(done)), last_(std::move(last)) {}
  double h0_from() const noexcept { return from_; }
  double h0_to() const noexcept { return to_; }
  const std::vector<BvpSolution>& completed() const noexcept { return done_; }
  /// Unconverged iterate of the failing step.
  const BvpSolution& last_iterate() const noexcept { return last_; }

private:
  double from_, to_;
  std::vector<BvpSolution> done_;
  BvpSolution last_;
};

enum class GuessPreset { constant, straight_line, best };
using InitialGuess = std::variant<GuessPreset, PathGrid>;

struct BvpOptions {
  CollocationOptions newton;
  int bisection_depth = 10;
};

/// Euler-Lagrange equation of the degenerate rate as a first-order system in
/// (x, x', x'', x'''); x is the central agent.
struct DegenerateRhs {
  double h0, theta0, theta;

  template <class S>
  std::array<S, 4> operator()(const std::array<S, 4>& y) const {
    const S& x = y[0];
    const S& v = y[1];
    const S& a = y[2];
    const double k = theta0 + theta;
    const S v1 = Potential::d1(x), v2 = Potential::d2(x), v3 = Potential::d3(x), v4 = Potential::d4(x);
    const S x4 = (k * k) * a - h0 * (v4 * v * v * v + 3.0 * v3 * v * a - theta0 * v3 * v * v - 2.0 * theta0 * v2 * a) -
                 (h0 * h0) * v2 * (-(v3 * v * v) - v2 * a + (theta * theta) * v1);
    return {v, a, y[3], x4};
  }
};

/// Euler-Lagrange system of the non-degenerate rate in (x0, xbar, x0', xbar').
struct NondegenerateRhs {
  double h0, theta0, theta, sigma0, sigma;

  template <class S>
  std::array<S, 4> operator()(const std::array<S, 4>& y) const {
    const S& x0 = y[0];
    const S& xb = y[1];
    const S& u = y[2];
    const S& w = y[3];
    const double s0 = sigma0 * sigma0, s = sigma * sigma;
    const S v1 = Potential::d1(x0), v2 = Potential::d2(x0);
    const S gap = x0 - xb;
    const S x0dd = ((s * theta0 - s0 * theta) / s) * w + ((s * theta0 * theta0 + s0 * theta * theta) / s) * gap +
                   (h0 * theta0) * (v1 + v2 * gap) + (h0 * h0) * v1 * v2;
    const S xbdd = ((s0 * theta - s * theta0) / s0) * u - ((s0 * theta * theta + s * theta0 * theta0) / s0) * gap -
                   (h0 * s * theta0 / s0) * v1;
    return {u, w, x0dd, xbdd};
  }
};

/// State-costate form of both problems in (x0, xbar, p0, pbar):
///   x0'   = b0 + sigma0^2 p0,   b0 = -h0 V'(x0) - theta0 (x0 - xbar)
///   xbar' = b + sigma^2 pbar,   b = -theta (xbar - x0)
///   p0'   = (h0 V''(x0) + theta0) p0 - theta pbar
///   pbar' = -theta0 p0 + theta pbar
/// with rate density (sigma0^2 p0^2 + sigma^2 pbar^2) / 2. Eliminating the
/// costates gives DegenerateRhs (sigma0 = 0) or NondegenerateRhs. The collocation
/// runs on this form: its nonlinearity is only cubic, so Newton keeps a usable
/// basin at large h0 where the fourth-order form does not.
struct HamiltonianRhs {
  double h0, theta0, theta, sigma0, sigma;

  template <class S>
  std::array<S, 4> operator()(const std::array<S, 4>& y) const {
    const S& x0 = y[0];
    const S& xb = y[1];
    const S& p0 = y[2];
    const S& pb = y[3];
    const S b0 = -h0 * Potential::d1(x0) - theta0 * (x0 - xb);
    const S b = -theta * (xb - x0);
    return {b0 + (sigma0 * sigma0) * p0, b + (sigma * sigma) * pb, p0 * (h0 * Potential::d2(x0) + theta0) - theta * pb,
            -theta0 * p0 + theta * pb};
  }
};

/// (x0, x0', x0'', x0''') at a state-costate point, for checking the degenerate
/// fourth-order equation.
inline State4 central_jet(const ModelParams& p, const State4& y) {
  const HamiltonianRhs rhs{p.h0, p.theta0, p.theta, p.sigma0, p.sigma};
  const State4 f = rhs(y);
  const double x = y[0], v = f[0], w = f[1];
  const double s0 = p.sigma0 * p.sigma0, s = p.sigma * p.sigma;
  const double stiff = p.h0 * Potential::d2(x) + p.theta0;
  const double a = -stiff * v + p.theta0 * w + s0 * f[2];
  const double p0dd = stiff * f[2] + p.h0 * Potential::d3(x) * v * y[2] - p.theta * f[3];
  const double wdot = -p.theta * (w - v) + s * f[3];
  const double j = -p.h0 * Potential::d3(x) * v * v - stiff * a + p.theta0 * wdot + s0 * p0dd;
  return {x, v, a, j};
}

/// (x0, xbar, x0', xbar') at a state-costate point.
inline State4 pair_jet(const ModelParams& p, const State4& y) {
  const State4 f = HamiltonianRhs{p.h0, p.theta0, p.theta, p.sigma0, p.sigma}(y);
  return {y[0], y[1], f[0], f[1]};
}

namespace detail {

inline void require_degenerate(const ModelParams& p) {
  require_ldp_params(p);
  if (p.sigma0 != 0.0) throw InvalidArgument("degenerate problem requires sigma0 = 0");
  if (!(p.theta0 > 0.0) || !(p.theta > 0.0)) throw InvalidArgument("degenerate problem requires theta0, theta > 0");
}

inline void require_nondegenerate(const ModelParams& p) {
  require_ldp_params(p);
  if (!(p.sigma0 > 0.0)) throw InvalidArgument("non-degenerate problem requires sigma0 > 0");
}

inline HamiltonianRhs hamiltonian(const ModelParams& p) { return {p.h0, p.theta0, p.theta, p.sigma0, p.sigma}; }

/// Simpson rule of the rate density over each interval, midpoint from the collocation.
inline double rate_on_nodes(const ModelParams& p, const std::vector<State4>& y, double h) {
  const auto rhs = hamiltonian(p);
  auto g = [&](const State4& s) {
    return 0.5 * (p.sigma0 * p.sigma0 * s[2] * s[2] + p.sigma * p.sigma * s[3] * s[3]);
  };
  double total = 0.0;
  State4 fl = rhs(y[0]);
  for (std::size_t i = 0; i + 1 < y.size(); ++i) {
    const State4 fr = rhs(y[i + 1]);
    State4 ym;
    for (int c = 0; c < 4; ++c) ym[c] = 0.5 * (y[i][c] + y[i + 1][c]) + h / 8.0 * (fl[c] - fr[c]);
    total += h / 6.0 * (g(y[i]) + 4.0 * g(ym) + g(y[i + 1]));
    fl = fr;
  }
  return total;
}

// Costates implied by a path and its derivatives. In the degenerate case p0
// follows from the pbar equation.
inline State4 costate_point(const ModelParams& p, double x0, double xb, double dx0, double dxb, double dpb_hint) {
  const double b0 = -p.h0 * Potential::d1(x0) - p.theta0 * (x0 - xb);
  const double pb = (dxb + p.theta * (xb - x0)) / (p.sigma * p.sigma);
  const double p0 = p.sigma0 > 0.0 ? (dx0 - b0) / (p.sigma0 * p.sigma0) : (p.theta * pb - dpb_hint) / p.theta0;
  return {x0, xb, p0, pb};
}

inline std::vector<State4> nodes_from_paths(const ModelParams& p, const std::vector<double>& x0,
                                            const std::vector<double>& xb, double h) {
  const auto d0 = grid_derivative(x0, h);
  const auto db = grid_derivative(xb, h);
  std::vector<double> pb(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) pb[i] = (db[i] + p.theta * (xb[i] - x0[i])) / (p.sigma * p.sigma);
  const auto dpb = grid_derivative(pb, h);
  std::vector<State4> y(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) y[i] = costate_point(p, x0[i], xb[i], d0[i], db[i], dpb[i]);
  return y;
}

inline std::vector<State4> preset_nodes(const ModelParams& p, GuessPreset preset, double t_final, std::size_t points) {
  std::vector<State4> y(points);
  const double h = t_final / static_cast<double>(points - 1);
  for (std::size_t i = 0; i < points; ++i) {
    const double t = h * static_cast<double>(i);
    const bool line = preset == GuessPreset::straight_line;
    const double x = line ? -1.0 + 2.0 * t / t_final : -1.0;
    const double v = line ? 2.0 / t_final : 0.0;
    y[i] = costate_point(p, x, x, v, v, 0.0);
  }
  return y;
}

inline std::vector<double> resample(const PathGrid& g, const std::string& name, std::size_t points) {
  const auto& src = g.series(name);
  if (src.size() == points) return src;
  std::vector<double> out(points);
  const double scale = static_cast<double>(src.size() - 1) / static_cast<double>(points - 1);
  for (std::size_t i = 0; i < points; ++i) {
    const double s = scale * static_cast<double>(i);
    const auto j = std::min(static_cast<std::size_t>(s), src.size() - 2);
    const double w = s - static_cast<double>(j);
    out[i] = (1.0 - w) * src[j] + w * src[j + 1];
  }
  return out;
}

inline BvpSolution package(BvpKind kind, const ModelParams& p, double t_final, const CollocationResult& r) {
  BvpSolution s;
  s.kind = kind;
  s.h0 = p.h0;
  const std::size_t n = r.y.size();
  s.grid = PathGrid::uniform(t_final, n - 1);
  std::vector<double> x0(n), xbar(n);
  for (std::size_t i = 0; i < n; ++i) {
    x0[i] = r.y[i][0];
    xbar[i] = r.y[i][1];
  }
  s.grid.set("x0", std::move(x0));
  s.grid.set("xbar", std::move(xbar));
  s.nodes = r.y;
  s.ode_residual_norm = r.ode_residual;
  s.boundary_residual = r.boundary_residual;
  s.newton_iterations = r.iterations;
  s.converged = r.converged;
  const bool finite = std::all_of(r.y.begin(), r.y.end(), [](const State4& v) {
    return std::all_of(v.begin(), v.end(), [](double c) { return std::isfinite(c); });
  });
  s.rate_value = finite ? rate_on_nodes(p, r.y, t_final / static_cast<double>(n - 1))
                        : std::numeric_limits<double>::quiet_NaN();
  return s;
}

inline BvpSolution solve_from_nodes(BvpKind kind, const ModelParams& p, double t_final, std::vector<State4> guess,
                                    const BvpOptions& opt) {
  LobattoCollocation solver(hamiltonian(p), t_final, FixedBoundary{}, opt.newton);
  return package(kind, p, t_final, solver.solve(std::move(guess)));
}

inline BvpSolution solve_with_guess(BvpKind kind, const ModelParams& p, double t_final, std::size_t points,
                                    const InitialGuess& guess, const BvpOptions& opt) {
  if (points < 3) throw InvalidArgument("mesh needs at least 3 points");
  if (!(t_final > 0.0)) throw InvalidArgument("horizon T must be > 0");
  const double h = t_final / static_cast<double>(points - 1);
  if (const auto* g = std::get_if<PathGrid>(&guess))
    return solve_from_nodes(kind, p, t_final, nodes_from_paths(p, resample(*g, "x0", points), resample(*g, "xbar", points), h),
                            opt);
  const auto preset = std::get<GuessPreset>(guess);
  if (preset != GuessPreset::best) return solve_from_nodes(kind, p, t_final, preset_nodes(p, preset, t_final, points), opt);
  // Try both presets; keep a converged one, the lower rate if both converge.
  auto a = solve_from_nodes(kind, p, t_final, preset_nodes(p, GuessPreset::constant, t_final, points), opt);
  auto b = solve_from_nodes(kind, p, t_final, preset_nodes(p, GuessPreset::straight_line, t_final, points), opt);
  if (a.converged != b.converged) return a.converged ? a : b;
  if (!a.converged) return a.ode_residual_norm <= b.ode_residual_norm ? a : b;
  return a.rate_value <= b.rate_value ? a : b;
}

inline BvpSolution require_converged(BvpSolution s) {
  if (!s.converged)
    throw NonConvergenceError(std::move(s), "most-probable-path Newton iteration did not converge");
  return s;
}

} // namespace detail

/// Degenerate case (sigma0 = 0): minimizes the rate with x0(0) = -1, x0(T) = 1,
/// x0'(0) = x0'(T) = 0; xbar then satisfies the central-agent constraint.
inline BvpSolution solve_bvp_degenerate(const ModelParams& p, double t_final, std::size_t mesh_points,
                                        const InitialGuess& guess = GuessPreset::best, const BvpOptions& opt = {}) {
  detail::require_degenerate(p);
  return detail::require_converged(detail::solve_with_guess(BvpKind::degenerate, p, t_final, mesh_points, guess, opt));
}

/// Non-degenerate case: both agents from -1 to 1.
inline BvpSolution solve_bvp_nondegenerate(const ModelParams& p, double t_final, std::size_t mesh_points,
                                           const InitialGuess& guess = GuessPreset::best, const BvpOptions& opt = {}) {
  detail::require_nondegenerate(p);
  return detail::require_converged(detail::solve_with_guess(BvpKind::nondegenerate, p, t_final, mesh_points, guess, opt));
}

/// Solve along an increasing h0 schedule, seeding each problem with the previous
/// solution (linearly extrapolated from the last two when available). A failed
/// step is bisected up to `opt.bisection_depth` times.
inline std::vector<BvpSolution> continue_in_h0(const ModelParams& base, double t_final, const std::vector<double>& schedule,
                                               std::size_t mesh_points, const BvpOptions& opt = {}) {
  if (schedule.empty()) throw InvalidArgument("empty h0 schedule");
  for (std::size_t i = 1; i < schedule.size(); ++i)
    if (!(schedule[i] > schedule[i - 1])) throw InvalidArgument("h0 schedule must be increasing");
  const BvpKind kind = base.sigma0 == 0.0 ? BvpKind::degenerate : BvpKind::nondegenerate;
  auto at = [&](double h0) {
    ModelParams p = base;
    p.h0 = h0;
    if (kind == BvpKind::degenerate) detail::require_degenerate(p);
    else detail::require_nondegenerate(p);
    return p;
  };

  std::vector<BvpSolution> out;
  auto first = detail::solve_with_guess(kind, at(schedule[0]), t_final, mesh_points, GuessPreset::best, opt);
  if (!first.converged) throw ContinuationError(schedule[0], schedule[0], {}, std::move(first));
  out.push_back(std::move(first));

  // Last two converged solutions, used for the secant predictor.
  const BvpSolution* older = nullptr;
  BvpSolution latest = out.back();
  BvpSolution before;
  auto attempt = [&](double to) {
    if (older != nullptr && latest.h0 > older->h0) {
      const double r = (to - latest.h0) / (latest.h0 - older->h0);
      std::vector<State4> guess = latest.nodes;
      for (std::size_t i = 0; i < guess.size(); ++i)
        for (int c = 0; c < 4; ++c) guess[i][c] += r * (latest.nodes[i][c] - older->nodes[i][c]);
      auto s = detail::solve_from_nodes(kind, at(to), t_final, std::move(guess), opt);
      if (s.converged) return s;
    }
    return detail::solve_from_nodes(kind, at(to), t_final, latest.nodes, opt);
  };
  auto accept = [&](BvpSolution s) {
    before = std::move(latest);
    older = &before;
    latest = std::move(s);
  };
  std::function<void(double, double, int)> advance = [&](double from, double to, int depth) {
    auto s = attempt(to);
    if (s.converged) {
      accept(std::move(s));
      return;
    }
    if (depth >= opt.bisection_depth) throw ContinuationError(from, to, out, std::move(s));
    const double mid = 0.5 * (from + to);
    advance(from, mid, depth + 1);
    advance(mid, to, depth + 1);
  };
  for (std::size_t i = 1; i < schedule.size(); ++i) {
    advance(schedule[i - 1], schedule[i], 0);
    out.push_back(latest);
  }
  return out;
}

/// Explicit most probable path for sigma0 = h0 = 0 on `n_points` grid points.
inline BvpSolution closed_form_path_h0_zero(const ModelParams& p, double t_final, std::size_t n_points) {
  detail::require_degenerate(p);
  if (p.h0 != 0.0) throw InvalidArgument("closed-form path requires h0 = 0");
  if (n_points < 3) throw InvalidArgument("closed-form path needs at least 3 points");
  const double k = p.theta0 + p.theta, T = t_final, e = std::exp(-k * T);
  const double den = T * (1.0 + e) + (2.0 / k) * (e - 1.0);
  BvpSolution s;
  s.kind = BvpKind::degenerate;
  s.grid = PathGrid::uniform(T, n_points - 1);
  const auto& t = s.grid.t();
  std::vector<double> x0(n_points), xbar(n_points);
  s.nodes.resize(n_points);
  const double s2 = p.sigma * p.sigma;
  for (std::size_t i = 0; i < n_points; ++i) {
    const double el = std::exp(-k * t[i]), er = std::exp(-k * (T - t[i]));
    const double x = ((1.0 + e) * (2.0 * t[i] - T) + (2.0 / k) * (el - er)) / den;
    const double v = (2.0 * (1.0 + e) - 2.0 * el - 2.0 * er) / den;
    const double a = 2.0 * k * (el - er) / den;
    const double j = -2.0 * k * k * (el + er) / den;
    const double xb = x + v / p.theta0;
    const double dxb = v + a / p.theta0, ddxb = a + j / p.theta0;
    const double pb = (dxb + p.theta * (xb - x)) / s2;
    const double dpb = (ddxb + p.theta * (dxb - v)) / s2;
    x0[i] = x;
    xbar[i] = xb;
    s.nodes[i] = {x, xb, (p.theta * pb - dpb) / p.theta0, pb};
  }
  s.grid.set("x0", std::move(x0));
  s.grid.set("xbar", std::move(xbar));
  s.rate_value = rate_degenerate(s.grid, p).value;
  s.converged = true;
  return s;
}

/// Largest deviation between the collocation nodes and an RK4 shooting pass
/// started from the left node state. Diagnostic only: shooting amplifies the
/// unstable modes, so large values do not by themselves indicate a bad solution.
inline double shooting_diagnostic(const BvpSolution& sol, const ModelParams& p) {
  const auto& y = sol.nodes;
  const double h = sol.grid.dt();
  const auto rhs = detail::hamiltonian(p);
  auto add = [](State4 a, double c, const State4& b) {
    for (int k = 0; k < 4; ++k) a[k] += c * b[k];
    return a;
  };
  State4 s = y.front();
  double dev = 0.0;
  for (std::size_t i = 0; i + 1 < y.size(); ++i) {
    const State4 k1 = rhs(s), k2 = rhs(add(s, h / 2, k1)), k3 = rhs(add(s, h / 2, k2)), k4 = rhs(add(s, h, k3));
    for (int k = 0; k < 4; ++k) s[k] += h / 6 * (k1[k] + 2 * k2[k] + 2 * k3[k] + k4[k]);
    for (int k = 0; k < 4; ++k) dev = std::max(dev, std::abs(s[k] - y[i + 1][k]));
    if (!std::isfinite(dev)) return std::numeric_limits<double>::infinity();
  }
  return dev;
}

/// Admissible variation of a most probable path. `x0`, `dx0`, `ddx0` perturb the
/// central agent; `xbar`, `dxbar` perturb the mean (non-degenerate case only; in
/// the degenerate case xbar follows from the constraint). All should vanish at
/// both ends, together with dx0 in the degenerate case.
struct PathPerturbation {
  std::function<double(double)> x0, dx0, ddx0;
  std::function<double(double)> xbar, dxbar;
};

/// Rate of the solution path moved by eps * perturbation, integrated with the
/// same Simpson rule as BvpSolution::rate_value on the collocation polynomial
/// (node and midpoint values and slopes). Equals rate_value at eps = 0.
inline double perturbed_rate(const BvpSolution& sol, const ModelParams& p, const PathPerturbation& dp, double eps) {
  const auto& y = sol.nodes;
  if (y.size() < 3) throw ShapeError("solution has no nodes");
  const double h = sol.grid.dt();
  const auto rhs = detail::hamiltonian(p);
  const bool degenerate = sol.kind == BvpKind::degenerate;
  const double s0 = p.sigma0 * p.sigma0, s = p.sigma * p.sigma;
  auto b0 = [&](double x, double xb) { return -p.h0 * Potential::d1(x) - p.theta0 * (x - xb); };

  // Integrand at time t for base values (x0, xbar) and slopes (v0, vb).
  auto density = [&](double t, double x0, double xb, double v0, double vb) {
    const double nx0 = x0 + eps * dp.x0(t), nv0 = v0 + eps * dp.dx0(t);
    if (degenerate) {
      // xbar = x0 + (x0' + h0 V'(x0)) / theta0 keeps the central agent noiseless.
      const double shift = eps * dp.dx0(t) + p.h0 * (Potential::d1(nx0) - Potential::d1(x0));
      const double nxb = xb + eps * dp.x0(t) + shift / p.theta0;
      const double dshift = eps * dp.ddx0(t) + p.h0 * (Potential::d2(nx0) * nv0 - Potential::d2(x0) * v0);
      const double nvb = vb + eps * dp.dx0(t) + dshift / p.theta0;
      const double r = nvb + p.theta * (nxb - nx0);
      return r * r / (2.0 * s);
    }
    const double nxb = xb + eps * dp.xbar(t), nvb = vb + eps * dp.dxbar(t);
    const double r0 = nv0 - b0(nx0, nxb), r = nvb + p.theta * (nxb - nx0);
    return r0 * r0 / (2.0 * s0) + r * r / (2.0 * s);
  };

  double total = 0.0;
  State4 fl = rhs(y[0]);
  for (std::size_t i = 0; i + 1 < y.size(); ++i) {
    const State4 fr = rhs(y[i + 1]);
    const double tl = h * static_cast<double>(i), tm = tl + 0.5 * h, tr = tl + h;
    double xm[2], vm[2];
    for (int c = 0; c < 2; ++c) {
      xm[c] = 0.5 * (y[i][c] + y[i + 1][c]) + h / 8.0 * (fl[c] - fr[c]);
      vm[c] = 1.5 * (y[i + 1][c] - y[i][c]) / h - 0.25 * (fl[c] + fr[c]);
    }
    total += h / 6.0 *
             (density(tl, y[i][0], y[i][1], fl[0], fl[1]) + 4.0 * density(tm, xm[0], xm[1], vm[0], vm[1]) +
              density(tr, y[i + 1][0], y[i + 1][1], fr[0], fr[1]));
    fl = fr;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Probability estimates
// ---------------------------------------------------------------------------

struct LdpEstimate {
  double rate_infimum = 0.0;
  std::uint64_t n_agents = 1;
  double log_probability = 0.0;
};

/// log P ~ -N * inf I; never exponentiated.
inline LdpEstimate transition_probability(double rate_infimum, std::uint64_t n_agents) {
  if (!(rate_infimum >= 0.0)) throw InvalidArgument("rate infimum must be >= 0");
  if (n_agents < 1) throw InvalidArgument("N must be >= 1");
  return {rate_infimum, n_agents, -static_cast<double>(n_agents) * rate_infimum};
}

/// Closed-form infimum of the degenerate rate for h0 = 0.
inline double rate_infimum_h0_zero(const ModelParams& p, double t_final) {
  const double k = p.theta0 + p.theta, e = std::exp(-k * t_final);
  return 2.0 * k * k / (p.sigma * p.sigma * p.theta0 * p.theta0) * (1.0 + e) /
         (t_final * (1.0 + e) - 2.0 * (1.0 - e) / k);
}

/// Large-T decay rate for h0 = 0: 2 (theta0 + theta)^2 / (T (theta^2 sigma0^2 + theta0^2 sigma^2)).
inline double large_t_rate_h0_zero(const ModelParams& p, double t_final) {
  const double k = p.theta0 + p.theta;
  return 2.0 * k * k / (t_final * (p.theta * p.theta * p.sigma0 * p.sigma0 + p.theta0 * p.theta0 * p.sigma * p.sigma));
}

/// `t,x0,xbar` rows of a path.
inline void write_path_csv(std::ostream& os, const BvpSolution& s) {
  PathGrid g = PathGrid::from_times(s.grid.t());
  g.set("x0", s.grid.series("x0"));
  g.set("xbar", s.grid.series("xbar"));
  g.write_csv(os);
}

struct SweepRow {
  double h0 = 0.0;
  double rate_infimum = 0.0;
  bool converged = false;
  int iterations = 0;
};

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "h0,rate_infimum,converged,iterations\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%d,%d\n", r.h0, r.rate_infimum, r.converged ? 1 : 0, r.iterations);
    os << buf;
  }
}

} // namespace sysrisk
