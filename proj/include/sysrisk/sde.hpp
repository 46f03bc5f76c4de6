#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "sysrisk/error.hpp"
#include "sysrisk/model.hpp"
#include "sysrisk/path_grid.hpp"
#include "sysrisk/potential.hpp"
#include "sysrisk/rng.hpp"

namespace sysrisk {

/// Steady-state feedback on the local agents, acting on the shifted mean X = x + 1
/// as -theta_c * (b_inf * X0 + (d_inf + e_inf) * Xbar).
struct FeedbackLaw {
  double b_inf = 0.0;
  double d_inf = 0.0;
  double e_inf = 0.0;
  double theta_c = 0.0;

  double mean_drift(double x0, double xbar) const {
    return -theta_c * (b_inf * (x0 + 1.0) + (d_inf + e_inf) * (xbar + 1.0));
  }
};

/// Which series to keep. `stride` thins the record (it must divide the step count);
/// `agents` additionally stores every local agent as x1..xN.
struct RecordOptions {
  std::size_t stride = 1;
  bool agents = false;
};

/// Starting point; defaults to the normal state -1 for everyone.
struct InitialState {
  double x0 = -1.0;
  double x = -1.0; // every local agent (simulate_full) or the mean (reduced systems)
};

/// Full central + N local agents system. Brownian motion W^0 uses stream 0 of
/// the seed and agent j uses stream j, so the seed fixes all N+1 paths.
inline PathGrid simulate_full(const ModelParams& p, const SimConfig& cfg, RecordOptions rec = {},
                              InitialState init = {}) {
  p.validate(true);
  cfg.validate();
  const std::size_t steps = cfg.steps();
  if (rec.stride == 0 || steps % rec.stride != 0) throw InvalidArgument("record stride must divide T/dt");
  const std::size_t n = p.n_agents;
  const double dt = cfg.dt;
  const double sq = std::sqrt(dt);
  const double amp0 = p.sigma0 / std::sqrt(static_cast<double>(n)) * sq;
  const double amp = p.sigma * sq;

  NormalStream w0(cfg.seed, 0);
  std::vector<NormalStream> w;
  w.reserve(n);
  for (std::size_t j = 0; j < n; ++j) w.emplace_back(cfg.seed, j + 1);

  double x0 = init.x0;
  std::vector<double> x(n, init.x), next(n);
  auto mean = [&] {
    double s = 0.0;
    for (double v : x) s += v;
    return s / static_cast<double>(n);
  };

  const std::size_t rows = steps / rec.stride + 1;
  std::vector<double> r0(rows), rbar(rows);
  std::vector<std::vector<double>> ragents(rec.agents ? n : 0, std::vector<double>(rows));
  auto record = [&](std::size_t row, double xbar) {
    r0[row] = x0;
    rbar[row] = xbar;
    for (std::size_t j = 0; j < ragents.size(); ++j) ragents[j][row] = x[j];
  };

  double xbar = mean();
  record(0, xbar);
  for (std::size_t k = 0; k < steps; ++k) {
    const double x0_next =
        x0 + (-p.h0 * Potential::d1(x0) - p.theta0 * (x0 - xbar)) * dt + amp0 * w0();
    bool finite = std::isfinite(x0_next);
    for (std::size_t j = 0; j < n; ++j) {
      next[j] = x[j] + (-p.h * Potential::d1(x[j]) - p.theta * (x[j] - x0)) * dt + amp * w[j]();
      finite = finite && std::isfinite(next[j]);
    }
    if (!finite) throw DivergenceError(k + 1, dt * static_cast<double>(k + 1), "non-finite state in simulate_full");
    x0 = x0_next;
    x.swap(next);
    xbar = mean();
    if ((k + 1) % rec.stride == 0) record((k + 1) / rec.stride, xbar);
  }

  auto grid = PathGrid::uniform(cfg.t_final, rows - 1);
  grid.set("x0", std::move(r0));
  grid.set("xbar", std::move(rbar));
  for (std::size_t j = 0; j < ragents.size(); ++j) grid.set("x" + std::to_string(j + 1), std::move(ragents[j]));
  return grid;
}

namespace detail {

inline PathGrid simulate_pair(const ModelParams& p, const SimConfig& cfg, const FeedbackLaw* law,
                              std::size_t stride, InitialState init) {
  p.validate(true);
  cfg.validate();
  if (p.h != 0.0) throw InvalidArgument("the reduced (x0, xbar) system requires h = 0");
  const std::size_t steps = cfg.steps();
  if (stride == 0 || steps % stride != 0) throw InvalidArgument("record stride must divide T/dt");
  const double dt = cfg.dt;
  const double sq = std::sqrt(dt);
  const double rn = std::sqrt(static_cast<double>(p.n_agents));
  const double amp0 = p.sigma0 / rn * sq;
  const double amp = p.sigma / rn * sq;

  NormalStream w0(cfg.seed, 0), w1(cfg.seed, 1);
  const std::size_t rows = steps / stride + 1;
  std::vector<double> r0(rows), rbar(rows), rctl(law ? rows : 0);

  double x0 = init.x0, xbar = init.x;
  r0[0] = x0;
  rbar[0] = xbar;
  if (law) rctl[0] = law->mean_drift(x0, xbar);
  for (std::size_t k = 0; k < steps; ++k) {
    const double f0 = -p.h0 * Potential::d1(x0) - p.theta0 * (x0 - xbar);
    double f1 = -p.theta * (xbar - x0);
    if (law) f1 += law->mean_drift(x0, xbar);
    const double x0_next = x0 + f0 * dt + amp0 * w0();
    const double xbar_next = xbar + f1 * dt + amp * w1();
    if (!std::isfinite(x0_next) || !std::isfinite(xbar_next))
      throw DivergenceError(k + 1, dt * static_cast<double>(k + 1), "non-finite state in reduced simulation");
    x0 = x0_next;
    xbar = xbar_next;
    if ((k + 1) % stride == 0) {
      const std::size_t row = (k + 1) / stride;
      r0[row] = x0;
      rbar[row] = xbar;
      if (law) rctl[row] = law->mean_drift(x0, xbar);
    }
  }
  auto grid = PathGrid::uniform(cfg.t_final, rows - 1);
  grid.set("x0", std::move(r0));
  grid.set("xbar", std::move(rbar));
  if (law) grid.set("control", std::move(rctl));
  return grid;
}

} // namespace detail

/// Two-dimensional (x0, xbar) system, exact for h = 0. Streams 0 and 1 drive x0 and xbar.
inline PathGrid simulate_reduced(const ModelParams& p, const SimConfig& cfg, std::size_t stride = 1,
                                 InitialState init = {}) {
  return detail::simulate_pair(p, cfg, nullptr, stride, init);
}

/// Reduced system with the feedback drift on xbar; records x0, xbar and control.
inline PathGrid simulate_controlled(const ModelParams& p, const SimConfig& cfg, const FeedbackLaw& law,
                                    std::size_t stride = 1, InitialState init = {}) {
  return detail::simulate_pair(p, cfg, &law, stride, init);
}

/// Number of switches between the wells, starting in the low well. A switch up
/// needs the series to exceed +band, a switch down to fall below -band.
inline std::size_t count_transitions(const std::vector<double>& series, double band = 0.5) {
  bool high = false;
  std::size_t count = 0;
  for (double v : series) {
    if (!high && v > band) {
      high = true;
      ++count;
    } else if (high && v < -band) {
      high = false;
      ++count;
    }
  }
  return count;
}

/// Run `replicas` independent jobs; job r gets derive_seed(seed, r). The result
/// does not depend on `jobs`.
template <class Result, class Fn>
std::vector<Result> run_replicas(std::size_t replicas, std::uint64_t seed, unsigned jobs, Fn&& fn) {
  std::vector<Result> out(replicas);
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(replicas, 1))));
  if (jobs == 1) {
    for (std::size_t r = 0; r < replicas; ++r) out[r] = fn(r, derive_seed(seed, r));
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(jobs);
  for (unsigned j = 0; j < jobs; ++j)
    pool.emplace_back([&, j] {
      try {
        for (std::size_t r = j; r < replicas; r += jobs) out[r] = fn(r, derive_seed(seed, r));
      } catch (...) {
        errors[j] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

struct TerminalState {
  double x0 = 0.0;
  double xbar = 0.0;
};

/// Terminal (x0(T), xbar(T)) of the reduced system over many replicas.
inline std::vector<TerminalState> terminal_states_reduced(const ModelParams& p, const SimConfig& cfg,
                                                          std::size_t replicas, unsigned jobs = 1) {
  return run_replicas<TerminalState>(replicas, cfg.seed, jobs, [&](std::size_t, std::uint64_t s) {
    SimConfig c = cfg;
    c.seed = s;
    const auto g = simulate_reduced(p, c, c.steps());
    return TerminalState{g.series("x0").back(), g.series("xbar").back()};
  });
}

} // namespace sysrisk
