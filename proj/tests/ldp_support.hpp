#pragma once

#include <cmath>
#include <numbers>
#include <random>

#include "sysrisk/ldp.hpp"

namespace sysrisk::testing {

// Smooth variation vanishing with its slope at both ends: a sin^2 envelope times
// a random Fourier mode for x0, a sin envelope for xbar.
inline PathPerturbation random_perturbation(std::mt19937_64& rng, double T) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> mode(1, 5);
  const double a = u(rng), c = u(rng), k = std::numbers::pi / T, w = mode(rng) * k;
  PathPerturbation dp;
  dp.x0 = [=](double t) { return a * std::pow(std::sin(k * t), 2) * std::sin(w * t); };
  dp.dx0 = [=](double t) {
    const double s = std::sin(k * t), co = std::cos(k * t);
    return a * (2.0 * s * co * k * std::sin(w * t) + s * s * w * std::cos(w * t));
  };
  dp.ddx0 = [=](double t) {
    const double s = std::sin(k * t), co = std::cos(k * t);
    return a * (2.0 * k * k * (co * co - s * s) * std::sin(w * t) + 4.0 * s * co * k * w * std::cos(w * t) -
                s * s * w * w * std::sin(w * t));
  };
  dp.xbar = [=](double t) { return c * std::sin(k * t) * std::sin(2.0 * w * t); };
  dp.dxbar = [=](double t) {
    return c * (k * std::cos(k * t) * std::sin(2.0 * w * t) + 2.0 * w * std::sin(k * t) * std::cos(2.0 * w * t));
  };
  return dp;
}

// Largest |dI/deps| / I over `count` perturbations, by central differences.
inline double worst_directional_derivative(const BvpSolution& sol, const ModelParams& p, int count, std::uint64_t seed,
                                           double eps = 1e-5) {
  std::mt19937_64 rng(seed);
  const double T = sol.grid.t().back();
  double worst = 0.0;
  for (int i = 0; i < count; ++i) {
    const auto dp = random_perturbation(rng, T);
    const double d = (perturbed_rate(sol, p, dp, eps) - perturbed_rate(sol, p, dp, -eps)) / (2.0 * eps);
    worst = std::max(worst, std::abs(d) / sol.rate_value);
  }
  return worst;
}

inline ModelParams unit_params(double h0, double sigma0) {
  ModelParams p;
  p.h0 = h0;
  p.sigma0 = sigma0;
  p.theta0 = 1.0;
  p.sigma = 1.0;
  p.theta = 1.0;
  p.n_agents = 100;
  return p;
}

} // namespace sysrisk::testing
