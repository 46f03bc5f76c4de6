#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "sysrisk/dual.hpp"
#include "sysrisk/error.hpp"

namespace sysrisk {

/// Four-dimensional first-order state used by both most-probable-path problems.
using State4 = std::array<double, 4>;

/// Two components pinned at each end of [0, T].
struct FixedBoundary {
  std::array<int, 2> left_index{0, 1};
  std::array<double, 2> left_value{-1.0, -1.0};
  std::array<int, 2> right_index{0, 1};
  std::array<double, 2> right_value{1.0, 1.0};
};

struct CollocationOptions {
  int max_iterations = 50; // Newton iterations per attempt
  int restarts = 3;        // further attempts from the last iterate
  double tolerance = 1e-10;
  std::function<void(int iteration, double scaled_residual, double step)> monitor; // optional trace
};

struct CollocationResult {
  std::vector<State4> y;  // node states
  std::vector<State4> f;  // right-hand side at the nodes
  double scaled_residual = 0.0; // max|Phi| / (h (1 + max|f|))
  double ode_residual = 0.0;    // max|Phi| / h
  double boundary_residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Three-stage Lobatto IIIA collocation (Simpson rule with cubic Hermite midpoints,
/// fourth order) on a uniform mesh, solved by damped Newton with a sparse LU.
///
/// `Rhs` maps std::array<S, 4> to std::array<S, 4> for S = double and Dual<8>.
template <class Rhs>
class LobattoCollocation {
public:
  LobattoCollocation(Rhs rhs, double t_final, FixedBoundary bc, CollocationOptions opt = {})
      : rhs_(std::move(rhs)), t_final_(t_final), bc_(bc), opt_(opt) {}

  CollocationResult solve(std::vector<State4> guess) const {
    if (guess.size() < 3) throw InvalidArgument("collocation needs at least two intervals");
    const std::size_t nodes = guess.size();
    const std::size_t m = nodes - 1;
    const double h = t_final_ / static_cast<double>(m);
    const int n = static_cast<int>(4 * nodes);

    for (int k = 0; k < 2; ++k) {
      guess.front()[bc_.left_index[k]] = bc_.left_value[k];
      guess.back()[bc_.right_index[k]] = bc_.right_value[k];
    }

    CollocationResult out;
    out.y = std::move(guess);
    Eigen::VectorXd F(n);
    double merit = residual(out.y, h, F, out);
    Eigen::SparseMatrix<double> J(n, n);
    Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
    bool pattern_done = false;

    for (int attempt = 0; attempt <= opt_.restarts && !out.converged; ++attempt) {
      for (int it = 0; it < opt_.max_iterations; ++it) {
        if (out.scaled_residual < opt_.tolerance) {
          out.converged = true;
          break;
        }
        jacobian(out.y, h, J);
        if (!pattern_done) {
          lu.analyzePattern(J);
          pattern_done = true;
        }
        lu.factorize(J);
        if (lu.info() != Eigen::Success) return out;
        const Eigen::VectorXd delta = lu.solve(-F);
        if (!delta.allFinite()) return out;
        ++out.iterations;

        // Natural-level damping: accept the step when the simplified Newton
        // correction at the trial point shrinks, which is invariant to how the
        // equations and components are scaled.
        const double dnorm = delta.norm();
        double lambda = 1.0;
        bool accepted = false;
        std::vector<State4> trial(nodes);
        Eigen::VectorXd Ft(n);
        CollocationResult probe;
        for (int halving = 0; halving < 30; ++halving) {
          for (std::size_t i = 0; i < nodes; ++i)
            for (int c = 0; c < 4; ++c) trial[i][c] = out.y[i][c] + lambda * delta[4 * i + c];
          const double mt = residual(trial, h, Ft, probe);
          if (std::isfinite(mt)) {
            const Eigen::VectorXd simplified = lu.solve(-Ft);
            if (simplified.allFinite() && (simplified.norm() <= (1.0 - 0.25 * lambda) * dnorm || mt < 1e-3 * merit)) {
              accepted = true;
              break;
            }
          }
          lambda *= 0.5;
        }
        if (!accepted) break; // stalled; restart from the current iterate
        out.y.swap(trial);
        F.swap(Ft);
        merit = residual(out.y, h, F, out);
        if (opt_.monitor) opt_.monitor(out.iterations, out.scaled_residual, lambda);
      }
      if (out.scaled_residual < opt_.tolerance) out.converged = true;
    }
    return out;
  }

private:
  // Residual vector ordered [left BC (2), Phi_0 (4), ..., Phi_{M-1} (4), right BC (2)];
  // returns the Euclidean norm and fills the diagnostics of `diag`.
  double residual(const std::vector<State4>& y, double h, Eigen::VectorXd& F, CollocationResult& diag) const {
    const std::size_t nodes = y.size();
    std::vector<State4> f(nodes);
    double fmax = 0.0;
    for (std::size_t i = 0; i < nodes; ++i) {
      f[i] = rhs_(y[i]);
      for (double v : f[i]) fmax = std::max(fmax, std::abs(v));
    }
    F[0] = y.front()[bc_.left_index[0]] - bc_.left_value[0];
    F[1] = y.front()[bc_.left_index[1]] - bc_.left_value[1];
    double phimax = 0.0;
    for (std::size_t i = 0; i + 1 < nodes; ++i) {
      State4 ym;
      for (int c = 0; c < 4; ++c) ym[c] = 0.5 * (y[i][c] + y[i + 1][c]) + h / 8.0 * (f[i][c] - f[i + 1][c]);
      const State4 fm = rhs_(ym);
      for (int c = 0; c < 4; ++c) {
        const double phi = y[i + 1][c] - y[i][c] - h / 6.0 * (f[i][c] + 4.0 * fm[c] + f[i + 1][c]);
        F[2 + 4 * i + c] = phi;
        phimax = std::max(phimax, std::abs(phi));
      }
    }
    const auto last = static_cast<Eigen::Index>(4 * nodes);
    F[last - 2] = y.back()[bc_.right_index[0]] - bc_.right_value[0];
    F[last - 1] = y.back()[bc_.right_index[1]] - bc_.right_value[1];
    diag.f = std::move(f);
    diag.ode_residual = phimax / h;
    diag.scaled_residual = phimax / (h * (1.0 + fmax));
    diag.boundary_residual = std::max({std::abs(F[0]), std::abs(F[1]), std::abs(F[last - 2]), std::abs(F[last - 1])});
    if (diag.boundary_residual > diag.scaled_residual) diag.scaled_residual = diag.boundary_residual;
    const double norm = F.norm();
    return std::isfinite(norm) ? norm : std::numeric_limits<double>::infinity();
  }

  void jacobian(const std::vector<State4>& y, double h, Eigen::SparseMatrix<double>& J) const {
    using D = Dual<8>;
    const std::size_t nodes = y.size();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(4 + 32 * (nodes - 1));
    trip.emplace_back(0, bc_.left_index[0], 1.0);
    trip.emplace_back(1, bc_.left_index[1], 1.0);
    for (std::size_t i = 0; i + 1 < nodes; ++i) {
      std::array<D, 4> yl, yr;
      for (std::size_t c = 0; c < 4; ++c) {
        yl[c] = D::variable(y[i][c], c);
        yr[c] = D::variable(y[i + 1][c], 4 + c);
      }
      const auto fl = rhs_(yl);
      const auto fr = rhs_(yr);
      std::array<D, 4> ym;
      for (int c = 0; c < 4; ++c) ym[c] = 0.5 * (yl[c] + yr[c]) + (h / 8.0) * (fl[c] - fr[c]);
      const auto fm = rhs_(ym);
      for (int c = 0; c < 4; ++c) {
        const D phi = yr[c] - yl[c] - (h / 6.0) * (fl[c] + 4.0 * fm[c] + fr[c]);
        const int row = static_cast<int>(2 + 4 * i + c);
        // Structural zeros are kept so the LU pattern analysis stays valid across iterations.
        for (int k = 0; k < 8; ++k) trip.emplace_back(row, static_cast<int>(4 * i) + k, phi.d[k]);
      }
    }
    const int last = static_cast<int>(4 * nodes);
    trip.emplace_back(last - 2, static_cast<int>(4 * (nodes - 1)) + bc_.right_index[0], 1.0);
    trip.emplace_back(last - 1, static_cast<int>(4 * (nodes - 1)) + bc_.right_index[1], 1.0);
    J.setFromTriplets(trip.begin(), trip.end());
  }

  Rhs rhs_;
  double t_final_;
  FixedBoundary bc_;
  CollocationOptions opt_;
};

} // namespace sysrisk
