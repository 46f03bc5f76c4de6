#pragma once

#include <array>
#include <cassert>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "sysrisk/error.hpp"
#include "sysrisk/model.hpp"
#include "sysrisk/potential.hpp"

namespace sysrisk {

/// Plain row-major 2x2 matrix.
struct Mat2 {
  double m11 = 0.0, m12 = 0.0, m21 = 0.0, m22 = 0.0;

  static Mat2 identity() { return {1.0, 0.0, 0.0, 1.0}; }
  Mat2 transpose() const { return {m11, m21, m12, m22}; }
  double trace() const { return m11 + m22; }
  double det() const { return m11 * m22 - m12 * m21; }
  double frobenius() const { return std::sqrt(m11 * m11 + m12 * m12 + m21 * m21 + m22 * m22); }

  friend Mat2 operator*(const Mat2& a, const Mat2& b) {
    return {a.m11 * b.m11 + a.m12 * b.m21, a.m11 * b.m12 + a.m12 * b.m22, a.m21 * b.m11 + a.m22 * b.m21,
            a.m21 * b.m12 + a.m22 * b.m22};
  }
  friend Mat2 operator+(const Mat2& a, const Mat2& b) { return {a.m11 + b.m11, a.m12 + b.m12, a.m21 + b.m21, a.m22 + b.m22}; }
  friend Mat2 operator-(const Mat2& a, const Mat2& b) { return {a.m11 - b.m11, a.m12 - b.m12, a.m21 - b.m21, a.m22 - b.m22}; }
  friend Mat2 operator*(double s, const Mat2& a) { return {s * a.m11, s * a.m12, s * a.m21, s * a.m22}; }
};

/// Drift of the linearized fluctuations (z0, zbar):
/// A = [[-h0 V''(y0e) - theta0, theta0], [theta, -theta]].
struct DriftMatrix {
  double a11 = 0.0, a12 = 0.0, a21 = 0.0, a22 = 0.0;

  Mat2 matrix() const { return {a11, a12, a21, a22}; }
};

/// A = Q diag(lambda1, lambda2) Q^{-1} with lambda1 >= lambda2.
struct EigenStructure {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  Mat2 q;
  Mat2 q_inv;
};

struct CovarianceReport {
  double var_z0 = 0.0;
  double var_zbar = 0.0;
  double cov = 0.0;
  double limit_var_z0 = 0.0;
  double limit_var_zbar = 0.0;
  double limit_cov = 0.0;

  Mat2 matrix() const { return {var_z0, cov, cov, var_zbar}; }
};

struct FluctuationReport {
  DriftMatrix drift;
  std::optional<EigenStructure> eigen; // empty when the spectrum is degenerate
  CovarianceReport covariance;
};

/// Exact covariance of (x0(T), xbar(T)) for h0 = 0, including the 1/N factor,
/// and its rank-one large-T approximation.
struct TerminalCovariance {
  Mat2 exact;
  Mat2 large_t;
};

namespace detail {

inline void require_h_zero(const ModelParams& p, const char* where) {
  p.validate(true);
  if (p.h != 0.0) throw InvalidArgument(std::string(where) + " requires h = 0");
}

inline Mat2 noise_matrix(const ModelParams& p) { return {p.sigma0 * p.sigma0, 0.0, 0.0, p.sigma * p.sigma}; }

} // namespace detail

inline DriftMatrix build_drift(const ModelParams& p, double y0e) {
  return {-p.h0 * Potential::d2(y0e) - p.theta0, p.theta0, p.theta, -p.theta};
}

/// Below this discriminant the eigenvalues are treated as coincident.
inline constexpr double kDegenerateDiscriminant = 1e-12;

inline EigenStructure eigen_decompose(const DriftMatrix& m) {
  const double tr = m.a11 + m.a22;
  const double det = m.a11 * m.a22 - m.a12 * m.a21;
  const double disc = tr * tr - 4.0 * det;
  if (!(disc > kDegenerateDiscriminant)) throw DegenerateSpectrumError("drift matrix has (nearly) repeated eigenvalues");
  if (m.a21 == 0.0) throw DegenerateSpectrumError("eigenvector formulas need a nonzero coupling theta");
  const double root = std::sqrt(disc);
  // Avoid cancellation in the smaller-magnitude root.
  const double big = tr < 0.0 ? 0.5 * (tr - root) : 0.5 * (tr + root);
  const double small = big != 0.0 ? det / big : 0.0;
  EigenStructure e;
  e.lambda1 = std::max(big, small);
  e.lambda2 = std::min(big, small);
  const double gap = e.lambda1 - e.lambda2;
  const double p1 = (e.lambda1 - m.a22) / m.a21, p2 = (e.lambda2 - m.a22) / m.a21;
  e.q = (m.a21 / gap) * Mat2{p1, p2, 1.0, 1.0};
  e.q_inv = {1.0, -p2, -1.0, p1};
  return e;
}

/// Direct solve of A S + S A^T + D = 0 for symmetric S.
inline Mat2 solve_lyapunov(const Mat2& a, const Mat2& d) {
  // Unknowns (s11, s12, s22); three independent equations.
  const std::array<std::array<double, 4>, 3> rows{{
      {2.0 * a.m11, 2.0 * a.m12, 0.0, -d.m11},
      {a.m21, a.m11 + a.m22, a.m12, -0.5 * (d.m12 + d.m21)},
      {0.0, 2.0 * a.m21, 2.0 * a.m22, -d.m22},
  }};
  auto det3 = [](double a11, double a12, double a13, double a21, double a22, double a23, double a31, double a32,
                 double a33) {
    return a11 * (a22 * a33 - a23 * a32) - a12 * (a21 * a33 - a23 * a31) + a13 * (a21 * a32 - a22 * a31);
  };
  const auto& r = rows;
  const double den = det3(r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]);
  if (den == 0.0) throw InstabilityError("Lyapunov equation is singular");
  const double s11 = det3(r[0][3], r[0][1], r[0][2], r[1][3], r[1][1], r[1][2], r[2][3], r[2][1], r[2][2]) / den;
  const double s12 = det3(r[0][0], r[0][3], r[0][2], r[1][0], r[1][3], r[1][2], r[2][0], r[2][3], r[2][2]) / den;
  const double s22 = det3(r[0][0], r[0][1], r[0][3], r[1][0], r[1][1], r[1][3], r[2][0], r[2][1], r[2][3]) / den;
  return {s11, s12, s12, s22};
}

/// Large-theta limits of the stationary second moments; 0 when sigma0 = 0.
inline CovarianceReport fluctuation_limits(const ModelParams& p, double y0e) {
  CovarianceReport r;
  const double stiff = p.h0 * Potential::d2(y0e);
  r.limit_var_z0 = p.sigma0 == 0.0 ? 0.0 : p.sigma0 * p.sigma0 / (2.0 * stiff);
  r.limit_var_zbar = r.limit_var_z0 + p.sigma * p.sigma / (2.0 * p.theta);
  r.limit_cov = r.limit_var_z0;
  return r;
}

/// Stationary covariance of (z0, zbar) from the eigen-decomposition closed forms,
/// or the Lyapunov solve when the spectrum is degenerate.
inline CovarianceReport stationary_covariance(const ModelParams& p, double y0e) {
  detail::require_h_zero(p, "stationary_covariance");
  if (!(p.h0 > 0.0 && p.theta0 > 0.0 && p.theta > 0.0))
    throw InstabilityError("stationary covariance needs h0, theta0, theta > 0");
  const auto drift = build_drift(p, y0e);
  const Mat2 a = drift.matrix();
  if (!(a.trace() < 0.0 && a.det() > 0.0)) throw InstabilityError("drift matrix has a non-negative eigenvalue");

  CovarianceReport r = fluctuation_limits(p, y0e);
  const double s0 = p.sigma0 * p.sigma0, s = p.sigma * p.sigma;
  const double tr = a.trace(), det = a.det();
  if (tr * tr - 4.0 * det > kDegenerateDiscriminant) {
    const auto e = eigen_decompose(drift);
    const double l1 = e.lambda1, l2 = e.lambda2, th = p.theta;
    const double p1 = 1.0 + l1 / th, p2 = 1.0 + l2 / th;
    const double pre = th * th / ((l1 - l2) * (l1 - l2));
    const double b = s0 + s * p2 * p2, c = s0 + s * p1 * p2, d = s0 + s * p1 * p1;
    r.var_z0 = pre * (-p1 * p1 * b / (2 * l1) + 2 * p1 * p2 * c / (l1 + l2) - p2 * p2 * d / (2 * l2));
    r.var_zbar = pre * (-b / (2 * l1) + 2 * c / (l1 + l2) - d / (2 * l2));
    r.cov = pre * (-p1 * b / (2 * l1) + (p1 + p2) * c / (l1 + l2) - p2 * d / (2 * l2));
#ifndef NDEBUG
    const Mat2 check = solve_lyapunov(a, detail::noise_matrix(p));
    assert(std::abs(check.m22 - r.var_zbar) <= 1e-6 * std::abs(check.m22));
#endif
  } else {
    const Mat2 sig = solve_lyapunov(a, detail::noise_matrix(p));
    r.var_z0 = sig.m11;
    r.var_zbar = sig.m22;
    r.cov = sig.m12;
  }
  return r;
}

inline FluctuationReport analyze_fluctuations(const ModelParams& p, double y0e) {
  FluctuationReport f;
  f.drift = build_drift(p, y0e);
  try {
    f.eigen = eigen_decompose(f.drift);
  } catch (const DegenerateSpectrumError&) {
  }
  f.covariance = stationary_covariance(p, y0e);
  return f;
}

/// exp(A) by scaling and squaring of the Taylor series.
inline Mat2 expm(const Mat2& a) {
  int squarings = 0;
  double norm = a.frobenius();
  while (norm > 0.5) {
    norm /= 2.0;
    ++squarings;
  }
  const Mat2 x = std::ldexp(1.0, -squarings) * a;
  Mat2 term = Mat2::identity(), sum = Mat2::identity();
  for (int k = 1; k <= 20; ++k) {
    term = (1.0 / k) * (term * x);
    sum = sum + term;
  }
  for (int i = 0; i < squarings; ++i) sum = sum * sum;
  return sum;
}

/// Integral over [0, t] of e^{sA} D e^{sA^T} ds by adaptive quadrature.
inline Mat2 covariance_integral_quadrature(const Mat2& a, const Mat2& d, double t) {
  using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
  auto entry = [&](int which) {
    return GK::integrate(
        [&](double s) {
          const Mat2 e = expm(s * a);
          const Mat2 v = e * d * e.transpose();
          return which == 0 ? v.m11 : which == 1 ? v.m12 : v.m22;
        },
        0.0, t, 25, 1e-13);
  };
  if (t == 0.0) return {};
  const double c11 = entry(0), c12 = entry(1), c22 = entry(2);
  return {c11, c12, c12, c22};
}

/// Covariance of (z0(t), zbar(t)) started from zero, via the eigen-decomposition
/// (or quadrature when the spectrum is degenerate).
inline Mat2 covariance_at_time(const ModelParams& p, double y0e, double t) {
  detail::require_h_zero(p, "covariance_at_time");
  if (!(t >= 0.0)) throw InvalidArgument("covariance_at_time needs t >= 0");
  if (t == 0.0) return {};
  const auto drift = build_drift(p, y0e);
  const Mat2 d = detail::noise_matrix(p);
  EigenStructure e;
  try {
    e = eigen_decompose(drift);
  } catch (const DegenerateSpectrumError&) {
    return covariance_integral_quadrature(drift.matrix(), d, t);
  }
  const Mat2 g = e.q_inv * d * e.q_inv.transpose();
  auto factor = [t](double mu) { return mu == 0.0 ? t : std::expm1(mu * t) / mu; };
  const Mat2 inner{g.m11 * factor(2 * e.lambda1), g.m12 * factor(e.lambda1 + e.lambda2),
                   g.m21 * factor(e.lambda1 + e.lambda2), g.m22 * factor(2 * e.lambda2)};
  Mat2 c = e.q * inner * e.q.transpose();
  c.m21 = c.m12 = 0.5 * (c.m12 + c.m21);
  return c;
}

/// Terminal covariance of (x0(T), xbar(T)) when neither agent type has its own potential.
inline TerminalCovariance terminal_covariance_h0_zero(const ModelParams& p, double t_final) {
  detail::require_h_zero(p, "terminal_covariance_h0_zero");
  if (p.h0 != 0.0) throw InvalidArgument("terminal_covariance_h0_zero requires h0 = 0");
  if (!(p.theta > 0.0)) throw InvalidArgument("terminal_covariance_h0_zero requires theta > 0");
  if (!(t_final >= 0.0)) throw InvalidArgument("terminal covariance needs T >= 0");
  const double th0 = p.theta0, th = p.theta, k = th0 + th, T = t_final;
  const double s0 = p.sigma0 * p.sigma0, s = p.sigma * p.sigma;
  const double n = static_cast<double>(p.n_agents);

  const Mat2 q = (th / k) * Mat2{1.0, -th0 / th, 1.0, 1.0};
  const double e11 = T * (s0 + th0 * th0 * s / (th * th));
  const double e12 = (-s0 + th0 * s / th) * (-std::expm1(-T * k)) / k;
  const double e22 = (s0 + s) * (-std::expm1(-2.0 * T * k)) / (2.0 * k);
  const Mat2 sigma{e11, e12, e12, e22};

  TerminalCovariance out;
  out.exact = (1.0 / n) * (q * sigma * q.transpose());
  out.exact.m21 = out.exact.m12 = 0.5 * (out.exact.m12 + out.exact.m21);
  const double c = T / n * (th * th * s0 + th0 * th0 * s) / (k * k);
  out.large_t = {c, c, c, c};
  return out;
}

/// One row of a parameter sweep of the stationary fluctuation statistics.
struct FluctuationRow {
  std::string param;
  double value = 0.0;
  CovarianceReport report;
};

inline void write_fluctuation_csv(std::ostream& os, const std::vector<FluctuationRow>& rows) {
  os << "param_swept,value,var_z0,var_zbar,cov,limit_var_z0,limit_var_zbar,limit_cov\n";
  char buf[256];
  for (const auto& r : rows) {
    const auto& c = r.report;
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", r.value, c.var_z0, c.var_zbar, c.cov,
                  c.limit_var_z0, c.limit_var_zbar, c.limit_cov);
    os << r.param << ',' << buf << '\n';
  }
}

} // namespace sysrisk
