#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "sysrisk/fluctuations.hpp"

using namespace sysrisk;

namespace {

ModelParams fluctuation_base() { return {0.5, 0.0, 0.1, 1.0, 0.1, 10.0, 100}; }

ModelParams random_stable(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 5.0);
  return {u(rng), 0.0, u(rng), u(rng), u(rng), u(rng), 100};
}

Mat2 lyapunov_residual(const Mat2& a, const Mat2& s, const Mat2& d) { return a * s + s * a.transpose() + d; }

} // namespace

TEST(Drift, Structure) {
  const auto a = build_drift(fluctuation_base(), -1.0);
  EXPECT_DOUBLE_EQ(a.a11, -1.1);
  EXPECT_EQ(a.a12, 0.1);
  EXPECT_EQ(a.a21, 10.0);
  EXPECT_EQ(a.a22, -10.0);

  const auto b = build_drift({0.0, 0.0, 0.0, 1.0, 2.0, 2.0, 1}, -1.0);
  EXPECT_EQ(b.a12, b.a21);
  EXPECT_EQ(b.a21 + b.a22, 0.0);

  const auto c = build_drift({1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1}, -1.0);
  EXPECT_EQ(c.a11, -2.0);
  EXPECT_EQ(c.a12, 0.0);
  EXPECT_EQ(c.a21, 0.0);
  EXPECT_EQ(c.a22, 0.0);
}

TEST(Eigen, TraceAndDeterminant) {
  const auto e = eigen_decompose(build_drift(fluctuation_base(), -1.0));
  EXPECT_NEAR(e.lambda1 * e.lambda2, 10.0, 1e-10);
  EXPECT_NEAR(e.lambda1 + e.lambda2, -11.1, 1e-10);
  EXPECT_GE(e.lambda1, e.lambda2);
  EXPECT_LT(e.lambda1, 0.0);
}

TEST(Eigen, LinearSystemWithoutCentralPotential) {
  const ModelParams p{0.0, 0.0, 1.0, 1.0, 0.3, 0.7, 1};
  const auto e = eigen_decompose(build_drift(p, -1.0));
  EXPECT_NEAR(e.lambda1, 0.0, 1e-15);
  EXPECT_NEAR(e.lambda2, -1.0, 1e-15);
}

TEST(Eigen, Reconstruction) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const auto m = build_drift(random_stable(rng), -1.0);
    const auto e = eigen_decompose(m);
    const Mat2 lam{e.lambda1, 0.0, 0.0, e.lambda2};
    const Mat2 back = e.q * lam * e.q_inv;
    EXPECT_LT((back - m.matrix()).frobenius(), 1e-12 * m.matrix().frobenius());
  }
}

TEST(Eigen, DegenerateSpectrumRejected) {
  // a11 = a22 and a12 * a21 = 0 gives a repeated eigenvalue.
  const DriftMatrix m{-1.0, 0.0, 1.0, -1.0};
  EXPECT_THROW(eigen_decompose(m), DegenerateSpectrumError);
}

TEST(StationaryCovariance, Limits) {
  const auto r = stationary_covariance(fluctuation_base(), -1.0);
  EXPECT_DOUBLE_EQ(r.limit_var_z0, 0.005);
  EXPECT_NEAR(r.limit_var_zbar - r.limit_var_z0, 0.05, 1e-15);
  EXPECT_EQ(r.limit_cov, r.limit_var_z0);
}

TEST(StationaryCovariance, NoiselessCentralAgent) {
  auto p = fluctuation_base();
  p.sigma0 = 0.0;
  const auto r = stationary_covariance(p, -1.0);
  const auto a = build_drift(p, -1.0).matrix();
  const auto sig = solve_lyapunov(a, {0.0, 0.0, 0.0, p.sigma * p.sigma});
  EXPECT_GT(r.var_z0, 0.0);
  EXPECT_EQ(r.limit_var_z0, 0.0);
  EXPECT_NEAR(r.var_z0, sig.m11, 1e-12 * sig.m11);
}

TEST(StationaryCovariance, LyapunovAgreementOnRandomDraws) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 100; ++i) {
    const auto p = random_stable(rng);
    const auto r = stationary_covariance(p, -1.0);
    const Mat2 a = build_drift(p, -1.0).matrix();
    const Mat2 d{p.sigma0 * p.sigma0, 0.0, 0.0, p.sigma * p.sigma};
    EXPECT_LT(lyapunov_residual(a, r.matrix(), d).frobenius(), 1e-9);
    const Mat2 lyap = solve_lyapunov(a, d);
    EXPECT_NEAR(r.var_z0, lyap.m11, 1e-9 * lyap.m11);
    EXPECT_NEAR(r.var_zbar, lyap.m22, 1e-9 * lyap.m22);
    EXPECT_NEAR(r.cov, lyap.m12, 1e-9 * std::abs(lyap.m12) + 1e-15);
    EXPECT_LE(r.cov * r.cov, r.var_z0 * r.var_zbar);
  }
}

TEST(StationaryCovariance, ConvergesToLimitsAtLargeTheta) {
  // alpha = sigma^2 / theta fixed; generic values so the limits are not exact.
  const double alpha = 0.1;
  double previous = std::numeric_limits<double>::infinity();
  for (double theta : {10.0, 100.0, 1000.0, 10000.0}) {
    const ModelParams p{0.5, 0.0, 0.3, std::sqrt(alpha * theta), 0.2, theta, 100};
    const auto r = stationary_covariance(p, -1.0);
    const double err = std::max({std::abs(r.var_z0 / r.limit_var_z0 - 1.0), std::abs(r.var_zbar / r.limit_var_zbar - 1.0),
                                 std::abs(r.cov / r.limit_cov - 1.0)});
    EXPECT_LT(err, previous);
    previous = err;
  }
  EXPECT_LT(previous, 1e-3);
}

TEST(StationaryCovariance, GrowsWithCentralNoise) {
  auto p = fluctuation_base();
  double last = 0.0;
  for (double s0 : {0.1, 0.5, 1.0, 2.0, 5.0}) {
    p.sigma0 = s0;
    const double v = stationary_covariance(p, -1.0).var_z0;
    EXPECT_GT(v, last);
    last = v;
  }
}

TEST(StationaryCovariance, Instability) {
  auto p = fluctuation_base();
  p.h0 = 0.0;
  EXPECT_THROW(stationary_covariance(p, -1.0), InstabilityError);
  p = fluctuation_base();
  p.h = 0.1;
  EXPECT_THROW(stationary_covariance(p, -1.0), InvalidArgument);
  p = fluctuation_base();
  EXPECT_THROW(stationary_covariance(p, 0.0), InstabilityError); // V''(0) < 0
}

TEST(CovarianceAtTime, EndpointsAndQuadrature) {
  const auto p = fluctuation_base();
  const Mat2 zero = covariance_at_time(p, -1.0, 0.0);
  EXPECT_EQ(zero.frobenius(), 0.0);

  const auto e = eigen_decompose(build_drift(p, -1.0));
  const Mat2 late = covariance_at_time(p, -1.0, 50.0 / std::abs(e.lambda1));
  const auto st = stationary_covariance(p, -1.0);
  EXPECT_LT((late - st.matrix()).frobenius(), 1e-10 * st.matrix().frobenius());

  std::mt19937_64 rng(23);
  for (int i = 0; i < 10; ++i) {
    const auto q = random_stable(rng);
    const double t = 0.3 + i * 0.2;
    const Mat2 a = build_drift(q, -1.0).matrix();
    const Mat2 d{q.sigma0 * q.sigma0, 0.0, 0.0, q.sigma * q.sigma};
    const Mat2 closed = covariance_at_time(q, -1.0, t);
    const Mat2 quad = covariance_integral_quadrature(a, d, t);
    EXPECT_LT((closed - quad).frobenius(), 1e-9 * quad.frobenius());
  }
}

TEST(Expm, MatchesEigenExponential) {
  const auto p = fluctuation_base();
  const auto a = build_drift(p, -1.0).matrix();
  const auto e = eigen_decompose(build_drift(p, -1.0));
  const double t = 0.7;
  const Mat2 lam{std::exp(t * e.lambda1), 0.0, 0.0, std::exp(t * e.lambda2)};
  EXPECT_LT((expm(t * a) - e.q * lam * e.q_inv).frobenius(), 1e-12);
}

TEST(TerminalCovariance, LinearSystem) {
  const ModelParams p{0.0, 0.0, 0.5, 1.0, 1.0, 1.0, 100};
  EXPECT_EQ(terminal_covariance_h0_zero(p, 0.0).exact.frobenius(), 0.0);

  const auto big = terminal_covariance_h0_zero(p, 1000.0);
  EXPECT_NEAR(big.exact.m12 / big.exact.m11, 1.0, 1e-2);
  EXPECT_NEAR(big.exact.m22 / big.exact.m11, 1.0, 1e-2);
  EXPECT_NEAR(big.exact.m11 / big.large_t.m11, 1.0, 1e-2);

  // Cross-check against the generic covariance integral with A0.
  for (double t : {0.5, 2.0, 7.0}) {
    const Mat2 a{-p.theta0, p.theta0, p.theta, -p.theta};
    const Mat2 d{p.sigma0 * p.sigma0, 0.0, 0.0, p.sigma * p.sigma};
    const Mat2 ref = (1.0 / static_cast<double>(p.n_agents)) * covariance_integral_quadrature(a, d, t);
    EXPECT_LT((terminal_covariance_h0_zero(p, t).exact - ref).frobenius(), 1e-10 * ref.frobenius());
  }

  ModelParams q = p;
  q.h0 = 0.5;
  EXPECT_THROW(terminal_covariance_h0_zero(q, 1.0), InvalidArgument);
}

TEST(TerminalCovariance, EqualNoisesAndCouplings) {
  // sigma0 = sigma and theta0 = theta: top-left grows as 2 T sigma^2 / 4 / N.
  const ModelParams p{0.0, 0.0, 0.8, 0.8, 1.5, 1.5, 50};
  const double T = 400.0;
  const auto c = terminal_covariance_h0_zero(p, T);
  EXPECT_NEAR(c.exact.m11 / (2.0 * T * 0.64 / 4.0 / 50.0), 1.0, 1e-2);
}

TEST(FluctuationCsv, Format) {
  std::ostringstream os;
  write_fluctuation_csv(os, {{"h0", 0.5, stationary_covariance(fluctuation_base(), -1.0)}});
  const std::string s = os.str();
  EXPECT_EQ(s.substr(0, s.find('\n')), "param_swept,value,var_z0,var_zbar,cov,limit_var_z0,limit_var_zbar,limit_cov");
  EXPECT_EQ(s.substr(s.find('\n') + 1, 7), "h0,0.5,");
}
