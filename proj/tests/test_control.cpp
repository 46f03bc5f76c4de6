#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "sysrisk/control.hpp"
#include "sysrisk/sde.hpp"

using namespace sysrisk;

namespace {

ModelParams coupled(double theta0, double theta) { return {0.0, 0.0, 0.0, 1.0, theta0, theta, 100}; }

ModelParams control_base() { return {0.7, 0.0, 0.5, 5.0, 1.0, 1.0, 100}; }

double residual_norm(const std::array<double, 4>& r) {
  double m = 0.0;
  for (double v : r) m = std::max(m, std::abs(v));
  return m;
}

} // namespace

TEST(Riccati, TerminalValuesAndNegligibleControl) {
  const auto traj = integrate_riccati(coupled(1.0, 1.0), {1e-8, 0.0, 100.0}, 0.01);
  for (const char* name : {"a", "b", "d", "e"}) {
    EXPECT_EQ(traj.grid.series(name).back(), 0.0) << name;
    for (double v : traj.grid.series(name)) ASSERT_LT(std::abs(v), 1e-7) << name;
  }
}

TEST(Riccati, DecoupledScalarEquation) {
  const ModelParams p = coupled(0.0, 1.0);
  const ControlParams c{1.0, 0.0, 100.0};
  const double dt = 1e-3;
  const auto traj = integrate_riccati(p, c, dt);
  const auto& d = traj.grid.series("d");
  EXPECT_NEAR(d.front(), std::sqrt(2.0) - 1.0, 1e-8);

  // Five-point stencil derivative against d' = 2 theta d + theta_c d^2 - theta_c.
  double dmax = 0.0, err = 0.0;
  for (std::size_t i = 2; i + 2 < d.size(); ++i) {
    const double fd = (-d[i + 2] + 8.0 * d[i + 1] - 8.0 * d[i - 1] + d[i - 2]) / (12.0 * dt);
    const double rhs = 2.0 * p.theta * d[i] + c.theta_c * d[i] * d[i] - c.theta_c;
    dmax = std::max(dmax, std::abs(rhs));
    err = std::max(err, std::abs(fd - rhs));
  }
  EXPECT_LT(err, 1e-8 * dmax);
}

TEST(Riccati, HorizonMustBeAMultipleOfDt) {
  EXPECT_THROW(integrate_riccati(coupled(1.0, 1.0), {1.0, 0.0, 1.0}, 0.3), InvalidArgument);
  EXPECT_THROW(integrate_riccati(coupled(1.0, 1.0), {1.0, 0.0, 1.0}, 0.0), InvalidArgument);
}

TEST(Riccati, BlowUpIsReported) {
  try {
    integrate_riccati(coupled(1.0, 1.0), {1e3, 0.0, 1000.0}, 10.0);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_GT(e.step(), 0u);
    EXPECT_LE(e.step(), 100u);
  }
}

TEST(AlgebraicRiccati, ClosedFormForD) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.1, 5.0);
  for (int i = 0; i < 50; ++i) {
    const ModelParams p = coupled(u(rng), u(rng));
    ControlParams c{u(rng), u(rng), 0.0};
    c.horizon = 100.0 / c.theta_c;
    const double want = d_inf_closed_form(p.theta, c.theta_c);
    const double dt = c.horizon / std::ceil(c.horizon / 1e-3);
    EXPECT_NEAR(integrate_riccati(p, c, dt).steady.value.d, want, 1e-7);
    const auto s = solve_algebraic_riccati(p, c);
    ASSERT_TRUE(s.exact);
    EXPECT_NEAR(s.value.d, want, 1e-7);
    const double scale = std::max({1.0, std::abs(s.value.a), std::abs(s.value.b), std::abs(s.value.e)});
    EXPECT_LT(residual_norm(algebraic_riccati_residual(p, c, s.value)), 1e-12 * scale);
  }
}

TEST(AlgebraicRiccati, MatchesLongHorizonIntegration) {
  const ModelParams p = control_base();
  const ControlParams c{5.0, 1.4, 100.0};
  const auto s = solve_algebraic_riccati(p, c);
  ASSERT_TRUE(s.exact);
  const auto traj = integrate_riccati(p, c, 1e-3);
  ASSERT_TRUE(traj.steady.converged);
  EXPECT_NEAR(traj.steady.value.a, s.value.a, 1e-8);
  EXPECT_NEAR(traj.steady.value.b, s.value.b, 1e-8);
  EXPECT_NEAR(traj.steady.value.d, s.value.d, 1e-8);
  EXPECT_NEAR(traj.steady.value.e, s.value.e, 1e-8);
}

TEST(Regimes, Decoupled) {
  const ModelParams p = coupled(0.0, 1.0);
  const ControlParams c{1.0, 0.0, 100.0};
  const auto s = solve_algebraic_riccati(p, c);
  ASSERT_TRUE(s.exact);
  EXPECT_NEAR(s.value.b, -s.value.d, 1e-10);
  EXPECT_NEAR(s.value.e, 0.0, 1e-10);
  const auto r = regime_expansion(p, c, RegimeCase::decoupled);
  EXPECT_NEAR(r.b_inf_approx, s.value.b, 1e-10);
  EXPECT_EQ(r.e_inf_approx, 0.0);
}

TEST(Regimes, ThreeFourFiveCoupling) {
  const ModelParams p = coupled(0.0, 3.0);
  const ControlParams c{4.0, 0.0, 100.0};
  EXPECT_DOUBLE_EQ(d_inf_closed_form(3.0, 4.0), 0.5);
  const auto r = regime_expansion(p, c, RegimeCase::decoupled);
  EXPECT_DOUBLE_EQ(r.effective_coupling, 5.0);
  const auto s = solve_algebraic_riccati(p, c);
  EXPECT_NEAR(p.theta + c.theta_c * (s.value.d + s.value.e), 5.0, 1e-12);
}

TEST(Regimes, SmallCentralCouplingIsSecondOrderAccurate) {
  const ControlParams c{2.0, 0.0, 100.0};
  double prev_b = 0.0, prev_e = 0.0;
  for (int k = 0; k < 4; ++k) {
    const double theta0 = 0.04 / std::pow(2.0, k);
    const ModelParams p = coupled(theta0, 1.5);
    const auto s = solve_algebraic_riccati(p, c);
    ASSERT_TRUE(s.exact);
    const auto r = regime_expansion(p, c, RegimeCase::small_theta0);
    const double eb = std::abs(s.value.b - r.b_inf_approx), ee = std::abs(s.value.e - r.e_inf_approx);
    if (k > 0) {
      EXPECT_NEAR(prev_b / eb, 4.0, 0.3);
      EXPECT_NEAR(prev_e / ee, 4.0, 0.3);
    }
    prev_b = eb;
    prev_e = ee;
  }
}

TEST(Regimes, SmallStiffnessIsSecondOrderAccurate) {
  double prev = 0.0;
  for (int k = 0; k < 4; ++k) {
    const double scale = 0.04 / std::pow(2.0, k);
    const ModelParams p = coupled(scale, 1.5);
    const ControlParams c{2.0, 2.0 * scale, 100.0};
    const auto s = solve_algebraic_riccati(p, c);
    ASSERT_TRUE(s.exact);
    const auto r = regime_expansion(p, c, RegimeCase::small_theta0_H0);
    const double err = std::abs(s.value.b - r.b_inf_approx) + std::abs(s.value.e - r.e_inf_approx);
    if (k > 0) EXPECT_NEAR(prev / err, 4.0, 0.3);
    prev = err;
  }
}

TEST(Regimes, ThirdCaseReducesToFirst) {
  const ModelParams p = coupled(0.0, 1.5);
  const ControlParams c{2.0, 0.0, 100.0};
  const auto a = regime_expansion(p, c, RegimeCase::decoupled);
  const auto b = regime_expansion(p, c, RegimeCase::small_theta0_H0);
  EXPECT_EQ(a.b_inf_approx, b.b_inf_approx);
  EXPECT_EQ(a.e_inf_approx, b.e_inf_approx);
  EXPECT_EQ(a.effective_coupling, b.effective_coupling);
  EXPECT_EQ(b.direct_control, 0.0);
}

TEST(Feedback, Construction) {
  const ModelParams p = coupled(0.0, 3.0);
  const ControlParams c{4.0, 0.0, 100.0};
  const auto law = build_feedback(solve_algebraic_riccati(p, c), c.theta_c);
  // b = -d and e = 0: the control pulls xbar toward x0 at rate theta_c d = 2.
  EXPECT_NEAR(law.mean_drift(0.0, 1.0), -2.0, 1e-12);
  EXPECT_NEAR(law.mean_drift(0.3, 0.3), 0.0, 1e-12);
  RiccatiSteady bad;
  EXPECT_THROW(build_feedback(bad, 1.0), InvalidArgument);
  bad.converged = true;
  EXPECT_THROW(build_feedback(bad, 0.0), InvalidArgument);
}

TEST(Feedback, StabilizesTheControlConfig) {
  const ModelParams p = control_base();
  const ControlParams c{5.0, 1.4, 100.0};
  const auto law = build_feedback(solve_algebraic_riccati(p, c), c.theta_c);
  std::size_t controlled = 0, uncontrolled = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const SimConfig cfg{1000.0, 0.01, seed, 0.1};
    controlled += count_transitions(simulate_controlled(p, cfg, law).series("xbar"));
    uncontrolled += count_transitions(simulate_reduced(p, cfg).series("xbar"));
  }
  EXPECT_EQ(controlled, 0u);
  EXPECT_GT(uncontrolled, 0u);
}

TEST(Csv, SteadyRow) {
  std::ostringstream os;
  write_steady_csv(os, {{1.0, -0.5, 0.5, 0.0}, true, true});
  EXPECT_EQ(os.str(), "a_inf,b_inf,d_inf,e_inf,converged,exact\n1,-0.5,0.5,0,1,1\n");
}
