// Systemic risk of a 100-agent system over T = 10 as the central agent's own
// stability h0 grows: most probable transition path and log-probability.
#include <cstdio>
#include <vector>

#include "sysrisk/sysrisk.hpp"

int main() {
  sysrisk::ModelParams p;
  p.sigma0 = 0.5;
  p.sigma = 1.0;
  p.theta0 = 1.0;
  p.theta = 1.0;
  p.n_agents = 100;
  const double horizon = 10.0;

  std::vector<double> schedule;
  for (int i = 0; i <= 8; ++i) schedule.push_back(0.5 * i);
  const auto paths = sysrisk::continue_in_h0(p, horizon, schedule, 1001);

  std::printf("%6s %12s %14s %10s\n", "h0", "rate", "log P", "x0(T/2)");
  for (const auto& s : paths) {
    const auto est = sysrisk::transition_probability(s.rate_value, p.n_agents);
    const auto& x0 = s.grid.series("x0");
    std::printf("%6.2f %12.6f %14.4f %10.4f\n", s.h0, s.rate_value, est.log_probability, x0[x0.size() / 2]);
  }

  // Same question for a noiseless central agent: cheaper to hold, costlier to move.
  p.sigma0 = 0.0;
  const auto flat = sysrisk::closed_form_path_h0_zero(p, horizon, 1001);
  std::printf("noiseless central agent, h0 = 0: rate %.6f on the grid, %.6f exact\n", flat.rate_value,
              sysrisk::rate_infimum_h0_zero(p, horizon));
  return 0;
}
