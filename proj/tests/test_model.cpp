#include <gtest/gtest.h>

#include <random>

#include "sysrisk/model.hpp"

using namespace sysrisk;

namespace {

const char* kFluctuation = "h0=0.5\nsigma0=0.1\ntheta0=0.1\nsigma=1.0\ntheta=10\nN=100\nT=1000\ndt=0.001\nseed=1\nh=0";
const char* kControl = "h0=0.7\nsigma0=0.5\ntheta0=1.0\nsigma=5.0\ntheta=1.0\nN=100\nT=1000\ndt=0.01\nh=0\nseed=1";

std::string expect_parse_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ParseError& e) {
    return e.key();
  }
  ADD_FAILURE() << "no parse error for:\n" << text;
  return {};
}

} // namespace

TEST(Config, FluctuationConfig) {
  const auto c = parse_config(kFluctuation);
  const ModelParams want{0.5, 0.0, 0.1, 1.0, 0.1, 10.0, 100};
  EXPECT_EQ(c.model, want);
  EXPECT_EQ(c.sim, (SimConfig{1000.0, 0.001, 1, 0.1}));
  EXPECT_FALSE(c.control.has_value());
  EXPECT_EQ(c.sim.steps(), 1000000u);
}

TEST(Config, ControlConfig) {
  const auto c = parse_config(kControl);
  EXPECT_EQ(c.model, (ModelParams{0.7, 0.0, 0.5, 5.0, 1.0, 1.0, 100}));
  EXPECT_EQ(c.sim.dt, 0.01);
  EXPECT_EQ(c.sim.seed, 1u);
}

TEST(Config, Errors) {
  const std::string base = "h0=1\nsigma0=0\ntheta0=1\ntheta=1\nN=10\nT=1\ndt=0.1\n";
  EXPECT_EQ(expect_parse_error(base + "sigma=0\n"), "sigma");
  EXPECT_EQ(expect_parse_error(base + "sigma=1\nbogus=3\n"), "bogus");
  EXPECT_EQ(expect_parse_error(base + "sigma=1\nsigma=2\n"), "sigma");
  EXPECT_EQ(expect_parse_error(base + "sigma=1\nh=-1\n"), "h");
  EXPECT_EQ(expect_parse_error(base + "sigma=1\nN=0\n"), "N");
  EXPECT_EQ(expect_parse_error(base + "sigma=1\nburn_in_fraction=1\n"), "burn_in_fraction");
  EXPECT_EQ(expect_parse_error(base + "sigma=abc\n"), "sigma");
  EXPECT_EQ(expect_parse_error(base + "sigma=1\nH0=1\n"), "H0");
  EXPECT_EQ(expect_parse_error(base + "sigma=1\ntheta_c=0\n"), "theta_c");
  EXPECT_EQ(expect_parse_error("h0=1\nsigma0=0\ntheta0=1\ntheta=1\nN=10\nT=1\nsigma=1\n"), "dt");
  EXPECT_EQ(expect_parse_error("h0=1\nsigma0=0\ntheta0=1\ntheta=1\nN=10\nT=1\nsigma=1\ndt=0.3\n"), "dt");
  EXPECT_EQ(expect_parse_error(base + "sigma 1\n"), "");
}

TEST(Config, CommentsAndDefaults) {
  const auto c = parse_config("# header\nh0 = 1 # inline\n\nsigma0=0\ntheta0=1\ntheta=2\nsigma=1\nN=5\nT=2\ndt=0.5\n");
  EXPECT_EQ(c.model.h0, 1.0);
  EXPECT_EQ(c.model.h, 0.0);
  EXPECT_EQ(c.sim.seed, 0u);
  EXPECT_EQ(c.sim.burn_in_fraction, 0.1);
}

TEST(Config, ControlBlock) {
  const auto c = parse_config(std::string(kControl) + "\ntheta_c=5\nH0=1.4\n");
  ASSERT_TRUE(c.control.has_value());
  EXPECT_EQ(c.control->theta_c, 5.0);
  EXPECT_EQ(c.control->h_cap0, 1.4);
  EXPECT_EQ(c.control->horizon, 100.0); // 100 / min(5, 1, 1)
  const auto d = parse_config(std::string(kFluctuation) + "\ntheta_c=0.5\n");
  EXPECT_EQ(d.control->h_cap0, 0.0);
  EXPECT_EQ(d.control->horizon, 200.0);
}

TEST(Config, RoundTripProperty) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int trial = 0; trial < 500; ++trial) {
    ExperimentConfig c;
    c.model = {u(rng), trial % 3 == 0 ? 0.0 : u(rng), u(rng), 0.01 + u(rng), u(rng), u(rng), 1 + rng() % 100000};
    const double dt = std::ldexp(1.0, -static_cast<int>(rng() % 12));
    c.sim = {dt * static_cast<double>(2 + rng() % 5000), dt, rng(), u(rng) / 10.5};
    if (trial % 2 == 0) c.control = ControlParams{0.01 + u(rng), u(rng), 1.0};
    // Round trip runs through the parser so derived fields take their defaults.
    const auto first = parse_config(serialize_config(c));
    const auto again = parse_config(serialize_config(first));
    EXPECT_EQ(first, again);
    EXPECT_EQ(first.model, c.model);
    EXPECT_EQ(first.sim, c.sim);
    EXPECT_EQ(config_hash(first), config_hash(again));
  }
}

TEST(Config, HashDependsOnContent) {
  auto a = parse_config(kFluctuation);
  auto b = a;
  b.sim.seed = 2;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_NE(config_hash(a), config_hash(a, "salt"));
}

TEST(ModelParams, Validation) {
  ModelParams p;
  EXPECT_NO_THROW(p.validate());
  p.sigma = 0.0;
  EXPECT_THROW(p.validate(), InvalidArgument);
  EXPECT_NO_THROW(p.validate(true));
  p.sigma = 1.0;
  p.theta = -1.0;
  EXPECT_THROW(p.validate(), InvalidArgument);
}

TEST(SimConfig, Validation) {
  EXPECT_THROW((SimConfig{1.0, 2.0, 0, 0.1}.validate()), InvalidArgument);
  EXPECT_THROW((SimConfig{1.0, 0.3, 0, 0.1}.validate()), InvalidArgument);
  EXPECT_NO_THROW((SimConfig{1000.0, 0.001, 0, 0.1}.validate()));
}

TEST(ControlParams, DefaultHorizon) {
  EXPECT_EQ(ControlParams::default_horizon(5.0, 2.0), 100.0);
  EXPECT_EQ(ControlParams::default_horizon(0.5, 2.0), 200.0);
  EXPECT_EQ(ControlParams::default_horizon(2.0, 0.25), 400.0);
  EXPECT_EQ(ControlParams::default_horizon(2.0, 0.0), 100.0);
}
