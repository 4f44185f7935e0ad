#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "sgn/hamiltonian_net.hpp"
#include "sgn/integrator.hpp"

using namespace sgn;

namespace {

SeparableHamiltonianNet random_net(std::size_t d, std::uint64_t seed, std::size_t width = 16) {
  Rng rng(seed);
  return SeparableHamiltonianNet::init(d, width, 2, Activation::Tanh, rng);
}

PhaseState random_state(std::size_t d, Rng& rng) {
  return PhaseState(rng.standard_normal(d), rng.standard_normal(d));
}

}  // namespace

TEST(Leapfrog, HarmonicHandSubstitution) {
  // p½ = −0.05, q₁ = 1 + 0.1·(−0.05), p₁ = −0.05 − 0.05·0.995
  const auto z = leapfrog_step(AnalyticHamiltonian::harmonic(1.0), PhaseState({1.0}, {0.0}), 0.1);
  EXPECT_NEAR(z.q()[0], 0.995, 1e-15);
  EXPECT_NEAR(z.p()[0], -0.09975, 1e-15);
}

TEST(Leapfrog, ConstantAndFreeParticle) {
  const PhaseState z0({0.3, -1.2}, {2.0, 0.5});
  EXPECT_EQ(leapfrog_step(AnalyticHamiltonian::constant(4.0), z0, 0.37), z0);
  const auto z = leapfrog_step(AnalyticHamiltonian::free_particle(), PhaseState({0.0}, {1.0}), 0.5);
  EXPECT_EQ(z.q()[0], 0.5);
  EXPECT_EQ(z.p()[0], 1.0);
}

TEST(Leapfrog, DivergenceCarriesStepIndex) {
  const auto h = AnalyticHamiltonian::harmonic(1.0);
  PhaseState z({1.0}, {0.0});
  try {
    for (long i = 0; i < 100000; ++i) z = leapfrog_step(h, z, 2.5, i);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_GT(e.step(), 0);
  }
}

TEST(Flow, HarmonicFullRotation) {
  const auto r = flow(AnalyticHamiltonian::harmonic(1.0), PhaseState({1.0}, {0.0}),
                      FlowConfig::fixed(2.0 * std::numbers::pi, 0.01));
  EXPECT_LT(max_abs_diff(r.state, PhaseState({1.0}, {0.0})), 1e-3);
  EXPECT_EQ(r.trace.accepted_dts.size(), 628u);
  EXPECT_NEAR(r.trace.total(), 2.0 * std::numbers::pi, 1e-12 * 2.0 * std::numbers::pi);
}

TEST(Flow, ConstantAndFreeParticle) {
  const PhaseState z0({0.7}, {-0.2});
  const auto c = flow(AnalyticHamiltonian::constant(1.0), z0, FlowConfig::fixed(3.0, 0.3));
  EXPECT_EQ(c.state, z0);
  EXPECT_NEAR(c.trace.total(), 3.0, 3e-12);
  for (double dt : {0.1, 0.25, 0.7, 3.0}) {
    const auto f = flow(AnalyticHamiltonian::free_particle(), PhaseState({0.0}, {1.0}), FlowConfig::fixed(3.0, dt));
    EXPECT_NEAR(f.state.q()[0], 3.0, 1e-12);
    EXPECT_NEAR(f.state.p()[0], 1.0, 1e-12);
  }
}

TEST(Flow, ConfigGuards) {
  FlowConfig cfg = FlowConfig::fixed(1.0, 0.5);
  cfg.stability_bound = 4.0;  // 2/√4 = 1
  EXPECT_NO_THROW(cfg.validate());
  cfg.initial_dt = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.stability_bound = 0.0;  // zero curvature accepts any step
  EXPECT_NO_THROW(cfg.validate());
  FlowConfig bad = FlowConfig::fixed(1.0, 0.01);
  bad.max_steps = 50;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(FlowConfig::fixed(-1.0, 0.1).validate(), ConfigError);
}

TEST(Flow, FixedModeRescalesStep) {
  const auto r = flow(AnalyticHamiltonian::harmonic(1.0), PhaseState({1.0}, {0.0}), FlowConfig::fixed(1.0, 0.3));
  ASSERT_EQ(r.trace.accepted_dts.size(), 3u);
  EXPECT_DOUBLE_EQ(r.trace.accepted_dts[0], 1.0 / 3.0);
}

TEST(InverseFlow, HarmonicRoundTrip) {
  const auto h = AnalyticHamiltonian::harmonic(1.0);
  const PhaseState z0({1.0}, {0.0});
  const auto r = flow(h, z0, FlowConfig::fixed(10.0, 0.05));
  EXPECT_LT(max_abs_diff(inverse_flow(h, r.state, r.trace.accepted_dts), z0), 1e-9);
  EXPECT_EQ(inverse_flow(h, r.state, {}), r.state);
}

TEST(InverseFlow, SingleNeuralStep) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(1000 + seed);
    const auto h = random_net(2, seed);
    const auto z0 = random_state(2, rng);
    const auto z1 = leapfrog_step(h, z0, 0.1);
    EXPECT_LT(max_abs_diff(leapfrog_step(h, z1, -0.1), z0), 1e-10);
  }
}

TEST(InverseFlow, RandomRoundTrips) {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 1 + trial % 4;
    const auto h = random_net(d, 500 + trial);
    const auto z0 = random_state(d, rng);
    const double t = 1.0 + 9.0 * rng.uniform();
    FlowConfig cfg = trial % 2 ? FlowConfig::fixed(t, 0.05) : FlowConfig::adaptive(t, 0.05, 1e-6);
    const auto r = flow(h, z0, cfg);
    EXPECT_LT(max_abs_diff(inverse_flow(h, r.state, r.trace.accepted_dts), z0), 1e-9);
  }
}

TEST(Symplecticity, NeuralFlowJacobian) {
  Rng rng(5);
  for (std::size_t d : {1u, 2u, 4u}) {
    for (int trial = 0; trial < 3; ++trial) {
      const auto h = random_net(d, 40 + 10 * d + trial);
      const auto z0 = random_state(d, rng);
      const auto cfg = FlowConfig::fixed(1.0, 0.01);
      auto map = [&](const Vector& z) { return flow(h, PhaseState::from_flat(z), cfg).state.flat(); };
      const auto jac = oracle::fd_jacobian(map, z0.flat(), 1e-5);
      const std::size_t n = 2 * d;
      Matrix dm(n, n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) dm(i, j) = jac[i][j];
      const Matrix jj = canonical_j(d);
      const Matrix form = dm.transpose() * jj * dm;
      double worst = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) worst = std::max(worst, std::abs(form(i, j) - jj(i, j)));
      EXPECT_LT(worst, 1e-5);
      EXPECT_LT(std::abs(oracle::cofactor_det(jac) - 1.0), 1e-5);
      EXPECT_LT(std::abs(lu_det(dm) - 1.0), 1e-5);
    }
  }
}

TEST(LocalError, Examples) {
  const PhaseState z({0.4, -0.3}, {1.0, 2.0});
  EXPECT_EQ(local_error_estimate(AnalyticHamiltonian::constant(1.0), z, 0.1), 0.0);
  EXPECT_LT(local_error_estimate(AnalyticHamiltonian::free_particle(), z, 0.1), 1e-15);
  const auto h = AnalyticHamiltonian::harmonic(1.0);
  const PhaseState z1({1.0}, {0.0});
  const double e1 = local_error_estimate(h, z1, 0.1);
  const double e2 = local_error_estimate(h, z1, 0.05);
  const double e3 = local_error_estimate(h, z1, 0.025);
  EXPECT_GT(e1 / e2, 6.0);
  EXPECT_LT(e1 / e2, 10.0);
  EXPECT_GT(e2 / e3, 6.0);
  EXPECT_LT(e2 / e3, 10.0);
  EXPECT_THROW(local_error_estimate(h, z1, 0.0), std::invalid_argument);
  EXPECT_TRUE(std::isinf(local_error_estimate(h, PhaseState({1e200}, {1e200}), 1e200)));
}

TEST(AdaptStep, FormulaValues) {
  const double tol = 1e-6;
  EXPECT_DOUBLE_EQ(adapt_step(0.1, 8.0 * tol, tol, std::nullopt), 0.05);
  EXPECT_DOUBLE_EQ(adapt_step(0.1, 0.0, tol, std::nullopt), 0.15);
  EXPECT_DOUBLE_EQ(adapt_step(0.1, 1e-300, tol, std::nullopt), 0.15);
  EXPECT_DOUBLE_EQ(adapt_step(0.1, tol, tol, std::nullopt), 0.09);
  EXPECT_DOUBLE_EQ(adapt_step(0.1, std::numeric_limits<double>::infinity(), tol, std::nullopt), 0.05);
}

TEST(AdaptStep, StabilityClamp) {
  bool clamped = false;
  EXPECT_DOUBLE_EQ(adapt_step(1.5, 0.0, 1e-6, 1.0, &clamped), 1.9);
  EXPECT_TRUE(clamped);
  EXPECT_DOUBLE_EQ(adapt_step(1.0, 0.0, 1e-6, 1.0, &clamped), 1.5);
  EXPECT_FALSE(clamped);
  // 0.5·0.9 = 0.45 exceeds 2/√L_H = 0.4, so the result becomes 1.9/√L_H = 0.38
  EXPECT_DOUBLE_EQ(adapt_step(0.5, 1e-6, 1e-6, 25.0, &clamped), 0.38);
  EXPECT_TRUE(clamped);
}

TEST(AdaptiveFlow, LandsOnHorizonAndCountsClamps) {
  const auto h = AnalyticHamiltonian::pendulum();
  FlowConfig cfg = FlowConfig::adaptive(7.3, 0.01, 1e-7);
  const auto r = flow(h, PhaseState({1.0}, {0.5}), cfg);
  EXPECT_NEAR(r.trace.total(), 7.3, 1e-12 * 7.3);
  EXPECT_EQ(r.trace.error_estimates.size(), r.trace.accepted_dts.size());
  for (double e : r.trace.error_estimates) EXPECT_LE(e, 1e-7);

  // A loose tolerance on a tightly bounded problem forces clamping.
  FlowConfig loose = FlowConfig::adaptive(20.0, 0.5, 100.0);
  loose.stability_bound = 1.0;
  const auto c = flow(AnalyticHamiltonian::harmonic(1.0), PhaseState({1.0}, {0.0}), loose);
  EXPECT_GT(c.trace.clamp_events, 0u);
  for (double dt : c.trace.accepted_dts) EXPECT_LT(dt, 2.0);
}

TEST(AdaptiveFlow, ErrorCheckEveryK) {
  FlowConfig cfg = FlowConfig::adaptive(2.0, 0.05, 1e-6);
  cfg.error_check_every = 4;
  const auto r = flow(AnalyticHamiltonian::harmonic(1.0), PhaseState({1.0}, {0.0}), cfg);
  EXPECT_LT(r.trace.error_estimates.size(), r.trace.accepted_dts.size());
  EXPECT_NEAR(r.trace.total(), 2.0, 2e-12);
}

TEST(EnergyDrift, QuadraticScaling) {
  const auto h = AnalyticHamiltonian::harmonic(1.0);
  auto drift = [&](double dt) {
    PhaseState z({1.0}, {0.0});
    const double e0 = energy(h, z);
    double m = 0.0;
    for (int i = 0; i < 10000; ++i) {
      z = leapfrog_step(h, z, dt);
      m = std::max(m, std::abs(energy(h, z) - e0));
    }
    return m;
  };
  const double ratio = drift(0.1) / drift(0.05);
  EXPECT_GE(ratio, 3.5);
  EXPECT_LE(ratio, 4.5);
}

TEST(ConvergenceOrder, HarmonicSlopeTwo) {
  const auto h = AnalyticHamiltonian::harmonic(1.0);
  const PhaseState z0({1.0}, {0.0});
  const auto exact = h.exact_flow(z0, 1.0).value();
  std::vector<double> dts{0.1, 0.05, 0.025, 0.0125}, errs;
  for (double dt : dts) errs.push_back(distance(flow(h, z0, FlowConfig::fixed(1.0, dt)).state, exact));
  const double slope = oracle::loglog_slope(dts, errs);
  EXPECT_GE(slope, 1.9);
  EXPECT_LE(slope, 2.1);
}

TEST(StabilityBoundary, HarmonicThresholdTwo) {
  const auto h = AnalyticHamiltonian::harmonic(1.0);
  PhaseState z({1.0}, {0.0});
  double max_norm = 0.0;
  for (int i = 0; i < 100000; ++i) {
    z = leapfrog_step(h, z, 1.9);
    max_norm = std::max(max_norm, norm2(z.flat()));
  }
  EXPECT_LT(max_norm, 10.0);
  z = PhaseState({1.0}, {0.0});
  int blown = -1;
  for (int i = 0; i < 10000; ++i) {
    z = leapfrog_step(h, z, 2.1);
    if (norm2(z.flat()) > 1e6) {
      blown = i;
      break;
    }
  }
  EXPECT_GE(blown, 0);
}
