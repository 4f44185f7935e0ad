#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "sgn/model.hpp"

using namespace sgn;

namespace {

/// Constant Hamiltonian (zero nets), zero encoder, decoder with zero weights whose
/// biases set the output mean to `mean` and log-variance to 0.
SgnModel closed_form_model(Vector mean = {0.0, 0.0}) {
  SgnModel m;
  m.data_dim = 2;
  m.latent_half_dim = 1;
  m.encoder = MlpParams({2, 8, 4}, Activation::Tanh);
  m.hamiltonian = SeparableHamiltonianNet(MlpParams({1, 8, 1}, Activation::Tanh), MlpParams({1, 8, 1}, Activation::Tanh));
  MlpParams dec({2, 8, 4}, Activation::Tanh);
  dec.biases.back() = {mean[0], mean[1], 0.0, 0.0};
  m.decoder = GaussianDecoder{dec};
  m.flow_cfg = FlowConfig::fixed(1.0, 0.1);
  m.validate();
  return m;
}

SgnModel exact_constant_model(Vector scale) {
  SgnModel m = closed_form_model();
  m.decoder = ExactAffine{std::move(scale), Vector(2, 0.0)};
  m.validate();
  return m;
}

SgnModel random_model(std::uint64_t seed, DecoderKind kind = DecoderKind::Gaussian) {
  Rng rng(seed);
  ModelSpec spec;
  spec.decoder = kind;
  spec.encoder_hidden = {16};
  spec.decoder_hidden = {16};
  spec.spectral_cap = 1.5;
  return init_model(spec, rng);
}

}  // namespace

TEST(Encode, Examples) {
  const auto m = closed_form_model();
  const auto g = encode(m, Vector{1.5, -2.0});
  EXPECT_EQ(g.mean, Vector(2, 0.0));
  EXPECT_EQ(g.log_var, Vector(2, 0.0));

  const auto r = random_model(1);
  const Vector x{0.3, 0.9};
  const auto a = encode(r, x), b = encode(r, x);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.log_var, b.log_var);
  EXPECT_EQ(a.mean.size() + a.log_var.size(), 4 * r.latent_half_dim);
  EXPECT_THROW(encode(r, Vector{1.0}), DimensionError);
}

TEST(GaussianParamsTest, LogVarClamped) {
  GaussianParams g({0.0, 0.0}, {-50.0, 50.0});
  EXPECT_EQ(g.log_var, (Vector{-10.0, 10.0}));
}

TEST(Reparam, Examples) {
  Rng rng(3);
  GaussianParams tight({1.0, -1.0}, {-1e9, -1e9});
  for (int i = 0; i < 100; ++i) {
    const Vector eps = rng.standard_normal(2);
    const auto z = reparam_with_noise(tight, eps).flat();
    for (int j = 0; j < 2; ++j) EXPECT_LE(std::abs(z[j] - tight.mean[j]), std::exp(-5.0) * std::abs(eps[j]) + 1e-15);
  }

  GaussianParams unit({0.0, 0.0, 0.0, 0.0}, {0.0, 0.0, 0.0, 0.0});
  const Vector eps{1.0, 2.0, 3.0, 4.0};
  const auto z = reparam_with_noise(unit, eps);
  EXPECT_EQ(z.q(), (Vector{1.0, 2.0}));
  EXPECT_EQ(z.p(), (Vector{3.0, 4.0}));

  GaussianParams shifted({1.0, 2.0}, {0.0, 0.0});
  double s0 = 0.0, s1 = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto s = reparam_sample(shifted, rng);
    s0 += s.q()[0];
    s1 += s.p()[0];
  }
  EXPECT_NEAR(s0 / n, 1.0, 0.02);
  EXPECT_NEAR(s1 / n, 2.0, 0.02);
}

TEST(GaussianKl, Examples) {
  EXPECT_EQ(gaussian_kl(GaussianParams({0.0, 0.0}, {0.0, 0.0})), 0.0);
  EXPECT_DOUBLE_EQ(gaussian_kl(GaussianParams({1.0, 0.0}, {0.0, 0.0})), 0.5);

  // Monte-Carlo oracle E_q[log q(z) − log p(z)] with 10⁶ draws.
  const GaussianParams q({1.0, 0.0}, {0.0, 0.0});
  Rng rng(4);
  double acc = 0.0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) {
    const Vector z{1.0 + rng.normal(), rng.normal()};
    acc += gaussian_log_density(z, q) - standard_normal_log_density(z);
  }
  EXPECT_NEAR(acc / n, gaussian_kl(q), 1e-2);

  for (int i = 0; i < 200; ++i) {
    GaussianParams g(rng.standard_normal(3), Vector{3 * rng.normal(), 3 * rng.normal(), 3 * rng.normal()});
    EXPECT_GE(gaussian_kl(g), 0.0);
  }
}

TEST(DecodeLogProb, Examples) {
  const Vector x{0.7, -0.4};
  const auto m = closed_form_model(x);
  const PhaseState zT({0.2}, {0.1});
  EXPECT_NEAR(decode_log_prob(m, zT, x), -std::log(2.0 * std::numbers::pi), 1e-12);
  EXPECT_NEAR(decode_log_prob(m, zT, Vector{1.7, -0.4}), -std::log(2.0 * std::numbers::pi) - 0.5, 1e-12);
  EXPECT_THROW(decode_log_prob(m, zT, Vector{1.0}), DimensionError);
  EXPECT_THROW(decode_log_prob(exact_constant_model({1.0, 1.0}), zT, x), ConfigError);
}

TEST(Elbo, ClosedFormModel) {
  const auto m = closed_form_model();
  Rng rng(5);
  const auto e = elbo(m, Vector{0.0, 0.0}, rng, 4);
  EXPECT_NEAR(e.elbo, -1.8378770664093453, 1e-12);
  EXPECT_EQ(e.kl, 0.0);
  EXPECT_EQ(e.elbo, e.reconstruction - e.kl);
  EXPECT_THROW(elbo(m, Vector{0.0, 0.0}, rng, 0), std::invalid_argument);
}

TEST(Elbo, KlFieldIsDefinitional) {
  const auto m = random_model(6);
  Rng rng(6);
  const Vector x{0.5, -1.0};
  const auto e = elbo(m, x, rng, 3);
  EXPECT_EQ(e.kl, gaussian_kl(encode(m, x)));
  EXPECT_EQ(e.elbo, e.reconstruction - e.kl);
  EXPECT_GE(e.kl, 0.0);
}

TEST(Elbo, KlInvariantUnderFlowConfig) {
  auto m = random_model(7);
  const Vector x{1.0, 0.2};
  Rng r1(1), r2(1);
  const auto a = elbo(m, x, r1, 1);
  m.flow_cfg = FlowConfig::adaptive(2.5, 0.05, 1e-5);
  const auto b = elbo(m, x, r2, 1);
  EXPECT_EQ(a.kl, b.kl);
  EXPECT_NE(a.reconstruction, b.reconstruction);
}

TEST(Elbo, VarianceShrinksWithSamples) {
  const auto m = random_model(8);
  const Vector x{0.8, 0.1};
  std::vector<double> variances;
  for (std::size_t mc : {1u, 4u, 16u, 64u}) {
    std::vector<double> vals;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      Rng rng(seed);
      vals.push_back(elbo(m, x, rng, mc).elbo);
    }
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= vals.size();
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    variances.push_back(var / (vals.size() - 1));
  }
  for (std::size_t i = 1; i < variances.size(); ++i) EXPECT_LT(variances[i], variances[i - 1]);
}

TEST(Elbo, ExactAffineIsExactLikelihood) {
  const auto m = random_model(9, DecoderKind::ExactAffine);
  Rng rng(1);
  const Vector x{0.3, -0.6};
  const auto e = elbo(m, x, rng, 1);
  EXPECT_EQ(e.elbo, exact_log_likelihood(m, x));
  EXPECT_EQ(e.kl, 0.0);
  EXPECT_EQ(e.logdet_correction, 0.0);
}

TEST(Generate, Examples) {
  const auto m = exact_constant_model({1.0, 1.0});
  Rng a(10), b(10);
  const auto xs = generate(m, a, 5);
  for (const auto& x : xs) EXPECT_EQ(x, b.standard_normal(2));

  const auto r = random_model(11);
  Rng c(3), d(3);
  EXPECT_EQ(generate(r, c, 20), generate(r, d, 20));
  EXPECT_TRUE(generate(r, c, 0).empty());
}

TEST(ExactLikelihood, Examples) {
  EXPECT_NEAR(exact_log_likelihood(exact_constant_model({1.0, 1.0}), Vector{0.0, 0.0}),
              -std::log(2.0 * std::numbers::pi), 1e-12);
  // change of variables for x = 2z: log N(0) − 2 log 2
  EXPECT_NEAR(exact_log_likelihood(exact_constant_model({2.0, 2.0}), Vector{0.0, 0.0}),
              -std::log(2.0 * std::numbers::pi) - 2.0 * std::log(2.0), 1e-12);
  EXPECT_THROW(exact_log_likelihood(closed_form_model(), Vector{0.0, 0.0}), ConfigError);
}

TEST(ExactLikelihood, ModelGuards) {
  auto m = exact_constant_model({1.0, 1.0});
  std::get<ExactAffine>(m.decoder).scale[1] = 0.0;
  EXPECT_THROW(m.validate(), ConfigError);
  auto a = exact_constant_model({1.0, 1.0});
  a.flow_cfg = FlowConfig::adaptive(1.0, 0.1, 1e-6);
  EXPECT_THROW(a.validate(), ConfigError);
}

TEST(ExactLikelihood, GridNormalization) {
  auto m = random_model(12, DecoderKind::ExactAffine);
  std::get<ExactAffine>(m.decoder) = ExactAffine{{0.8, 1.3}, {0.2, -0.1}};
  const double h = 0.05;
  double mass = 0.0;
  for (int i = 0; i <= 240; ++i)
    for (int j = 0; j <= 240; ++j) {
      const Vector x{-6.0 + i * h, -6.0 + j * h};
      mass += std::exp(exact_log_likelihood(m, x)) * h * h;
    }
  EXPECT_NEAR(mass, 1.0, 0.02);
}

TEST(ExactLikelihood, PushforwardMatchesFiniteDifferenceJacobian) {
  const auto m = random_model(13, DecoderKind::ExactAffine);
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const Vector z = rng.standard_normal(2);
    auto map = [&](const Vector& v) { return flow(m.hamiltonian, PhaseState::from_flat(v), m.flow_cfg).state.flat(); };
    const auto jac = oracle::fd_jacobian(map, z, 1e-5);
    const double logdet = std::log(std::abs(oracle::cofactor_det(jac)));
    // Density of Φ_T(z) by change of variables equals the prior density at z.
    const double pushed = standard_normal_log_density(z) - logdet;
    const double via_model = exact_log_likelihood(m, map(z));
    EXPECT_NEAR(pushed, via_model, 1e-4);
    EXPECT_NEAR(pushed, standard_normal_log_density(z), 1e-4);
  }
}

TEST(IwLikelihood, SingleSampleIdentity) {
  const auto m = random_model(14);
  const Vector x{0.4, 0.4};
  Rng a(77), b(77);
  const double iw = iw_log_likelihood(m, x, a, 1);
  // Hand-assembled single-sample bound with the same draw.
  const auto q = encode(m, x);
  const PhaseState z0 = reparam_sample(q, b);
  const auto zT = flow(m.hamiltonian, z0, m.flow_cfg).state;
  const double single = decode_log_prob(m, zT, x) + standard_normal_log_density(z0.flat()) - gaussian_log_density(z0.flat(), q);
  EXPECT_NEAR(iw, single, 1e-12);
}

TEST(IwLikelihood, ClosedFormAnyS) {
  const auto m = closed_form_model();
  for (std::size_t s : {1u, 8u, 64u}) {
    Rng rng(s);
    EXPECT_NEAR(iw_log_likelihood(m, Vector{0.0, 0.0}, rng, s), -1.8378770664093453, 1e-6);
  }
  EXPECT_THROW(iw_log_likelihood(exact_constant_model({1.0, 1.0}), Vector{0.0, 0.0}, *std::make_unique<Rng>(1), 4),
               ConfigError);
}

TEST(IwLikelihood, DominatesElbo) {
  const auto m = random_model(15);
  const Vector x{1.2, -0.3};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r(seed);
    const double iw = iw_log_likelihood(m, x, r, 64);
    // Per-sample ELBO spread gives the Monte-Carlo standard error of the 64-sample mean.
    std::vector<double> vals;
    Rng e(1000 + seed);
    for (int i = 0; i < 64; ++i) vals.push_back(elbo(m, x, e, 1).elbo);
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= 64.0;
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    const double se = std::sqrt(var / 63.0 / 64.0);
    EXPECT_GE(iw, mean - 3.0 * se);
  }
}
