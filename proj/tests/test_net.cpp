#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "sgn/hamiltonian_net.hpp"
#include "sgn/integrator.hpp"
#include "sgn/net.hpp"

using namespace sgn;

namespace {

MlpParams random_mlp(std::vector<std::size_t> dims, Activation act, Rng& rng) {
  auto net = MlpParams::init(std::move(dims), act, rng);
  for (auto& b : net.biases)
    for (auto& x : b) x = 0.3 * rng.normal();  // nonzero biases exercise the bias gradients
  return net;
}

/// Pointers to every parameter in the same order as GradBundle::append_flat.
std::vector<double*> param_refs(MlpParams& net) {
  std::vector<double*> refs;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    for (auto& w : net.weights[l].data()) refs.push_back(&w);
    for (auto& b : net.biases[l]) refs.push_back(&b);
  }
  return refs;
}

/// Central differences of a scalar functional of the net over all parameters.
Vector fd_params(MlpParams net, const std::function<double(const MlpParams&)>& f, double h) {
  Vector out;
  for (double* p : param_refs(net)) {
    const double saved = *p;
    *p = saved + h;
    const double fp = f(net);
    *p = saved - h;
    const double fm = f(net);
    *p = saved;
    out.push_back((fp - fm) / (2.0 * h));
  }
  return out;
}

Vector flat(const GradBundle& g) {
  Vector v;
  g.append_flat(v);
  return v;
}

}  // namespace

TEST(MlpForward, Examples) {
  MlpParams zero({3, 5, 1}, Activation::Tanh);
  EXPECT_EQ(mlp_forward(zero, Vector{1.0, -2.0, 3.0}).y, Vector{0.0});

  MlpParams lin({1, 1}, Activation::Tanh);
  lin.weights[0](0, 0) = 2.0;
  lin.biases[0][0] = 1.0;
  EXPECT_EQ(mlp_forward(lin, Vector{3.0}).y, Vector{7.0});

  Rng rng(1);
  const auto net = random_mlp({2, 8, 1}, Activation::Softplus, rng);
  const Vector x{0.3, -0.7};
  EXPECT_EQ(mlp_forward(net, x).y, mlp_forward(net, x).y);
  EXPECT_THROW(mlp_forward(net, Vector{1.0}), DimensionError);
}

TEST(MlpForward, RejectsPiecewiseLinear) {
  EXPECT_THROW(MlpParams({2, 4, 1}, Activation::Relu), ConfigError);
  EXPECT_EQ(activation_from_string("softplus"), Activation::Softplus);
  EXPECT_THROW(activation_from_string("elu"), ConfigError);
}

TEST(MlpInputGrad, Examples) {
  MlpParams zero({3, 5, 1}, Activation::Tanh);
  EXPECT_EQ(mlp_input_grad(zero, Vector{1.0, 2.0, 3.0}), Vector(3, 0.0));

  MlpParams lin({2, 1}, Activation::Tanh);
  lin.weights[0](0, 0) = 3.0;
  lin.weights[0](0, 1) = -1.0;
  EXPECT_EQ(mlp_input_grad(lin, Vector{0.4, 9.0}), (Vector{3.0, -1.0}));

  MlpParams vec_out({2, 2}, Activation::Tanh);
  EXPECT_THROW(mlp_input_grad(vec_out, Vector{1.0, 2.0}), DimensionError);

  Rng rng(2);
  const auto net = random_mlp({4, 16, 16, 1}, Activation::Tanh, rng);
  const Vector x = rng.standard_normal(4);
  const auto fd = oracle::fd_gradient([&](const Vector& v) { return mlp_scalar(net, v); }, x, 1e-6);
  EXPECT_LT(oracle::rel_err(mlp_input_grad(net, x), fd), 1e-6);
}

TEST(MlpParamGrad, Examples) {
  Rng rng(3);
  const auto net = random_mlp({3, 6, 1}, Activation::Tanh, rng);
  EXPECT_EQ(mlp_param_grad(net, Vector{1.0, 2.0, 3.0}, 0.0).max_abs(), 0.0);

  MlpParams lin({1, 1}, Activation::Tanh);
  lin.weights[0](0, 0) = 0.7;
  const auto g = mlp_param_grad(lin, Vector{2.0}, 1.0);
  EXPECT_EQ(g.d_weights[0](0, 0), 2.0);
  EXPECT_EQ(g.d_biases[0][0], 1.0);

  const Vector x = rng.standard_normal(3);
  const auto fd = fd_params(net, [&](const MlpParams& n) { return 1.7 * mlp_scalar(n, x); }, 1e-6);
  EXPECT_LT(oracle::rel_err(flat(mlp_param_grad(net, x, 1.7)), fd), 1e-5);
}

TEST(MlpSecondOrder, Examples) {
  Rng rng(4);
  const auto net = random_mlp({1, 8, 1}, Activation::Tanh, rng);
  const Vector x{0.4};
  EXPECT_EQ(mlp_input_grad_param_grad(net, x, Vector{0.0}).max_abs(), 0.0);

  const Vector u{1.3};
  const auto fd = fd_params(net, [&](const MlpParams& n) { return dot(u, mlp_input_grad(n, x)); }, 1e-6);
  EXPECT_LT(oracle::rel_err(flat(mlp_input_grad_param_grad(net, x, u)), fd), 1e-4);

  const auto net3 = random_mlp({3, 8, 8, 1}, Activation::Softplus, rng);
  const Vector x3 = rng.standard_normal(3), u1 = rng.standard_normal(3), u2 = rng.standard_normal(3);
  Vector u12(3);
  for (int i = 0; i < 3; ++i) u12[i] = u1[i] + u2[i];
  const Vector lhs = flat(mlp_input_grad_param_grad(net3, x3, u12));
  const Vector a = flat(mlp_input_grad_param_grad(net3, x3, u1));
  const Vector b = flat(mlp_input_grad_param_grad(net3, x3, u2));
  for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], a[i] + b[i], 1e-10);

  EXPECT_THROW(mlp_input_grad_param_grad(net3, x3, Vector{1.0}), DimensionError);
}

TEST(MlpSecondOrder, HessianVectorProduct) {
  Rng rng(5);
  for (auto act : {Activation::Tanh, Activation::Softplus}) {
    const auto net = random_mlp({3, 12, 12, 1}, act, rng);
    const Vector x = rng.standard_normal(3), u = rng.standard_normal(3);
    const auto fd = oracle::fd_gradient([&](const Vector& v) { return dot(u, mlp_input_grad(net, v)); }, x, 1e-6);
    EXPECT_LT(oracle::rel_err(mlp_input_grad_vjp(net, x, u).input, fd), 1e-6);
  }
}

TEST(MlpGradients, RandomSuite) {
  Rng rng(6);
  double worst_first = 0.0, worst_second = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t depth = 1 + trial % 3;
    const std::size_t width = 4 + rng.below(29);
    const std::size_t d = 1 + rng.below(4);
    std::vector<std::size_t> dims{d};
    for (std::size_t i = 0; i + 1 < depth; ++i) dims.push_back(width);
    dims.push_back(1);
    const auto act = trial % 2 ? Activation::Tanh : Activation::Softplus;
    const auto net = random_mlp(dims, act, rng);
    const Vector x = rng.standard_normal(d), u = rng.standard_normal(d);

    const auto fd_x = oracle::fd_gradient([&](const Vector& v) { return mlp_scalar(net, v); }, x, 1e-6);
    worst_first = std::max(worst_first, oracle::rel_err(mlp_input_grad(net, x), fd_x));
    const auto fd_p = fd_params(net, [&](const MlpParams& n) { return mlp_scalar(n, x); }, 1e-6);
    worst_first = std::max(worst_first, oracle::rel_err(flat(mlp_param_grad(net, x, 1.0)), fd_p));
    if (depth > 1) {
      const auto fd_2 = fd_params(net, [&](const MlpParams& n) { return dot(u, mlp_input_grad(n, x)); }, 1e-6);
      worst_second = std::max(worst_second, oracle::rel_err(flat(mlp_input_grad_param_grad(net, x, u)), fd_2));
    }
  }
  EXPECT_LT(worst_first, 1e-5);
  EXPECT_LT(worst_second, 1e-5);
}

TEST(SpectralNormalize, DiagonalExample) {
  MlpParams net({2, 2}, Activation::Tanh, 1.0);
  net.weights[0] = Matrix{{2.0, 0.0}, {0.0, 1.0}};
  const auto r = spectral_normalize(net, 50);
  EXPECT_NEAR(r.norms[0], 2.0, 1e-12);
  EXPECT_NEAR(r.net.weights[0](0, 0), 1.0, 1e-12);
  EXPECT_NEAR(r.net.weights[0](1, 1), 0.5, 1e-12);
  EXPECT_EQ(r.net.weights[0](0, 1), 0.0);
}

TEST(SpectralNormalize, UnchangedWhenBelowCap) {
  Rng rng(8);
  auto net = MlpParams::init({3, 4, 1}, Activation::Tanh, rng, 100.0);
  EXPECT_EQ(spectral_normalize(net, 20).net, net);
  EXPECT_THROW(spectral_normalize(net, 0), std::invalid_argument);
}

TEST(SpectralNormalize, CapHoldsAfterNormalization) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    auto net = MlpParams::init({4, 16, 16, 1}, Activation::Tanh, rng, 0.8);
    for (auto& w : net.weights) w *= 3.0;
    const auto capped = spectral_normalize(net, 100).net;
    for (const auto& w : capped.weights) EXPECT_LE(spectral_norm_estimate(w, 100), 0.8 * (1.0 + 1e-6));
  }
}

TEST(SpectralNormalize, PowerIterationMatchesOracles) {
  Rng rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    Matrix w(8, 8);
    for (auto& x : w.data()) x = rng.normal();
    const double est = spectral_norm_estimate(w, 200);

    // Randomized lower bound: max ‖Wx‖/‖x‖ over 10⁵ random directions.
    double lower = 0.0;
    Vector best;
    for (int k = 0; k < 100000; ++k) {
      const Vector x = rng.standard_normal(8);
      const double ratio = norm2(matvec(w, x)) / norm2(x);
      if (ratio > lower) {
        lower = ratio;
        best = x;
      }
    }
    // Converge from the best sampled direction with test-side WᵀW iterations.
    for (int k = 0; k < 50; ++k) {
      Vector y(8, 0.0);
      const Vector wx = matvec(w, best);
      for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j) y[j] += w(i, j) * wx[i];
      best = y;
    }
    const double refined = norm2(matvec(w, best)) / norm2(best);
    // Exact value from the eigenvalues of WᵀW.
    std::vector<Vector> wtw(8, Vector(8, 0.0));
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j)
        for (std::size_t k = 0; k < 8; ++k) wtw[i][j] += w(k, i) * w(k, j);
    const auto ev = oracle::jacobi_eigenvalues(wtw);
    const double exact = std::sqrt(*std::max_element(ev.begin(), ev.end()));

    EXPECT_GE(est, lower * (1.0 - 1e-12));
    EXPECT_NEAR(est, refined, 0.01 * refined);
    EXPECT_NEAR(est, exact, 1e-6 * exact);
  }
}

TEST(LipschitzBound, Examples) {
  SeparableHamiltonianNet zero(MlpParams({2, 8, 1}, Activation::Tanh), MlpParams({2, 8, 1}, Activation::Tanh));
  EXPECT_EQ(lipschitz_bound(zero), 0.0);
  FlowConfig cfg = FlowConfig::fixed(1.0, 50.0);
  cfg.stability_bound = lipschitz_bound(zero);
  EXPECT_NO_THROW(cfg.validate());

  Rng rng(11);
  SeparableHamiltonianNet linear(MlpParams::init({2, 1}, Activation::Tanh, rng),
                                 MlpParams::init({2, 1}, Activation::Tanh, rng));
  EXPECT_EQ(lipschitz_bound(linear), 0.0);

  // The analytic oscillator bypasses the surrogate: L_H = ω².
  EXPECT_DOUBLE_EQ(AnalyticHamiltonian::harmonic(1.0).stability_constant(), 1.0);
  EXPECT_DOUBLE_EQ(AnalyticHamiltonian::harmonic(3.0).stability_constant(), 9.0);
}

TEST(LipschitzBound, DominatesSampledCurvature) {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const auto act = trial % 2 ? Activation::Tanh : Activation::Softplus;
    const auto net = random_mlp({2, 16, 16, 1}, act, rng);
    std::vector<double> norms;
    for (const auto& w : net.weights) norms.push_back(spectral_norm_estimate(w, 200));
    const double bound = hessian_norm_bound(net, norms);
    for (int k = 0; k < 50; ++k) {
      const Vector x = rng.standard_normal(2);
      const auto hess = oracle::fd_jacobian([&](const Vector& v) { return mlp_input_grad(net, v); }, x, 1e-5);
      std::vector<Vector> sym{{hess[0][0], 0.5 * (hess[0][1] + hess[1][0])},
                              {0.5 * (hess[0][1] + hess[1][0]), hess[1][1]}};
      const auto ev = oracle::jacobi_eigenvalues(sym);
      EXPECT_LE(std::max(std::abs(ev[0]), std::abs(ev[1])), bound * (1.0 + 1e-6));
    }
  }
}

TEST(LipschitzBound, SigmaPowerGuard) {
  Rng rng(13);
  auto h = SeparableHamiltonianNet::init(2, 8, 2, Activation::Tanh, rng, 0.5);
  h.kinetic = spectral_normalize(h.kinetic, 100).net;
  h.potential = spectral_normalize(h.potential, 100).net;
  const auto e = stability_estimate(h);
  ASSERT_TRUE(e.sigma_power.has_value());
  EXPECT_DOUBLE_EQ(*e.sigma_power, std::pow(0.5, 4));
  EXPECT_EQ(e.chosen, std::min(e.surrogate, *e.sigma_power));
}
