#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sgn/core.hpp"
#include "sgn/matrix.hpp"
#include "sgn/rng.hpp"

namespace sgn {

/// Hidden-layer nonlinearity. The output layer is always affine.
/// Relu is representable only so that configurations naming it can be rejected:
/// the integrator's error analysis needs a smooth Hamiltonian.
enum class Activation { Tanh, Softplus, Relu };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Softplus: return "softplus";
    case Activation::Relu: return "relu";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "softplus") return Activation::Softplus;
  if (s == "relu") return Activation::Relu;
  throw ConfigError("unknown activation '" + s + "'");
}

namespace detail {

inline double act(Activation a, double x) {
  if (a == Activation::Tanh) return std::tanh(x);
  // log(1 + e^x) without overflow
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double act_d1(Activation a, double x) {
  if (a == Activation::Tanh) {
    const double t = std::tanh(x);
    return 1.0 - t * t;
  }
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline double act_d2(Activation a, double x) {
  if (a == Activation::Tanh) {
    const double t = std::tanh(x);
    return -2.0 * t * (1.0 - t * t);
  }
  const double s = act_d1(a, x);
  return s * (1.0 - s);
}

/// sup |σ''|
inline double act_d2_bound(Activation a) {
  if (a == Activation::Tanh) return 4.0 / (3.0 * std::sqrt(3.0));
  return 0.25;
}

}  // namespace detail

/// Multilayer perceptron: hidden layers x ↦ σ(Wx + b), final layer affine.
struct MlpParams {
  std::vector<std::size_t> layer_dims;
  std::vector<Matrix> weights;  // weights[l] is dims[l+1] × dims[l]
  std::vector<Vector> biases;
  Activation activation = Activation::Tanh;
  std::optional<double> spectral_cap;

  MlpParams() = default;

  MlpParams(std::vector<std::size_t> dims, Activation act, std::optional<double> cap = std::nullopt)
      : layer_dims(std::move(dims)), activation(act), spectral_cap(cap) {
    if (layer_dims.size() < 2) throw ConfigError("MlpParams: need at least input and output dims");
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
      weights.emplace_back(layer_dims[l + 1], layer_dims[l]);
      biases.emplace_back(layer_dims[l + 1], 0.0);
    }
    validate();
  }

  /// Weights ~ N(0, 1/fan_in), biases 0.
  static MlpParams init(std::vector<std::size_t> dims, Activation act, Rng& rng,
                        std::optional<double> cap = std::nullopt) {
    MlpParams net(std::move(dims), act, cap);
    for (auto& w : net.weights) {
      const double sd = 1.0 / std::sqrt(static_cast<double>(w.cols()));
      for (auto& x : w.data()) x = sd * rng.normal();
    }
    return net;
  }

  void validate() const {
    if (activation == Activation::Relu)
      throw ConfigError("MlpParams: piecewise-linear activation rejected; use tanh or softplus");
    if (layer_dims.size() < 2) throw ConfigError("MlpParams: need at least input and output dims");
    for (std::size_t d : layer_dims)
      if (d == 0) throw ConfigError("MlpParams: layer dims must be positive");
    require_same_size(weights.size(), layer_dims.size() - 1, "MlpParams weight count");
    require_same_size(biases.size(), layer_dims.size() - 1, "MlpParams bias count");
    for (std::size_t l = 0; l < weights.size(); ++l) {
      require_same_size(weights[l].cols(), layer_dims[l], "MlpParams weight cols");
      require_same_size(weights[l].rows(), layer_dims[l + 1], "MlpParams weight rows");
      require_same_size(biases[l].size(), layer_dims[l + 1], "MlpParams bias size");
    }
    if (spectral_cap && !(*spectral_cap > 0.0)) throw ConfigError("MlpParams: spectral cap must be > 0");
  }

  std::size_t num_layers() const noexcept { return weights.size(); }
  std::size_t input_dim() const noexcept { return layer_dims.front(); }
  std::size_t output_dim() const noexcept { return layer_dims.back(); }

  std::size_t num_params() const noexcept {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].data().size() + biases[l].size();
    return n;
  }

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

/// Gradients with the same shapes as an MlpParams.
struct GradBundle {
  std::vector<Matrix> d_weights;
  std::vector<Vector> d_biases;

  static GradBundle zeros_like(const MlpParams& net) {
    GradBundle g;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      g.d_weights.emplace_back(net.weights[l].rows(), net.weights[l].cols());
      g.d_biases.emplace_back(net.biases[l].size(), 0.0);
    }
    return g;
  }

  GradBundle& operator+=(const GradBundle& o) {
    require_same_size(d_weights.size(), o.d_weights.size(), "GradBundle +=");
    for (std::size_t l = 0; l < d_weights.size(); ++l) {
      auto a = d_weights[l].data();
      auto b = o.d_weights[l].data();
      require_same_size(a.size(), b.size(), "GradBundle weight");
      for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
      for (std::size_t i = 0; i < d_biases[l].size(); ++i) d_biases[l][i] += o.d_biases[l][i];
    }
    return *this;
  }

  GradBundle& operator*=(double s) {
    for (auto& w : d_weights) w *= s;
    for (auto& b : d_biases)
      for (auto& x : b) x *= s;
    return *this;
  }

  /// Weights then biases per layer, in layer order.
  void append_flat(Vector& out) const {
    for (std::size_t l = 0; l < d_weights.size(); ++l) {
      const auto w = d_weights[l].data();
      out.insert(out.end(), w.begin(), w.end());
      out.insert(out.end(), d_biases[l].begin(), d_biases[l].end());
    }
  }

  double max_abs() const {
    double m = 0.0;
    for (const auto& w : d_weights) m = std::max(m, sgn::max_abs(w));
    for (const auto& b : d_biases)
      for (double x : b) m = std::max(m, std::abs(x));
    return m;
  }
};

/// Pre-activations z_l and outputs a_l of each layer; a_0 is the input.
struct ForwardCache {
  std::vector<Vector> pre;   // pre[l] = W_l a_l + b_l
  std::vector<Vector> post;  // post[0] = x, post[l+1] = σ(pre[l]) (hidden) or pre[l] (output)
};

struct ForwardResult {
  Vector y;
  ForwardCache cache;
};

inline ForwardResult mlp_forward(const MlpParams& net, std::span<const double> x) {
  require_same_size(x.size(), net.input_dim(), "mlp_forward input");
  ForwardResult r;
  const std::size_t n = net.num_layers();
  r.cache.post.emplace_back(x.begin(), x.end());
  for (std::size_t l = 0; l < n; ++l) {
    Vector z = matvec(net.weights[l], r.cache.post.back());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += net.biases[l][i];
    Vector a = z;
    if (l + 1 < n)
      for (auto& v : a) v = detail::act(net.activation, v);
    r.cache.pre.push_back(std::move(z));
    r.cache.post.push_back(std::move(a));
  }
  r.y = r.cache.post.back();
  return r;
}

/// Scalar output of a net with output_dim 1.
inline double mlp_scalar(const MlpParams& net, std::span<const double> x) {
  if (net.output_dim() != 1) throw DimensionError("mlp_scalar: output dimension must be 1");
  return mlp_forward(net, x).y[0];
}

struct BackwardResult {
  GradBundle params;
  Vector input;
};

/// Reverse pass for an arbitrary upstream cotangent on the output vector.
inline BackwardResult mlp_backward(const MlpParams& net, const ForwardCache& cache,
                                   std::span<const double> upstream) {
  require_same_size(upstream.size(), net.output_dim(), "mlp_backward upstream");
  BackwardResult r{GradBundle::zeros_like(net), {}};
  Vector delta(upstream.begin(), upstream.end());  // ∂/∂z_l
  for (std::size_t l = net.num_layers(); l-- > 0;) {
    if (l + 1 < net.num_layers()) {
      const auto& z = cache.pre[l];
      for (std::size_t i = 0; i < delta.size(); ++i) delta[i] *= detail::act_d1(net.activation, z[i]);
    }
    add_outer(r.params.d_weights[l], 1.0, delta, cache.post[l]);
    r.params.d_biases[l] = delta;
    delta = matvec_t(net.weights[l], delta);
  }
  r.input = std::move(delta);
  return r;
}

/// ∇ₓ f for a scalar-output net.
inline Vector mlp_input_grad(const MlpParams& net, std::span<const double> x) {
  if (net.output_dim() != 1) throw DimensionError("mlp_input_grad: output dimension must be 1");
  const auto fwd = mlp_forward(net, x);
  const double one = 1.0;
  return mlp_backward(net, fwd.cache, std::span<const double>(&one, 1)).input;
}

/// ∂(upstream · f)/∂(W, b) for a scalar-output net.
inline GradBundle mlp_param_grad(const MlpParams& net, std::span<const double> x, double upstream) {
  if (net.output_dim() != 1) throw DimensionError("mlp_param_grad: output dimension must be 1");
  const auto fwd = mlp_forward(net, x);
  return mlp_backward(net, fwd.cache, std::span<const double>(&upstream, 1)).params;
}

struct SecondOrderResult {
  GradBundle params;  // ∂/∂θ ⟨u, ∇ₓ f⟩
  Vector input;       // ∂/∂x ⟨u, ∇ₓ f⟩ = ∇²ₓ f · u
};

/// Gradient of g(θ, x) = ⟨u, ∇ₓ f(x)⟩ in both θ and x. The directional derivative is
/// propagated forward as a tangent (ȧ₀ = u) and the resulting scalar is differentiated
/// by a reverse sweep over the primal and tangent chains.
inline SecondOrderResult mlp_input_grad_vjp(const MlpParams& net, std::span<const double> x,
                                            std::span<const double> u) {
  if (net.output_dim() != 1) throw DimensionError("mlp_input_grad_vjp: output dimension must be 1");
  require_same_size(u.size(), x.size(), "mlp_input_grad_vjp upstream");
  const std::size_t n = net.num_layers();
  const auto fwd = mlp_forward(net, x);
  const auto& pre = fwd.cache.pre;
  const auto& post = fwd.cache.post;

  // Tangent chain: dz[l] = W_l da[l], da[l+1] = σ'(z_l) ⊙ dz[l] for hidden layers.
  std::vector<Vector> dpre(n), dpost(n + 1);
  dpost[0].assign(u.begin(), u.end());
  for (std::size_t l = 0; l < n; ++l) {
    dpre[l] = matvec(net.weights[l], dpost[l]);
    Vector da = dpre[l];
    if (l + 1 < n)
      for (std::size_t i = 0; i < da.size(); ++i) da[i] *= detail::act_d1(net.activation, pre[l][i]);
    dpost[l + 1] = std::move(da);
  }

  SecondOrderResult r{GradBundle::zeros_like(net), {}};
  // Adjoints of the tangent (bar_dz) and primal (bar_z) pre-activations; the output
  // scalar is the tangent of f, so the primal output adjoint is zero.
  Vector bar_dz{1.0};
  Vector bar_z{0.0};
  for (std::size_t l = n; l-- > 0;) {
    if (l + 1 < n) {
      // da = σ'(z) ⊙ dz ;  a = σ(z)
      Vector bar_da = std::move(bar_dz);
      Vector bar_a = std::move(bar_z);
      bar_dz.assign(bar_da.size(), 0.0);
      bar_z.assign(bar_da.size(), 0.0);
      for (std::size_t i = 0; i < bar_da.size(); ++i) {
        const double zi = pre[l][i];
        const double s1 = detail::act_d1(net.activation, zi);
        bar_dz[i] = s1 * bar_da[i];
        bar_z[i] = detail::act_d2(net.activation, zi) * dpre[l][i] * bar_da[i] + s1 * bar_a[i];
      }
    }
    // dz = W da_prev ; z = W a_prev + b
    add_outer(r.params.d_weights[l], 1.0, bar_dz, dpost[l]);
    add_outer(r.params.d_weights[l], 1.0, bar_z, post[l]);
    r.params.d_biases[l] = bar_z;
    Vector next_bar_dz = matvec_t(net.weights[l], bar_dz);
    Vector next_bar_z = matvec_t(net.weights[l], bar_z);
    bar_dz = std::move(next_bar_dz);
    bar_z = std::move(next_bar_z);
  }
  r.input = std::move(bar_z);
  return r;
}

/// ∂/∂θ ⟨upstream_vec, ∇ₓ f(x)⟩
inline GradBundle mlp_input_grad_param_grad(const MlpParams& net, std::span<const double> x,
                                            std::span<const double> upstream_vec) {
  return mlp_input_grad_vjp(net, x, upstream_vec).params;
}

/// Largest singular value by power iteration on WᵀW from a fixed-seed start vector.
inline double spectral_norm_estimate(const Matrix& w, std::size_t iters, std::uint64_t seed = 0x5EED) {
  Rng rng(seed);
  Vector v = rng.standard_normal(w.cols());
  double nv = norm2(v);
  for (auto& x : v) x /= nv;
  double sigma = 0.0;
  for (std::size_t k = 0; k < iters; ++k) {
    const Vector u = matvec(w, v);
    sigma = norm2(u);
    if (sigma == 0.0) return 0.0;
    v = matvec_t(w, u);
    nv = norm2(v);
    if (nv == 0.0) return 0.0;
    for (auto& x : v) x /= nv;
  }
  return norm2(matvec(w, v));
}

struct SpectralResult {
  MlpParams net;
  std::vector<double> norms;  // estimates before rescaling
};

/// Rescales every weight matrix whose estimated norm exceeds the net's spectral cap.
/// Without a cap the net is returned unchanged (norms are still reported).
inline SpectralResult spectral_normalize(const MlpParams& net, std::size_t iters) {
  if (iters == 0) throw std::invalid_argument("spectral_normalize: iters must be >= 1");
  SpectralResult r{net, {}};
  for (auto& w : r.net.weights) {
    const double s = spectral_norm_estimate(w, iters);
    r.norms.push_back(s);
    if (net.spectral_cap && s > *net.spectral_cap) w *= *net.spectral_cap / s;
  }
  return r;
}

/// Upper bound on ‖∇²ₓ f‖₂ for a scalar-output net given per-layer spectral norms.
/// With P_k = ∏_{j≤k} ‖W_j‖ and P = P_L, each hidden layer k contributes
/// sup|σ''| · P_k² · (P / P_k) = sup|σ''| · P · P_k, using |σ'| ≤ 1.
inline double hessian_norm_bound(const MlpParams& net, std::span<const double> norms) {
  require_same_size(norms.size(), net.num_layers(), "hessian_norm_bound");
  double total = 1.0;
  for (double s : norms) total *= s;
  double prefix = 1.0, sum = 0.0;
  for (std::size_t k = 0; k + 1 < norms.size(); ++k) {
    prefix *= norms[k];
    sum += prefix;
  }
  return detail::act_d2_bound(net.activation) * total * sum;
}

}  // namespace sgn
