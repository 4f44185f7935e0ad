#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "sgn/hamiltonian_net.hpp"
#include "sgn/integrator.hpp"
#include "sgn/net.hpp"
#include "sgn/rng.hpp"

namespace sgn {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

inline double clamp_log_var(double v) { return std::clamp(v, kLogVarMin, kLogVarMax); }

/// Diagonal Gaussian; log_var is kept inside [−10, 10].
struct GaussianParams {
  Vector mean;
  Vector log_var;

  GaussianParams() = default;
  GaussianParams(Vector m, Vector lv) : mean(std::move(m)), log_var(std::move(lv)) {
    require_same_size(mean.size(), log_var.size(), "GaussianParams");
    for (auto& v : log_var) v = clamp_log_var(v);
  }
};

/// log N(x; mean, diag(exp(log_var)))
inline double gaussian_log_density(std::span<const double> x, const GaussianParams& g) {
  require_same_size(x.size(), g.mean.size(), "gaussian_log_density");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = x[i] - g.mean[i];
    s += kLog2Pi + g.log_var[i] + r * r * std::exp(-g.log_var[i]);
  }
  return -0.5 * s;
}

/// log N(z; 0, I)
inline double standard_normal_log_density(std::span<const double> z) {
  double s = 0.0;
  for (double v : z) s += kLog2Pi + v * v;
  return -0.5 * s;
}

struct GaussianDecoder {
  MlpParams net;  // R^{2d} → R^{2·data_dim}: (mean, log_var)
  friend bool operator==(const GaussianDecoder&, const GaussianDecoder&) = default;
};

/// x = scale ⊙ z_T + shift, an invertible density-correction layer with
/// log|det| = Σ log|scale_i|.
struct ExactAffine {
  Vector scale;
  Vector shift;
  friend bool operator==(const ExactAffine&, const ExactAffine&) = default;
};

using DecoderMode = std::variant<GaussianDecoder, ExactAffine>;

struct SgnModel {
  std::size_t data_dim = 0;
  std::size_t latent_half_dim = 0;
  MlpParams encoder;  // R^{data_dim} → R^{4d}: (mean, log_var) of z₀
  SeparableHamiltonianNet hamiltonian;
  DecoderMode decoder;
  FlowConfig flow_cfg;

  bool exact() const noexcept { return std::holds_alternative<ExactAffine>(decoder); }

  void validate() const {
    const std::size_t d = latent_half_dim;
    if (data_dim == 0 || d == 0) throw ConfigError("SgnModel: dimensions must be positive");
    encoder.validate();
    hamiltonian.validate();
    require_same_size(encoder.input_dim(), data_dim, "SgnModel encoder input");
    require_same_size(encoder.output_dim(), 4 * d, "SgnModel encoder output");
    require_same_size(hamiltonian.dim(), d, "SgnModel Hamiltonian dimension");
    if (const auto* g = std::get_if<GaussianDecoder>(&decoder)) {
      g->net.validate();
      require_same_size(g->net.input_dim(), 2 * d, "SgnModel decoder input");
      require_same_size(g->net.output_dim(), 2 * data_dim, "SgnModel decoder output");
    } else {
      const auto& a = std::get<ExactAffine>(decoder);
      if (data_dim != 2 * d) throw ConfigError("ExactAffine requires data_dim = 2d");
      require_same_size(a.scale.size(), data_dim, "ExactAffine scale");
      require_same_size(a.shift.size(), data_dim, "ExactAffine shift");
      for (double s : a.scale)
        if (s == 0.0 || !std::isfinite(s)) throw ConfigError("ExactAffine scale entries must be nonzero");
      if (flow_cfg.mode != StepMode::Fixed)
        throw ConfigError("ExactAffine requires a fixed step schedule for exact inversion");
    }
    flow_cfg.validate();
  }

  friend bool operator==(const SgnModel&, const SgnModel&) = default;
};

enum class DecoderKind { Gaussian, ExactAffine };

/// Architecture hyperparameters used to initialize an SgnModel.
struct ModelSpec {
  std::size_t data_dim = 2;
  std::size_t latent_half_dim = 1;
  std::vector<std::size_t> encoder_hidden{32};
  std::vector<std::size_t> decoder_hidden{32};
  std::size_t hamiltonian_width = 16;
  std::size_t hamiltonian_depth = 2;
  Activation activation = Activation::Tanh;
  std::optional<double> spectral_cap;
  DecoderKind decoder = DecoderKind::Gaussian;
  FlowConfig flow = FlowConfig::fixed(1.0, 0.1);
};

inline SgnModel init_model(const ModelSpec& spec, Rng& rng) {
  SgnModel m;
  m.data_dim = spec.data_dim;
  m.latent_half_dim = spec.latent_half_dim;
  const std::size_t d = spec.latent_half_dim;

  std::vector<std::size_t> enc{spec.data_dim};
  enc.insert(enc.end(), spec.encoder_hidden.begin(), spec.encoder_hidden.end());
  enc.push_back(4 * d);
  m.encoder = MlpParams::init(enc, spec.activation, rng);

  m.hamiltonian = SeparableHamiltonianNet::init(d, spec.hamiltonian_width, spec.hamiltonian_depth,
                                                spec.activation, rng, spec.spectral_cap);
  if (spec.spectral_cap) {
    m.hamiltonian.kinetic = spectral_normalize(m.hamiltonian.kinetic, 50).net;
    m.hamiltonian.potential = spectral_normalize(m.hamiltonian.potential, 50).net;
  }

  if (spec.decoder == DecoderKind::Gaussian) {
    std::vector<std::size_t> dec{2 * d};
    dec.insert(dec.end(), spec.decoder_hidden.begin(), spec.decoder_hidden.end());
    dec.push_back(2 * spec.data_dim);
    m.decoder = GaussianDecoder{MlpParams::init(dec, spec.activation, rng)};
  } else {
    m.decoder = ExactAffine{Vector(spec.data_dim, 1.0), Vector(spec.data_dim, 0.0)};
  }
  m.flow_cfg = spec.flow;
  m.validate();
  return m;
}

struct ElboBreakdown {
  double reconstruction = 0.0;
  double kl = 0.0;
  double elbo = 0.0;
  double logdet_correction = 0.0;
};

/// q_φ(z₀ | x)
inline GaussianParams encode(const SgnModel& m, std::span<const double> x) {
  require_same_size(x.size(), m.data_dim, "encode");
  const Vector out = mlp_forward(m.encoder, x).y;
  const std::size_t n = 2 * m.latent_half_dim;
  return GaussianParams(Vector(out.begin(), out.begin() + n), Vector(out.begin() + n, out.end()));
}

/// z₀ = μ + exp(log_var / 2) ⊙ ε; first d coordinates are q, last d are p.
inline PhaseState reparam_with_noise(const GaussianParams& g, std::span<const double> eps) {
  require_same_size(eps.size(), g.mean.size(), "reparam_with_noise");
  Vector z(g.mean.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = g.mean[i] + std::exp(0.5 * g.log_var[i]) * eps[i];
  return PhaseState::from_flat(z);
}

inline PhaseState reparam_sample(const GaussianParams& g, Rng& rng) {
  const Vector eps = rng.standard_normal(g.mean.size());
  return reparam_with_noise(g, eps);
}

/// KL(N(μ, diag e^{lv}) ‖ N(0, I)) = ½ Σ (e^{lv} + μ² − 1 − lv)
inline double gaussian_kl(const GaussianParams& g) {
  double s = 0.0;
  for (std::size_t i = 0; i < g.mean.size(); ++i)
    s += std::exp(g.log_var[i]) + g.mean[i] * g.mean[i] - 1.0 - g.log_var[i];
  return 0.5 * s;
}

/// Decoder output distribution p_θ(x | z_T) (Gaussian mode only).
inline GaussianParams decode(const SgnModel& m, const PhaseState& zT) {
  const auto* g = std::get_if<GaussianDecoder>(&m.decoder);
  if (!g) throw ConfigError("decode: ExactAffine models have no pointwise decoder density; use exact_log_likelihood");
  require_same_size(zT.dim(), m.latent_half_dim, "decode latent");
  const Vector out = mlp_forward(g->net, zT.flat()).y;
  return GaussianParams(Vector(out.begin(), out.begin() + m.data_dim), Vector(out.begin() + m.data_dim, out.end()));
}

inline double decode_log_prob(const SgnModel& m, const PhaseState& zT, std::span<const double> x) {
  require_same_size(x.size(), m.data_dim, "decode_log_prob data");
  return gaussian_log_density(x, decode(m, zT));
}

inline PhaseState affine_inverse(const ExactAffine& a, std::span<const double> x) {
  require_same_size(x.size(), a.scale.size(), "affine_inverse");
  Vector z(x.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = (x[i] - a.shift[i]) / a.scale[i];
  return PhaseState::from_flat(z);
}

inline double affine_log_abs_det(const ExactAffine& a) {
  double s = 0.0;
  for (double v : a.scale) s += std::log(std::abs(v));
  return s;
}

/// log p(x) = log N(Φ_T⁻¹(Λ⁻¹(x)); 0, I) − Σ log|scale_i|
inline double exact_log_likelihood(const SgnModel& m, std::span<const double> x) {
  const auto* a = std::get_if<ExactAffine>(&m.decoder);
  if (!a) throw ConfigError("exact_log_likelihood requires an ExactAffine model");
  require_same_size(x.size(), m.data_dim, "exact_log_likelihood");
  const PhaseState zT = affine_inverse(*a, x);
  const auto dts = fixed_schedule(m.flow_cfg);
  const PhaseState z0 = inverse_flow(m.hamiltonian, zT, dts);
  return standard_normal_log_density(z0.flat()) - affine_log_abs_det(*a);
}

/// Monte-Carlo ELBO with `mc_samples` reparameterized draws. The flow adds no density
/// term. ExactAffine models return the exact log-likelihood (the bound is tight) with
/// the −Σ log|scale| term reported separately in logdet_correction.
inline ElboBreakdown elbo(const SgnModel& m, std::span<const double> x, Rng& rng, std::size_t mc_samples = 1) {
  if (mc_samples == 0) throw std::invalid_argument("elbo: mc_samples must be >= 1");
  require_same_size(x.size(), m.data_dim, "elbo");
  ElboBreakdown r;
  if (const auto* a = std::get_if<ExactAffine>(&m.decoder)) {
    r.logdet_correction = -affine_log_abs_det(*a);
    r.reconstruction = exact_log_likelihood(m, x);
    r.kl = 0.0;
    r.elbo = r.reconstruction - r.kl;
    return r;
  }
  const GaussianParams q = encode(m, x);
  r.kl = gaussian_kl(q);
  double sum = 0.0;
  for (std::size_t s = 0; s < mc_samples; ++s) {
    const PhaseState z0 = reparam_sample(q, rng);
    try {
      const auto f = flow(m.hamiltonian, z0, m.flow_cfg);
      sum += decode_log_prob(m, f.state, x);
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string("elbo: sample ") + std::to_string(s) + ": " + e.what(), e.step());
    }
  }
  r.reconstruction = sum / static_cast<double>(mc_samples);
  r.elbo = r.reconstruction - r.kl;
  return r;
}

/// Prior → forward flow → decoder mean (Gaussian) or Λ(z_T) (ExactAffine).
inline std::vector<Vector> generate(const SgnModel& m, Rng& rng, std::size_t n) {
  std::vector<Vector> out;
  out.reserve(n);
  const std::size_t d = m.latent_half_dim;
  for (std::size_t i = 0; i < n; ++i) {
    const PhaseState z0 = PhaseState::from_flat(rng.standard_normal(2 * d));
    const PhaseState zT = flow(m.hamiltonian, z0, m.flow_cfg).state;
    if (const auto* a = std::get_if<ExactAffine>(&m.decoder)) {
      Vector x = zT.flat();
      for (std::size_t j = 0; j < x.size(); ++j) x[j] = a->scale[j] * x[j] + a->shift[j];
      out.push_back(std::move(x));
    } else {
      out.push_back(decode(m, zT).mean);
    }
  }
  return out;
}

/// Numerically stable log(mean(exp(v))).
inline double log_mean_exp(std::span<const double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s / static_cast<double>(v.size()));
}

/// Importance-weighted estimate of log p(x) with q_φ as proposal.
inline double iw_log_likelihood(const SgnModel& m, std::span<const double> x, Rng& rng, std::size_t samples) {
  if (m.exact()) throw ConfigError("iw_log_likelihood requires a Gaussian-decoder model");
  if (samples == 0) throw std::invalid_argument("iw_log_likelihood: S must be >= 1");
  require_same_size(x.size(), m.data_dim, "iw_log_likelihood");
  const GaussianParams q = encode(m, x);
  Vector w(samples);
  for (std::size_t s = 0; s < samples; ++s) {
    const PhaseState z0 = reparam_sample(q, rng);
    const Vector z = z0.flat();
    const PhaseState zT = flow(m.hamiltonian, z0, m.flow_cfg).state;
    w[s] = decode_log_prob(m, zT, x) + standard_normal_log_density(z) - gaussian_log_density(z, q);
  }
  return log_mean_exp(w);
}

/// Riemann sum of the exact density over the square [lo, hi]^2 on nodes spaced h apart.
inline double exact_grid_mass(const SgnModel& m, double lo = -6.0, double hi = 6.0, double h = 0.05) {
  if (!m.exact() || m.data_dim != 2) throw ConfigError("exact_grid_mass requires a 2-D ExactAffine model");
  if (!(h > 0.0) || !(hi > lo)) throw ConfigError("exact_grid_mass: need h > 0 and hi > lo");
  const auto n = static_cast<long>(std::llround((hi - lo) / h));
  double mass = 0.0;
  for (long i = 0; i <= n; ++i)
    for (long j = 0; j <= n; ++j) {
      const Vector x{lo + static_cast<double>(i) * h, lo + static_cast<double>(j) * h};
      mass += std::exp(exact_log_likelihood(m, x));
    }
  return mass * h * h;
}

}  // namespace sgn
