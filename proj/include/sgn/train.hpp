#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgn/model.hpp"

namespace sgn {

enum class BackpropMode { Stored, Reversible };
enum class OptimizerKind { Sgd, Adam };

inline std::string to_string(BackpropMode m) { return m == BackpropMode::Stored ? "stored" : "reversible"; }
inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

inline BackpropMode backprop_mode_from_string(const std::string& s) {
  if (s == "stored") return BackpropMode::Stored;
  if (s == "reversible") return BackpropMode::Reversible;
  throw ConfigError("unknown backprop mode '" + s + "'");
}

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + s + "'");
}

// ---------------------------------------------------------------------------
// Backpropagation through the flow

/// States z_0 … z_N visited along a schedule.
template <Hamiltonian H>
std::vector<PhaseState> record_tape(const H& h, const PhaseState& z0, std::span<const double> dts) {
  std::vector<PhaseState> tape;
  tape.reserve(dts.size() + 1);
  tape.push_back(z0);
  for (std::size_t i = 0; i < dts.size(); ++i)
    tape.push_back(leapfrog_step(h, tape.back(), dts[i], static_cast<long>(i)));
  return tape;
}

struct FlowVjp {
  Vector dz0;
  GradBundle d_kinetic;
  GradBundle d_potential;
  std::size_t peak_states = 0;  // phase states alive at once during the backward sweep
};

namespace detail {

/// Pulls the cotangent `adj` on the output of one leapfrog step from z back to z, and
/// accumulates the parameter sensitivities of the two kicks and the drift.
inline Vector step_vjp(const SeparableHamiltonianNet& h, const PhaseState& z, double dt, const Vector& adj,
                       GradBundle& dk, GradBundle& dv) {
  const std::size_t d = z.dim();
  const double half = 0.5 * dt;
  Vector p_half = z.p();
  {
    const Vector g = mlp_input_grad(h.potential, z.q());
    for (std::size_t i = 0; i < d; ++i) p_half[i] -= half * g[i];
  }
  Vector q_next = z.q();
  {
    const Vector g = mlp_input_grad(h.kinetic, p_half);
    for (std::size_t i = 0; i < d; ++i) q_next[i] += dt * g[i];
  }

  Vector a_q(adj.begin(), adj.begin() + static_cast<std::ptrdiff_t>(d));
  Vector a_p(adj.begin() + static_cast<std::ptrdiff_t>(d), adj.end());

  // p' = p½ − h/2 ∇V(q')
  {
    auto s = mlp_input_grad_vjp(h.potential, q_next, a_p);
    s.params *= -half;
    dv += s.params;
    for (std::size_t i = 0; i < d; ++i) a_q[i] -= half * s.input[i];
  }
  // q' = q + h ∇K(p½)
  {
    auto s = mlp_input_grad_vjp(h.kinetic, p_half, a_q);
    s.params *= dt;
    dk += s.params;
    for (std::size_t i = 0; i < d; ++i) a_p[i] += dt * s.input[i];
  }
  // p½ = p − h/2 ∇V(q)
  {
    auto s = mlp_input_grad_vjp(h.potential, z.q(), a_p);
    s.params *= -half;
    dv += s.params;
    for (std::size_t i = 0; i < d; ++i) a_q[i] -= half * s.input[i];
  }
  Vector out = std::move(a_q);
  out.insert(out.end(), a_p.begin(), a_p.end());
  return out;
}

}  // namespace detail

/// Cotangent of z_0 and of the Hamiltonian parameters for a loss whose gradient at the
/// end state z_N of the schedule `dts` is `upstream`. Stored mode reads the states from
/// `tape` (as produced by record_tape); Reversible mode rebuilds each z_i from z_{i+1}
/// with the inverse step and keeps only the current pair plus the cotangent.
inline FlowVjp flow_vjp(const SeparableHamiltonianNet& h, std::span<const double> dts, const PhaseState& z_end,
                        std::span<const double> upstream, BackpropMode mode,
                        const std::vector<PhaseState>* tape = nullptr) {
  require_same_size(z_end.dim(), h.dim(), "flow_vjp state");
  require_same_size(upstream.size(), 2 * h.dim(), "flow_vjp upstream");
  FlowVjp r{Vector(upstream.begin(), upstream.end()), GradBundle::zeros_like(h.kinetic),
            GradBundle::zeros_like(h.potential), 0};

  if (mode == BackpropMode::Stored) {
    if (!tape || tape->size() != dts.size() + 1)
      throw std::invalid_argument("flow_vjp: stored mode needs a tape of N+1 states");
    if (!(tape->back() == z_end)) throw std::invalid_argument("flow_vjp: tape does not end at z_end");
    r.peak_states = tape->size() + 1;
    for (std::size_t i = dts.size(); i-- > 0;)
      r.dz0 = detail::step_vjp(h, (*tape)[i], dts[i], r.dz0, r.d_kinetic, r.d_potential);
    return r;
  }

  std::size_t live = 2;  // cotangent + current state
  r.peak_states = live;
  PhaseState z = z_end;
  for (std::size_t i = dts.size(); i-- > 0;) {
    PhaseState prev = leapfrog_step(h, z, -dts[i], static_cast<long>(i));
    r.peak_states = std::max(r.peak_states, live + 1);
    r.dz0 = detail::step_vjp(h, prev, dts[i], r.dz0, r.d_kinetic, r.d_potential);
    z = std::move(prev);
  }
  return r;
}

inline FlowVjp flow_vjp(const SeparableHamiltonianNet& h, const StepTrace& trace, const PhaseState& z_end,
                        std::span<const double> upstream, BackpropMode mode,
                        const std::vector<PhaseState>* tape = nullptr) {
  return flow_vjp(h, std::span<const double>(trace.accepted_dts), z_end, upstream, mode, tape);
}

// ---------------------------------------------------------------------------
// Model parameters as one flat vector: encoder, kinetic, potential, decoder.

inline void append_params(const MlpParams& net, Vector& out) {
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const auto w = net.weights[l].data();
    out.insert(out.end(), w.begin(), w.end());
    out.insert(out.end(), net.biases[l].begin(), net.biases[l].end());
  }
}

inline void read_params(MlpParams& net, std::span<const double> v, std::size_t& at) {
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    for (auto& x : net.weights[l].data()) x = v[at++];
    for (auto& x : net.biases[l]) x = v[at++];
  }
}

inline Vector flatten_params(const SgnModel& m) {
  Vector out;
  append_params(m.encoder, out);
  append_params(m.hamiltonian.kinetic, out);
  append_params(m.hamiltonian.potential, out);
  if (const auto* g = std::get_if<GaussianDecoder>(&m.decoder)) {
    append_params(g->net, out);
  } else {
    const auto& a = std::get<ExactAffine>(m.decoder);
    out.insert(out.end(), a.scale.begin(), a.scale.end());
    out.insert(out.end(), a.shift.begin(), a.shift.end());
  }
  return out;
}

inline void unflatten_params(SgnModel& m, std::span<const double> v) {
  std::size_t at = 0;
  auto need = [&](std::size_t n) {
    if (at + n > v.size()) throw DimensionError("unflatten_params: vector too short");
  };
  need(m.encoder.num_params());
  read_params(m.encoder, v, at);
  need(m.hamiltonian.kinetic.num_params());
  read_params(m.hamiltonian.kinetic, v, at);
  need(m.hamiltonian.potential.num_params());
  read_params(m.hamiltonian.potential, v, at);
  if (auto* g = std::get_if<GaussianDecoder>(&m.decoder)) {
    need(g->net.num_params());
    read_params(g->net, v, at);
  } else {
    auto& a = std::get<ExactAffine>(m.decoder);
    need(2 * a.scale.size());
    for (auto& x : a.scale) x = v[at++];
    for (auto& x : a.shift) x = v[at++];
  }
  if (at != v.size()) throw DimensionError("unflatten_params: vector too long");
}

/// Gradients of the loss −ELBO with the shapes of an SgnModel.
struct ModelGradients {
  GradBundle encoder, kinetic, potential, decoder;
  Vector d_scale, d_shift;  // ExactAffine only

  static ModelGradients zeros_like(const SgnModel& m) {
    ModelGradients g;
    g.encoder = GradBundle::zeros_like(m.encoder);
    g.kinetic = GradBundle::zeros_like(m.hamiltonian.kinetic);
    g.potential = GradBundle::zeros_like(m.hamiltonian.potential);
    if (const auto* dec = std::get_if<GaussianDecoder>(&m.decoder)) {
      g.decoder = GradBundle::zeros_like(dec->net);
    } else {
      g.d_scale.assign(m.data_dim, 0.0);
      g.d_shift.assign(m.data_dim, 0.0);
    }
    return g;
  }

  ModelGradients& operator+=(const ModelGradients& o) {
    encoder += o.encoder;
    kinetic += o.kinetic;
    potential += o.potential;
    decoder += o.decoder;
    for (std::size_t i = 0; i < d_scale.size(); ++i) {
      d_scale[i] += o.d_scale[i];
      d_shift[i] += o.d_shift[i];
    }
    return *this;
  }

  ModelGradients& operator*=(double s) {
    encoder *= s;
    kinetic *= s;
    potential *= s;
    decoder *= s;
    for (auto& x : d_scale) x *= s;
    for (auto& x : d_shift) x *= s;
    return *this;
  }

  /// Same layout as flatten_params.
  Vector flat() const {
    Vector out;
    encoder.append_flat(out);
    kinetic.append_flat(out);
    potential.append_flat(out);
    decoder.append_flat(out);
    out.insert(out.end(), d_scale.begin(), d_scale.end());
    out.insert(out.end(), d_shift.begin(), d_shift.end());
    return out;
  }
};

// ---------------------------------------------------------------------------
// ELBO gradients

struct SampleStats {
  double reconstruction = 0.0;
  double kl = 0.0;
  std::size_t accepted_steps = 0;
  std::size_t rejected_steps = 0;
  std::size_t clamp_events = 0;
  std::size_t peak_states = 0;
};

namespace detail {

inline bool clamp_passes(double raw) { return raw >= kLogVarMin && raw <= kLogVarMax; }

inline SampleStats exact_sample_gradients(const SgnModel& m, std::span<const double> x, BackpropMode mode,
                                          ModelGradients& g) {
  const auto& a = std::get<ExactAffine>(m.decoder);
  const std::size_t n = m.data_dim;
  Vector zTf(n);
  for (std::size_t i = 0; i < n; ++i) zTf[i] = (x[i] - a.shift[i]) / a.scale[i];
  if (!all_finite(zTf)) throw DivergenceError("sample_gradients: non-finite latent", -1);
  const PhaseState zT = PhaseState::from_flat(zTf);
  // The density pulls x back through Φ_T⁻¹, i.e. the schedule reversed with negated steps.
  const auto fwd = fixed_schedule(m.flow_cfg);
  Vector inv(fwd.rbegin(), fwd.rend());
  for (auto& v : inv) v = -v;

  std::vector<PhaseState> tape;
  PhaseState z0 = zT;
  if (mode == BackpropMode::Stored) {
    tape = record_tape(m.hamiltonian, zT, inv);
    z0 = tape.back();
  } else {
    z0 = flow_with_schedule(m.hamiltonian, zT, inv);
  }
  const Vector z0f = z0.flat();

  SampleStats st;
  st.reconstruction = standard_normal_log_density(z0f) - affine_log_abs_det(a);
  st.accepted_steps = inv.size();

  // loss = ½‖z₀‖² + const + Σ log|s|
  const auto v = flow_vjp(m.hamiltonian, inv, z0, z0f, mode, mode == BackpropMode::Stored ? &tape : nullptr);
  st.peak_states = v.peak_states;
  g.kinetic += v.d_kinetic;
  g.potential += v.d_potential;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = a.scale[i];
    const double u = (x[i] - a.shift[i]) / s;
    g.d_shift[i] += -v.dz0[i] / s;
    g.d_scale[i] += -v.dz0[i] * u / s + 1.0 / s;
  }
  return st;
}

}  // namespace detail

/// Gradient of −ELBO for one data point with fixed reparameterization noise `eps`
/// (ignored for ExactAffine models, whose objective is the exact log-likelihood).
/// Accumulates into `g`; throws DivergenceError if the flow blows up.
inline SampleStats sample_gradients(const SgnModel& m, std::span<const double> x, std::span<const double> eps,
                                    BackpropMode mode, ModelGradients& g) {
  require_same_size(x.size(), m.data_dim, "sample_gradients");
  if (m.exact()) return detail::exact_sample_gradients(m, x, mode, g);

  const std::size_t d2 = 2 * m.latent_half_dim;
  require_same_size(eps.size(), d2, "sample_gradients noise");
  const auto& dec = std::get<GaussianDecoder>(m.decoder).net;

  const auto enc = mlp_forward(m.encoder, x);
  const Vector& raw = enc.y;
  Vector mu(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(d2));
  Vector lv(d2), sd(d2), z0f(d2);
  for (std::size_t i = 0; i < d2; ++i) {
    lv[i] = clamp_log_var(raw[d2 + i]);
    sd[i] = std::exp(0.5 * lv[i]);
    z0f[i] = mu[i] + sd[i] * eps[i];
  }
  if (!all_finite(z0f)) throw DivergenceError("sample_gradients: non-finite initial latent", -1);
  const PhaseState z0 = PhaseState::from_flat(z0f);
  const auto f = flow(m.hamiltonian, z0, m.flow_cfg);
  std::vector<PhaseState> tape;
  if (mode == BackpropMode::Stored) tape = record_tape(m.hamiltonian, z0, f.trace.accepted_dts);

  const auto out = mlp_forward(dec, f.state.flat());
  const std::size_t n = m.data_dim;
  SampleStats st;
  Vector up(2 * n);
  double lp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lvx = clamp_log_var(out.y[n + i]);
    const double r = x[i] - out.y[i];
    const double iv = std::exp(-lvx);
    lp += kLog2Pi + lvx + r * r * iv;
    up[i] = -r * iv;
    up[n + i] = detail::clamp_passes(out.y[n + i]) ? 0.5 * (1.0 - r * r * iv) : 0.0;
  }
  st.reconstruction = -0.5 * lp;
  if (!std::isfinite(st.reconstruction) || !all_finite(up))
    throw DivergenceError("sample_gradients: non-finite reconstruction term", -1);
  st.kl = gaussian_kl(GaussianParams(mu, lv));
  st.accepted_steps = f.trace.accepted_dts.size();
  st.rejected_steps = f.trace.rejected_steps;
  st.clamp_events = f.trace.clamp_events;

  auto back = mlp_backward(dec, out.cache, up);
  g.decoder += back.params;

  const auto v = flow_vjp(m.hamiltonian, f.trace, f.state, back.input, mode,
                          mode == BackpropMode::Stored ? &tape : nullptr);
  st.peak_states = v.peak_states;
  g.kinetic += v.d_kinetic;
  g.potential += v.d_potential;

  // z₀ = μ + e^{lv/2} ε, plus KL = ½ Σ (e^{lv} + μ² − 1 − lv)
  Vector enc_up(2 * d2);
  for (std::size_t i = 0; i < d2; ++i) {
    enc_up[i] = v.dz0[i] + mu[i];
    enc_up[d2 + i] = detail::clamp_passes(raw[d2 + i])
                         ? v.dz0[i] * 0.5 * sd[i] * eps[i] + 0.5 * (std::exp(lv[i]) - 1.0)
                         : 0.0;
  }
  g.encoder += mlp_backward(m.encoder, enc.cache, enc_up).params;
  return st;
}

/// Single-draw ELBO with given noise, assembled from the model-level operations.
inline double elbo_with_noise(const SgnModel& m, std::span<const double> x, std::span<const double> eps) {
  if (m.exact()) return exact_log_likelihood(m, x);
  const auto q = encode(m, x);
  const PhaseState z0 = reparam_with_noise(q, eps);
  return decode_log_prob(m, flow(m.hamiltonian, z0, m.flow_cfg).state, x) - gaussian_kl(q);
}

class BatchFailure : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct BatchGradients {
  ModelGradients grads;  // mean over the used samples, of −ELBO
  ElboBreakdown mean;
  std::vector<double> sample_elbos;
  std::size_t used = 0;
  std::size_t skipped = 0;
  std::size_t accepted_steps = 0;
  std::size_t rejected_steps = 0;
  std::size_t clamp_events = 0;
  std::size_t peak_states = 0;
};

/// Minibatch-mean gradients of −ELBO. Samples whose flow diverges are skipped and
/// counted; more than 10% skipped fails the batch.
inline BatchGradients elbo_gradients(const SgnModel& m, std::span<const Vector> batch, Rng& rng,
                                     BackpropMode mode) {
  if (batch.empty()) throw std::invalid_argument("elbo_gradients: empty batch");
  BatchGradients r;
  r.grads = ModelGradients::zeros_like(m);
  const std::size_t d2 = 2 * m.latent_half_dim;
  for (const auto& x : batch) {
    const Vector eps = m.exact() ? Vector{} : rng.standard_normal(d2);
    ModelGradients g = ModelGradients::zeros_like(m);
    SampleStats st;
    try {
      st = sample_gradients(m, x, eps, mode, g);
    } catch (const DivergenceError&) {
      ++r.skipped;
      continue;
    }
    r.grads += g;
    ++r.used;
    r.mean.reconstruction += st.reconstruction;
    r.mean.kl += st.kl;
    r.sample_elbos.push_back(st.reconstruction - st.kl);
    r.accepted_steps += st.accepted_steps;
    r.rejected_steps += st.rejected_steps;
    r.clamp_events += st.clamp_events;
    r.peak_states = std::max(r.peak_states, st.peak_states);
  }
  if (10 * r.skipped > batch.size())
    throw BatchFailure("elbo_gradients: " + std::to_string(r.skipped) + " of " + std::to_string(batch.size()) +
                       " samples diverged");
  const double inv = 1.0 / static_cast<double>(r.used);
  r.grads *= inv;
  r.mean.reconstruction *= inv;
  r.mean.kl *= inv;
  r.mean.elbo = r.mean.reconstruction - r.mean.kl;
  if (const auto* a = std::get_if<ExactAffine>(&m.decoder)) r.mean.logdet_correction = -affine_log_abs_det(*a);
  return r;
}

// ---------------------------------------------------------------------------
// Optimizers

struct OptimizerState {
  Vector m, v;  // Adam moments
  std::size_t t = 0;
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

class Optimizer {
public:
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  Optimizer(OptimizerKind kind, double lr, OptimizerState state = {})
      : kind_(kind), lr_(lr), s_(std::move(state)) {}

  void step(Vector& params, std::span<const double> grad) {
    require_same_size(params.size(), grad.size(), "Optimizer::step");
    if (kind_ == OptimizerKind::Sgd) {
      for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr_ * grad[i];
      return;
    }
    if (s_.m.empty()) {
      s_.m.assign(params.size(), 0.0);
      s_.v.assign(params.size(), 0.0);
    }
    require_same_size(s_.m.size(), params.size(), "Adam moments");
    ++s_.t;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(s_.t));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(s_.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      s_.m[i] = kBeta1 * s_.m[i] + (1.0 - kBeta1) * grad[i];
      s_.v[i] = kBeta2 * s_.v[i] + (1.0 - kBeta2) * grad[i] * grad[i];
      params[i] -= lr_ * (s_.m[i] / c1) / (std::sqrt(s_.v[i] / c2) + kEps);
    }
  }

  const OptimizerState& state() const noexcept { return s_; }

private:
  OptimizerKind kind_;
  double lr_;
  OptimizerState s_;
};

/// Rescales g so that ‖g‖₂ ≤ max_norm; returns the norm before clipping.
inline double clip_global_norm(Vector& g, double max_norm) {
  const double n = norm2(g);
  if (n > max_norm && n > 0.0)
    for (auto& x : g) x *= max_norm / n;
  return n;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  double learning_rate = 1e-3;
  std::optional<double> lipschitz_elbo;  // L
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  BackpropMode backprop_mode = BackpropMode::Reversible;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::optional<double> grad_clip = 10.0;
  std::size_t spectral_iters = 20;

  /// The η < 2/L guard is a gradient-descent result and applies to Sgd only.
  bool lr_guard_applies() const { return optimizer == OptimizerKind::Sgd && lipschitz_elbo.has_value(); }

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw ConfigError("TrainConfig: learning_rate must be > 0");
    if (lipschitz_elbo && !(*lipschitz_elbo > 0.0)) throw ConfigError("TrainConfig: lipschitz_elbo must be > 0");
    if (lr_guard_applies() && !(learning_rate < 2.0 / *lipschitz_elbo))
      throw ConfigError("TrainConfig: learning rate " + std::to_string(learning_rate) +
                        " violates eta < 2/L = " + std::to_string(2.0 / *lipschitz_elbo));
    if (batch_size == 0) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (grad_clip && !(*grad_clip > 0.0)) throw ConfigError("TrainConfig: grad_clip must be > 0");
    if (spectral_iters == 0) throw ConfigError("TrainConfig: spectral_iters must be >= 1");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double elbo_mean = 0.0;
  double elbo_stderr = 0.0;
  double reconstruction_mean = 0.0;
  double kl_mean = 0.0;
  double mean_accepted_steps = 0.0;
  std::size_t rejected_steps = 0;
  std::size_t clamp_events = 0;
  std::size_t skipped_samples = 0;
  std::size_t failed_batches = 0;
  std::size_t peak_states = 0;
  double wall_time_s = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
};

/// Everything needed to continue a run exactly where it stopped.
struct TrainState {
  SgnModel model;
  OptimizerState optimizer;
  Rng::State rng;
  std::size_t epochs_done = 0;
};

struct TrainResult {
  SgnModel model;
  TrainLog log;
  TrainState state;
};

class TrainingAborted : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void renormalize(SgnModel& m, const TrainConfig& cfg, std::size_t& clamps) {
  auto& h = m.hamiltonian;
  if (h.kinetic.spectral_cap) h.kinetic = spectral_normalize(h.kinetic, cfg.spectral_iters).net;
  if (h.potential.spectral_cap) h.potential = spectral_normalize(h.potential, cfg.spectral_iters).net;
  // Keep the step-size guard in sync with the updated Hamiltonian.
  if (m.flow_cfg.stability_bound) {
    m.flow_cfg.stability_bound = lipschitz_bound(h);
    if (m.flow_cfg.initial_dt >= m.flow_cfg.max_stable_dt()) {
      m.flow_cfg.initial_dt = 0.95 * m.flow_cfg.max_stable_dt();
      m.flow_cfg.max_steps = std::max<std::size_t>(
          m.flow_cfg.max_steps,
          static_cast<std::size_t>(std::ceil(m.flow_cfg.total_time / m.flow_cfg.initial_dt)) + 1);
      ++clamps;
    }
  }
}

}  // namespace detail

/// Continues a run from `start` until cfg.epochs epochs are done in total.
inline TrainResult train_from(TrainState start, std::span<const Vector> data, const TrainConfig& cfg) {
  cfg.validate();
  start.model.validate();
  for (const auto& x : data) require_same_size(x.size(), start.model.data_dim, "train data");
  TrainResult out;
  if (start.epochs_done >= cfg.epochs) {
    out.model = start.model;
    out.state = std::move(start);
    return out;
  }
  if (data.empty()) throw std::invalid_argument("train: empty dataset");

  SgnModel m = std::move(start.model);
  Rng rng = Rng::from_state(start.rng);
  Optimizer opt(cfg.optimizer, cfg.learning_rate, std::move(start.optimizer));
  std::vector<std::size_t> order(data.size());
  std::size_t consecutive_failures = 0;

  for (std::size_t epoch = start.epochs_done; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double sum = 0.0, sum_sq = 0.0, recon = 0.0, kl = 0.0;
    std::size_t count = 0, steps = 0, flows = 0;
    std::vector<Vector> batch;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      batch.clear();
      for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch_size); ++i) batch.push_back(data[order[i]]);
      BatchGradients bg;
      try {
        bg = elbo_gradients(m, batch, rng, cfg.backprop_mode);
      } catch (const BatchFailure& e) {
        ++rec.failed_batches;
        if (++consecutive_failures > 3)
          throw TrainingAborted("training aborted at epoch " + std::to_string(epoch) + ", batch " +
                                std::to_string(b / cfg.batch_size) + " after " +
                                std::to_string(consecutive_failures) + " consecutive failed batches: " + e.what());
        continue;
      }
      consecutive_failures = 0;
      rec.skipped_samples += bg.skipped;
      rec.rejected_steps += bg.rejected_steps;
      rec.clamp_events += bg.clamp_events;
      rec.peak_states = std::max(rec.peak_states, bg.peak_states);
      for (double e : bg.sample_elbos) {
        sum += e;
        sum_sq += e * e;
      }
      recon += bg.mean.reconstruction * static_cast<double>(bg.used);
      kl += bg.mean.kl * static_cast<double>(bg.used);
      count += bg.used;
      steps += bg.accepted_steps;
      flows += bg.used;

      Vector g = bg.grads.flat();
      if (cfg.grad_clip) clip_global_norm(g, *cfg.grad_clip);
      Vector params = flatten_params(m);
      opt.step(params, g);
      unflatten_params(m, params);
    }
    detail::renormalize(m, cfg, rec.clamp_events);

    if (count > 0) {
      const double n = static_cast<double>(count);
      rec.elbo_mean = sum / n;
      rec.reconstruction_mean = recon / n;
      rec.kl_mean = kl / n;
      const double var = count > 1 ? std::max(0.0, (sum_sq - n * rec.elbo_mean * rec.elbo_mean) / (n - 1.0)) : 0.0;
      rec.elbo_stderr = std::sqrt(var / n);
      rec.mean_accepted_steps = static_cast<double>(steps) / static_cast<double>(flows);
    } else {
      rec.elbo_mean = rec.reconstruction_mean = rec.kl_mean = std::numeric_limits<double>::quiet_NaN();
    }
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.log.epochs.push_back(rec);
  }
  out.model = m;
  out.state = TrainState{std::move(m), opt.state(), rng.state(), cfg.epochs};
  return out;
}

inline TrainResult train(const SgnModel& m, std::span<const Vector> data, const TrainConfig& cfg) {
  return train_from(TrainState{m, {}, Rng(cfg.seed).state(), 0}, data, cfg);
}

}  // namespace sgn
