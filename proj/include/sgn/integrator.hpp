#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sgn/analytic.hpp"
#include "sgn/core.hpp"

namespace sgn {

namespace testing {
/// Mutation hook used by the verification self-test: when set, the closing half-kick
/// of every leapfrog step is applied with the wrong sign.
inline std::atomic<bool> flip_second_half_kick{false};
}  // namespace testing

enum class StepMode { Fixed, Adaptive };

struct FlowConfig {
  double total_time = 1.0;
  double initial_dt = 0.1;
  StepMode mode = StepMode::Fixed;
  double tolerance = 1e-6;                // used in Adaptive mode
  std::optional<double> stability_bound;  // L_H
  std::size_t max_steps = 1'000'000;
  std::size_t error_check_every = 1;      // adaptive: estimate the local error every k steps

  friend bool operator==(const FlowConfig&, const FlowConfig&) = default;

  /// 2/√L_H, or +∞ without a bound.
  double max_stable_dt() const {
    if (!stability_bound || *stability_bound <= 0.0) return std::numeric_limits<double>::infinity();
    return 2.0 / std::sqrt(*stability_bound);
  }

  void validate() const {
    if (!(total_time > 0.0) || !std::isfinite(total_time))
      throw ConfigError("FlowConfig: total_time must be > 0");
    if (!(initial_dt > 0.0) || !std::isfinite(initial_dt))
      throw ConfigError("FlowConfig: initial_dt must be > 0");
    if (mode == StepMode::Adaptive && !(tolerance > 0.0))
      throw ConfigError("FlowConfig: adaptive tolerance must be > 0");
    if (stability_bound && !(*stability_bound >= 0.0))
      throw ConfigError("FlowConfig: stability_bound must be >= 0");
    if (initial_dt >= max_stable_dt())
      throw ConfigError("FlowConfig: initial_dt " + std::to_string(initial_dt) +
                        " violates the stability guard dt < 2/sqrt(L_H) = " +
                        std::to_string(max_stable_dt()));
    if (error_check_every == 0) throw ConfigError("FlowConfig: error_check_every must be >= 1");
    const double needed = std::ceil(total_time / initial_dt - 1e-9);
    if (static_cast<double>(max_steps) < needed)
      throw ConfigError("FlowConfig: max_steps below ceil(T/dt0)");
  }

  static FlowConfig fixed(double t, double dt) {
    FlowConfig c;
    c.total_time = t;
    c.initial_dt = dt;
    c.max_steps = std::max<std::size_t>(c.max_steps, static_cast<std::size_t>(std::ceil(t / dt)) + 1);
    return c;
  }

  static FlowConfig adaptive(double t, double dt0, double tol) {
    FlowConfig c = fixed(t, dt0);
    c.mode = StepMode::Adaptive;
    c.tolerance = tol;
    return c;
  }
};

/// Audit record of one flow: accepted step sizes and controller activity.
struct StepTrace {
  std::vector<double> accepted_dts;
  std::vector<double> error_estimates;
  std::size_t clamp_events = 0;
  std::size_t rejected_steps = 0;

  double total() const {
    double s = 0.0;
    for (double dt : accepted_dts) s += dt;
    return s;
  }
};

/// One Störmer–Verlet step:
///   p½ = p − dt/2 · ∂H/∂q(q, p)
///   q' = q + dt · ∂H/∂p(q, p½)
///   p' = p½ − dt/2 · ∂H/∂q(q', p½)
/// A negative dt runs the step backwards (the inverse map for separable H).
template <Hamiltonian H>
PhaseState leapfrog_step(const H& h, const PhaseState& z, double dt, long step_index = -1) {
  check_dim(h, z.dim(), "leapfrog_step");
  const std::size_t d = z.dim();
  const double half = 0.5 * dt;

  Vector p_half = z.p();
  {
    const Vector g = h.grad_q(z.q(), z.p());
    for (std::size_t i = 0; i < d; ++i) p_half[i] -= half * g[i];
  }
  Vector q_next = z.q();
  {
    const Vector g = h.grad_p(z.q(), p_half);
    for (std::size_t i = 0; i < d; ++i) q_next[i] += dt * g[i];
  }
  Vector p_next = p_half;
  {
    const Vector g = h.grad_q(q_next, p_half);
    const double kick = testing::flip_second_half_kick.load(std::memory_order_relaxed) ? -half : half;
    for (std::size_t i = 0; i < d; ++i) p_next[i] -= kick * g[i];
  }
  if (!all_finite(q_next) || !all_finite(p_next))
    throw DivergenceError("leapfrog_step: non-finite state", step_index);
  return PhaseState::unchecked(std::move(q_next), std::move(p_next));
}

/// ‖Φ_{2dt}(z) − Φ_dt(Φ_dt(z))‖₂, or +∞ if either branch diverges.
template <Hamiltonian H>
double local_error_estimate(const H& h, const PhaseState& z, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("local_error_estimate: dt must be > 0");
  try {
    const PhaseState big = leapfrog_step(h, z, 2.0 * dt);
    const PhaseState small = leapfrog_step(h, leapfrog_step(h, z, dt), dt);
    return distance(big, small);
  } catch (const DivergenceError&) {
    return std::numeric_limits<double>::infinity();
  }
}

/// Step-size update dt·min(1.5, max(0.5, 0.9·(τ/E)^{1/3})), then the stability clamp
/// dt ← 1.9/√L_H whenever dt ≥ 2/√L_H.
inline double adapt_step(double dt_old, double err, double tol, std::optional<double> lipschitz_h,
                         bool* clamped = nullptr) {
  double factor;
  if (err <= 0.0) factor = 1.5;
  else factor = std::min(1.5, std::max(0.5, 0.9 * std::cbrt(tol / err)));
  double dt = dt_old * factor;
  if (clamped) *clamped = false;
  if (lipschitz_h && *lipschitz_h > 0.0 && dt >= 2.0 / std::sqrt(*lipschitz_h)) {
    dt = 1.9 / std::sqrt(*lipschitz_h);
    if (clamped) *clamped = true;
  }
  return dt;
}

struct FlowResult {
  PhaseState state;
  StepTrace trace;
};

namespace detail {

template <Hamiltonian H>
FlowResult flow_fixed(const H& h, PhaseState z, const FlowConfig& cfg) {
  const auto n = static_cast<std::size_t>(std::max(1.0, std::round(cfg.total_time / cfg.initial_dt)));
  if (n > cfg.max_steps) throw std::runtime_error("flow: max_steps exceeded");
  const double dt = cfg.total_time / static_cast<double>(n);
  FlowResult out{std::move(z), {}};
  out.trace.accepted_dts.assign(n, dt);
  for (std::size_t i = 0; i < n; ++i) out.state = leapfrog_step(h, out.state, dt, static_cast<long>(i));
  return out;
}

template <Hamiltonian H>
FlowResult flow_adaptive(const H& h, PhaseState z, const FlowConfig& cfg) {
  FlowResult out{std::move(z), {}};
  auto& trace = out.trace;
  const double total = cfg.total_time;
  double dt = cfg.initial_dt;
  double t = 0.0;
  std::size_t since_check = 0;
  // Rejections are bounded separately so a pathological controller cannot spin forever.
  const std::size_t max_rejections = 64 * cfg.max_steps;

  while (true) {
    const double remaining = total - t;
    if (remaining <= 1e-14 * total) break;
    // Land exactly on T: take the remainder when the step would overshoot or leave a sliver.
    const bool last = dt >= remaining * (1.0 - 1e-12);
    const double h_step = last ? remaining : dt;

    if (since_check % cfg.error_check_every == 0) {
      const double err = local_error_estimate(h, out.state, h_step);
      bool clamped = false;
      const double proposed = adapt_step(h_step, err, cfg.tolerance, cfg.stability_bound, &clamped);
      if (clamped) ++trace.clamp_events;
      if (err > cfg.tolerance) {
        if (++trace.rejected_steps > max_rejections)
          throw std::runtime_error("flow: step-size controller failed to converge");
        dt = proposed;
        continue;
      }
      trace.error_estimates.push_back(err);
      out.state = leapfrog_step(h, out.state, h_step, static_cast<long>(trace.accepted_dts.size()));
      trace.accepted_dts.push_back(h_step);
      if (!last) dt = proposed;
    } else {
      out.state = leapfrog_step(h, out.state, h_step, static_cast<long>(trace.accepted_dts.size()));
      trace.accepted_dts.push_back(h_step);
    }
    ++since_check;
    if (trace.accepted_dts.size() > cfg.max_steps) throw std::runtime_error("flow: max_steps exceeded");
    if (last) {
      t = total;
      break;
    }
    t += h_step;
  }
  return out;
}

}  // namespace detail

/// Discrete flow map Φ_T. Fixed mode takes N = round(T/Δt₀) equal steps of T/N;
/// adaptive mode runs the error-controlled step-size loop with rejection.
template <Hamiltonian H>
FlowResult flow(const H& h, const PhaseState& z0, const FlowConfig& cfg) {
  cfg.validate();
  check_dim(h, z0.dim(), "flow");
  if (cfg.mode == StepMode::Fixed) return detail::flow_fixed(h, z0, cfg);
  return detail::flow_adaptive(h, z0, cfg);
}

/// Replays a step schedule backwards with negated step sizes.
template <Hamiltonian H>
PhaseState inverse_flow(const H& h, const PhaseState& zT, std::span<const double> accepted_dts) {
  PhaseState z = zT;
  for (std::size_t i = accepted_dts.size(); i-- > 0;)
    z = leapfrog_step(h, z, -accepted_dts[i], static_cast<long>(i));
  return z;
}

/// Applies a schedule forwards (no step-size control).
template <Hamiltonian H>
PhaseState flow_with_schedule(const H& h, const PhaseState& z0, std::span<const double> dts) {
  PhaseState z = z0;
  for (std::size_t i = 0; i < dts.size(); ++i) z = leapfrog_step(h, z, dts[i], static_cast<long>(i));
  return z;
}

/// Step schedule of a Fixed-mode config without running the flow.
inline std::vector<double> fixed_schedule(const FlowConfig& cfg) {
  const auto n = static_cast<std::size_t>(std::max(1.0, std::round(cfg.total_time / cfg.initial_dt)));
  return std::vector<double>(n, cfg.total_time / static_cast<double>(n));
}

}  // namespace sgn
