#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>

#include "sgn/net.hpp"

namespace sgn {

/// H_ψ(q, p) = K_ψ(p) + V_ψ(q) with two scalar-output MLPs on R^d.
struct SeparableHamiltonianNet {
  MlpParams kinetic;
  MlpParams potential;

  SeparableHamiltonianNet() = default;
  SeparableHamiltonianNet(MlpParams k, MlpParams v) : kinetic(std::move(k)), potential(std::move(v)) {
    validate();
  }

  /// Both sub-networks d → width (×depth−1 hidden layers) → 1.
  static SeparableHamiltonianNet init(std::size_t d, std::size_t width, std::size_t depth,
                                      Activation act, Rng& rng,
                                      std::optional<double> cap = std::nullopt) {
    std::vector<std::size_t> dims{d};
    for (std::size_t i = 0; i + 1 < depth; ++i) dims.push_back(width);
    dims.push_back(1);
    auto k = MlpParams::init(dims, act, rng, cap);
    auto v = MlpParams::init(dims, act, rng, cap);
    return {std::move(k), std::move(v)};
  }

  void validate() const {
    kinetic.validate();
    potential.validate();
    if (kinetic.output_dim() != 1 || potential.output_dim() != 1)
      throw ConfigError("SeparableHamiltonianNet: sub-networks must have scalar output");
    require_same_size(kinetic.input_dim(), potential.input_dim(), "SeparableHamiltonianNet input dims");
  }

  std::size_t dim() const noexcept { return kinetic.input_dim(); }
  bool separable() const noexcept { return true; }

  double value(const Vector& q, const Vector& p) const {
    return mlp_scalar(kinetic, p) + mlp_scalar(potential, q);
  }
  Vector grad_q(const Vector& q, const Vector& /*p*/) const { return mlp_input_grad(potential, q); }
  Vector grad_p(const Vector& /*q*/, const Vector& p) const { return mlp_input_grad(kinetic, p); }

  friend bool operator==(const SeparableHamiltonianNet&, const SeparableHamiltonianNet&) = default;
};

/// Stability constants for the step-size guard Δt < 2/√L_H.
struct StabilityEstimate {
  double curvature_q = 0.0;  // bound on ‖∇²V‖
  double curvature_p = 0.0;  // bound on ‖∇²K‖
  double surrogate = 0.0;    // curvature_q · curvature_p
  std::optional<double> sigma_power;  // (σ^L)² when both nets carry a spectral cap
  double chosen = 0.0;       // smaller of the available bounds

  double max_dt() const {
    return chosen > 0.0 ? 2.0 / std::sqrt(chosen) : std::numeric_limits<double>::infinity();
  }
};

inline StabilityEstimate stability_estimate(const SeparableHamiltonianNet& h, std::size_t iters = 100) {
  StabilityEstimate e;
  auto norms = [&](const MlpParams& net) {
    std::vector<double> out;
    for (const auto& w : net.weights) out.push_back(spectral_norm_estimate(w, iters));
    return out;
  };
  e.curvature_q = hessian_norm_bound(h.potential, norms(h.potential));
  e.curvature_p = hessian_norm_bound(h.kinetic, norms(h.kinetic));
  e.surrogate = e.curvature_q * e.curvature_p;
  e.chosen = e.surrogate;
  if (h.kinetic.spectral_cap && h.potential.spectral_cap) {
    const double sigma = std::max(*h.kinetic.spectral_cap, *h.potential.spectral_cap);
    const auto layers = std::max(h.kinetic.num_layers(), h.potential.num_layers());
    const double sl = std::pow(sigma, static_cast<double>(layers));
    e.sigma_power = sl * sl;
    e.chosen = std::min(e.surrogate, *e.sigma_power);
  }
  return e;
}

/// Conservative L_H for the integrator's stability guard.
inline double lipschitz_bound(const SeparableHamiltonianNet& h) { return stability_estimate(h).chosen; }

}  // namespace sgn
