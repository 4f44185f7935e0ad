#pragma once

#include <cmath>
#include <concepts>
#include <optional>
#include <string>
#include <utility>
#include <variant>

#include "sgn/core.hpp"
#include "sgn/matrix.hpp"

namespace sgn {

/// Anything the integrator can evolve. `dim()` is the half-dimension d, or 0 when the
/// Hamiltonian accepts any d.
template <class H>
concept Hamiltonian = requires(const H& h, const Vector& q, const Vector& p) {
  { h.dim() } -> std::convertible_to<std::size_t>;
  { h.value(q, p) } -> std::convertible_to<double>;
  { h.grad_q(q, p) } -> std::same_as<Vector>;
  { h.grad_p(q, p) } -> std::same_as<Vector>;
  { h.separable() } -> std::convertible_to<bool>;
};

template <Hamiltonian H>
void check_dim(const H& h, std::size_t d, const char* where) {
  if (h.dim() != 0 && h.dim() != d)
    throw DimensionError(std::string(where) + ": Hamiltonian expects d=" +
                         std::to_string(h.dim()) + ", state has d=" + std::to_string(d));
}

struct ConstantH {
  double c = 0.0;
};
struct FreeParticleH {};
struct HarmonicOscillatorH {
  double omega = 1.0;
};
/// H(z) = ½ zᵀ A z with A symmetric of size 2d.
struct QuadraticH {
  Matrix a;
};
/// H = Σ_i p_i² / (2 m l²) + m g l (1 − cos q_i)
struct PendulumH {
  double mass = 1.0;
  double length = 1.0;
  double gravity = 1.0;
};

/// Closed-form reference Hamiltonians.
class AnalyticHamiltonian {
public:
  using Kind = std::variant<ConstantH, FreeParticleH, HarmonicOscillatorH, QuadraticH, PendulumH>;

  explicit AnalyticHamiltonian(Kind kind) : kind_(std::move(kind)) { validate(); }

  static AnalyticHamiltonian constant(double c) { return AnalyticHamiltonian(ConstantH{c}); }
  static AnalyticHamiltonian free_particle() { return AnalyticHamiltonian(FreeParticleH{}); }
  static AnalyticHamiltonian harmonic(double omega) {
    return AnalyticHamiltonian(HarmonicOscillatorH{omega});
  }
  static AnalyticHamiltonian quadratic(Matrix a) { return AnalyticHamiltonian(QuadraticH{std::move(a)}); }
  static AnalyticHamiltonian pendulum(double m = 1.0, double l = 1.0, double g = 1.0) {
    return AnalyticHamiltonian(PendulumH{m, l, g});
  }

  const Kind& kind() const noexcept { return kind_; }

  std::string name() const {
    return std::visit(
        [](const auto& k) -> std::string {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, ConstantH>) return "constant";
          else if constexpr (std::is_same_v<K, FreeParticleH>) return "free_particle";
          else if constexpr (std::is_same_v<K, HarmonicOscillatorH>) return "harmonic_oscillator";
          else if constexpr (std::is_same_v<K, QuadraticH>) return "quadratic";
          else return "pendulum";
        },
        kind_);
  }

  std::size_t dim() const noexcept {
    if (const auto* quad = std::get_if<QuadraticH>(&kind_)) return quad->a.rows() / 2;
    return 0;
  }

  /// False only for a Quadratic with nonzero q–p coupling blocks.
  bool separable() const noexcept {
    const auto* quad = std::get_if<QuadraticH>(&kind_);
    if (!quad) return true;
    const std::size_t d = quad->a.rows() / 2;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        if (quad->a(i, d + j) != 0.0) return false;
    return true;
  }

  double value(const Vector& q, const Vector& p) const {
    check(q, p);
    return std::visit(
        [&](const auto& k) -> double {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, ConstantH>) {
            return k.c;
          } else if constexpr (std::is_same_v<K, FreeParticleH>) {
            return 0.5 * dot(p, p);
          } else if constexpr (std::is_same_v<K, HarmonicOscillatorH>) {
            return 0.5 * dot(p, p) + 0.5 * k.omega * k.omega * dot(q, q);
          } else if constexpr (std::is_same_v<K, QuadraticH>) {
            Vector z(q);
            z.insert(z.end(), p.begin(), p.end());
            return 0.5 * dot(z, matvec(k.a, z));
          } else {
            const double ml2 = k.mass * k.length * k.length;
            double h = 0.0;
            for (std::size_t i = 0; i < q.size(); ++i)
              h += p[i] * p[i] / (2.0 * ml2) + k.mass * k.gravity * k.length * (1.0 - std::cos(q[i]));
            return h;
          }
        },
        kind_);
  }

  Vector grad_q(const Vector& q, const Vector& p) const {
    check(q, p);
    return std::visit(
        [&](const auto& k) -> Vector {
          using K = std::decay_t<decltype(k)>;
          Vector g(q.size(), 0.0);
          if constexpr (std::is_same_v<K, HarmonicOscillatorH>) {
            for (std::size_t i = 0; i < q.size(); ++i) g[i] = k.omega * k.omega * q[i];
          } else if constexpr (std::is_same_v<K, QuadraticH>) {
            const std::size_t d = q.size();
            for (std::size_t i = 0; i < d; ++i) {
              double s = 0.0;
              for (std::size_t j = 0; j < d; ++j) s += k.a(i, j) * q[j] + k.a(i, d + j) * p[j];
              g[i] = s;
            }
          } else if constexpr (std::is_same_v<K, PendulumH>) {
            for (std::size_t i = 0; i < q.size(); ++i)
              g[i] = k.mass * k.gravity * k.length * std::sin(q[i]);
          }
          return g;
        },
        kind_);
  }

  Vector grad_p(const Vector& q, const Vector& p) const {
    check(q, p);
    return std::visit(
        [&](const auto& k) -> Vector {
          using K = std::decay_t<decltype(k)>;
          Vector g(p.size(), 0.0);
          if constexpr (std::is_same_v<K, FreeParticleH> || std::is_same_v<K, HarmonicOscillatorH>) {
            g = p;
          } else if constexpr (std::is_same_v<K, QuadraticH>) {
            const std::size_t d = q.size();
            for (std::size_t i = 0; i < d; ++i) {
              double s = 0.0;
              for (std::size_t j = 0; j < d; ++j) s += k.a(d + i, j) * q[j] + k.a(d + i, d + j) * p[j];
              g[i] = s;
            }
          } else if constexpr (std::is_same_v<K, PendulumH>) {
            const double ml2 = k.mass * k.length * k.length;
            for (std::size_t i = 0; i < p.size(); ++i) g[i] = p[i] / ml2;
          }
          return g;
        },
        kind_);
  }

  /// L_q·L_p + L_qp·L_pq from the gradient Lipschitz constants; the leapfrog step is
  /// stable for Δt < 2/√(this). Quadratic blocks use Frobenius norms (an upper bound).
  double stability_constant() const {
    return std::visit(
        [](const auto& k) -> double {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, HarmonicOscillatorH>) {
            return k.omega * k.omega;
          } else if constexpr (std::is_same_v<K, PendulumH>) {
            return k.gravity / k.length;
          } else if constexpr (std::is_same_v<K, QuadraticH>) {
            const std::size_t d = k.a.rows() / 2;
            auto block = [&](std::size_t r0, std::size_t c0) {
              double s = 0.0;
              for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) s += k.a(r0 + i, c0 + j) * k.a(r0 + i, c0 + j);
              return std::sqrt(s);
            };
            return block(0, 0) * block(d, d) + block(0, d) * block(d, 0);
          } else {
            return 0.0;
          }
        },
        kind_);
  }

  /// Exact time-t flow where a closed form exists (FreeParticle, HarmonicOscillator, Constant).
  std::optional<PhaseState> exact_flow(const PhaseState& z, double t) const {
    if (std::holds_alternative<ConstantH>(kind_)) return z;
    if (std::holds_alternative<FreeParticleH>(kind_)) {
      Vector q = z.q();
      for (std::size_t i = 0; i < q.size(); ++i) q[i] += t * z.p()[i];
      return PhaseState(std::move(q), z.p());
    }
    if (const auto* ho = std::get_if<HarmonicOscillatorH>(&kind_)) {
      const double w = ho->omega, c = std::cos(w * t), s = std::sin(w * t);
      Vector q(z.dim()), p(z.dim());
      for (std::size_t i = 0; i < z.dim(); ++i) {
        q[i] = z.q()[i] * c + z.p()[i] / w * s;
        p[i] = -z.q()[i] * w * s + z.p()[i] * c;
      }
      return PhaseState(std::move(q), std::move(p));
    }
    return std::nullopt;
  }

private:
  void validate() const {
    if (const auto* ho = std::get_if<HarmonicOscillatorH>(&kind_)) {
      if (!(ho->omega > 0.0)) throw ConfigError("HarmonicOscillator requires omega > 0");
    }
    if (const auto* quad = std::get_if<QuadraticH>(&kind_)) {
      const auto& a = quad->a;
      if (a.rows() != a.cols() || a.rows() == 0 || a.rows() % 2 != 0)
        throw DimensionError("Quadratic requires a square matrix of even size 2d");
      for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < i; ++j)
          if (std::abs(a(i, j) - a(j, i)) > 1e-12) throw ConfigError("Quadratic matrix is not symmetric");
    }
    if (const auto* pen = std::get_if<PendulumH>(&kind_)) {
      if (!(pen->mass > 0.0 && pen->length > 0.0 && pen->gravity > 0.0))
        throw ConfigError("Pendulum requires m, l, g > 0");
    }
  }

  void check(const Vector& q, const Vector& p) const {
    require_same_size(q.size(), p.size(), "AnalyticHamiltonian q/p");
    if (dim() != 0) require_same_size(q.size(), dim(), "AnalyticHamiltonian dimension");
  }

  Kind kind_;
};

inline double analytic_value(const AnalyticHamiltonian& h, const PhaseState& z) {
  return h.value(z.q(), z.p());
}

/// (∂H/∂q, ∂H/∂p)
inline std::pair<Vector, Vector> analytic_grad(const AnalyticHamiltonian& h, const PhaseState& z) {
  return {h.grad_q(z.q(), z.p()), h.grad_p(z.q(), z.p())};
}

template <Hamiltonian H>
double energy(const H& h, const PhaseState& z) {
  return h.value(z.q(), z.p());
}

}  // namespace sgn
