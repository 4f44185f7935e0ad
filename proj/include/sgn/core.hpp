#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgn {

using Vector = std::vector<double>;

/// Thrown when operand shapes disagree.
class DimensionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown for configurations that violate a guard (step size, learning rate, ...).
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// A flow produced a non-finite coordinate. `step()` is the index of the
/// leapfrog step that failed (or -1 when unknown).
class DivergenceError : public std::runtime_error {
public:
  DivergenceError(const std::string& what, long step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  long step() const noexcept { return step_; }

private:
  long step_;
};

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b)
    throw DimensionError(std::string(what) + ": size " + std::to_string(a) + " != " +
                         std::to_string(b));
}

/// Point z = (q, p) of a 2d-dimensional canonical phase space.
class PhaseState {
public:
  PhaseState() = default;

  PhaseState(Vector q, Vector p) : q_(std::move(q)), p_(std::move(p)) {
    if (q_.empty()) throw DimensionError("PhaseState: dimension must be >= 1");
    require_same_size(q_.size(), p_.size(), "PhaseState q/p");
    if (!all_finite(q_) || !all_finite(p_))
      throw std::invalid_argument("PhaseState: non-finite coordinate");
  }

  /// Splits a flat vector of length 2d into (first d, last d).
  static PhaseState from_flat(std::span<const double> z) {
    if (z.size() % 2 != 0 || z.empty())
      throw DimensionError("PhaseState::from_flat: length must be even and positive");
    const std::size_t d = z.size() / 2;
    return PhaseState(Vector(z.begin(), z.begin() + d), Vector(z.begin() + d, z.end()));
  }

  // Unchecked construction for hot loops; the caller guarantees equal sizes.
  static PhaseState unchecked(Vector q, Vector p) {
    PhaseState s;
    s.q_ = std::move(q);
    s.p_ = std::move(p);
    return s;
  }

  std::size_t dim() const noexcept { return q_.size(); }
  const Vector& q() const noexcept { return q_; }
  const Vector& p() const noexcept { return p_; }
  Vector& q() noexcept { return q_; }
  Vector& p() noexcept { return p_; }

  Vector flat() const {
    Vector z(q_);
    z.insert(z.end(), p_.begin(), p_.end());
    return z;
  }

  bool finite() const noexcept { return all_finite(q_) && all_finite(p_); }

  friend bool operator==(const PhaseState&, const PhaseState&) = default;

private:
  Vector q_;
  Vector p_;
};

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Euclidean distance between two states in R^{2d}.
inline double distance(const PhaseState& a, const PhaseState& b) {
  require_same_size(a.dim(), b.dim(), "distance");
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    const double dq = a.q()[i] - b.q()[i];
    const double dp = a.p()[i] - b.p()[i];
    s += dq * dq + dp * dp;
  }
  return std::sqrt(s);
}

inline double max_abs_diff(const PhaseState& a, const PhaseState& b) {
  require_same_size(a.dim(), b.dim(), "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    m = std::max(m, std::abs(a.q()[i] - b.q()[i]));
    m = std::max(m, std::abs(a.p()[i] - b.p()[i]));
  }
  return m;
}

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

}  // namespace sgn
