#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <queue>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgn/train.hpp"

namespace sgn {

using ordered_json = nlohmann::ordered_json;

/// Outcome of one numerical property check. `measured` and `context` are flat JSON
/// objects; key order is fixed by the check so serialized reports diff cleanly.
struct VerifyReport {
  std::string name;
  std::string property;
  ordered_json measured = ordered_json::object();
  double tolerance = 0.0;
  bool pass = false;
  ordered_json context = ordered_json::object();
  std::string note;

  ordered_json to_json() const {
    ordered_json j;
    j["name"] = name;
    j["property"] = property;
    j["measured"] = measured;
    j["tolerance"] = tolerance;
    j["pass"] = pass;
    j["context"] = context;
    j["note"] = note;
    return j;
  }

  static VerifyReport from_json(const ordered_json& j) {
    VerifyReport r;
    r.name = j.at("name").get<std::string>();
    r.property = j.at("property").get<std::string>();
    r.measured = j.at("measured");
    r.tolerance = j.at("tolerance").get<double>();
    r.pass = j.at("pass").get<bool>();
    r.context = j.at("context");
    r.note = j.at("note").get<std::string>();
    return r;
  }

  friend bool operator==(const VerifyReport& a, const VerifyReport& b) { return a.to_json() == b.to_json(); }
};

inline VerifyReport make_report(std::string name, std::string property) {
  VerifyReport r;
  r.name = std::move(name);
  r.property = std::move(property);
  return r;
}

inline constexpr double kFiniteDifferenceStep = 1e-5;

/// Dense central-difference Jacobian of a map R^n → R^m.
inline Matrix finite_difference_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x,
                                         double h = kFiniteDifferenceStep) {
  const Vector y0 = f(x);
  Matrix jac(y0.size(), x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    Vector xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    const Vector yp = f(xp), ym = f(xm);
    for (std::size_t i = 0; i < y0.size(); ++i) jac(i, j) = (yp[i] - ym[i]) / (2.0 * h);
  }
  return jac;
}

/// ‖a − b‖₂ / max(‖a‖₂, ‖b‖₂, floor)
inline double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-6) {
  require_same_size(a.size(), b.size(), "relative_error");
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(diff) / std::max({norm2(a), norm2(b), floor});
}

/// Least-squares slope of log y against log x.
inline double loglog_slope(std::span<const double> x, std::span<const double> y) {
  require_same_size(x.size(), y.size(), "loglog_slope");
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

namespace detail {

template <Hamiltonian H>
ordered_json hamiltonian_context(const H& h, std::size_t d) {
  ordered_json c;
  if constexpr (std::is_same_v<H, AnalyticHamiltonian>) c["hamiltonian"] = h.name();
  else c["hamiltonian"] = "neural";
  c["d"] = d;
  return c;
}

template <Hamiltonian H>
Matrix flow_jacobian(const H& h, const PhaseState& z0, const FlowConfig& cfg) {
  return finite_difference_jacobian(
      [&](const Vector& z) { return flow(h, PhaseState::from_flat(z), cfg).state.flat(); }, z0.flat());
}

inline void add_flow_context(ordered_json& c, const FlowConfig& cfg) {
  c["T"] = cfg.total_time;
  c["dt"] = cfg.initial_dt;
  c["mode"] = cfg.mode == StepMode::Fixed ? "fixed" : "adaptive";
  if (cfg.mode == StepMode::Fixed) c["N"] = fixed_schedule(cfg).size();
}

}  // namespace detail

template <Hamiltonian H>
VerifyReport check_unit_jacobian(const H& h, const PhaseState& z0, const FlowConfig& cfg) {
  if (2 * z0.dim() > 16) throw ConfigError("check_unit_jacobian: dense Jacobian limited to 2d <= 16");
  auto r = make_report("unit_jacobian", "the flow map has unit Jacobian determinant");
  const double det = lu_det(detail::flow_jacobian(h, z0, cfg));
  r.measured["det"] = det;
  r.measured["abs_det_minus_one"] = std::abs(det - 1.0);
  r.tolerance = 1e-5;
  r.pass = std::abs(det - 1.0) < r.tolerance;
  r.context = detail::hamiltonian_context(h, z0.dim());
  detail::add_flow_context(r.context, cfg);
  r.context["fd_step"] = kFiniteDifferenceStep;
  return r;
}

template <Hamiltonian H>
VerifyReport check_symplectic_form(const H& h, const PhaseState& z0, const FlowConfig& cfg) {
  if (2 * z0.dim() > 16) throw ConfigError("check_symplectic_form: dense Jacobian limited to 2d <= 16");
  auto r = make_report("symplectic_form", "the flow Jacobian preserves the canonical form, D^T J D = J");
  const Matrix d = detail::flow_jacobian(h, z0, cfg);
  const Matrix j = canonical_j(z0.dim());
  Matrix diff = d.transpose() * j * d;
  for (std::size_t a = 0; a < diff.rows(); ++a)
    for (std::size_t b = 0; b < diff.cols(); ++b) diff(a, b) -= j(a, b);
  const double err = max_abs(diff);
  r.measured["max_abs_deviation"] = err;
  r.tolerance = 1e-5;
  r.pass = err < r.tolerance;
  r.context = detail::hamiltonian_context(h, z0.dim());
  detail::add_flow_context(r.context, cfg);
  r.context["fd_step"] = kFiniteDifferenceStep;
  return r;
}

template <Hamiltonian H>
VerifyReport check_reversibility(const H& h, const PhaseState& z0, const FlowConfig& cfg) {
  auto r = make_report("reversibility", "running the step schedule backwards recovers the initial state");
  const auto f = flow(h, z0, cfg);
  const PhaseState back = inverse_flow(h, f.state, f.trace.accepted_dts);
  const double err = max_abs_diff(back, z0);
  r.measured["round_trip_inf_error"] = err;
  r.measured["steps"] = f.trace.accepted_dts.size();
  r.tolerance = 1e-9;
  r.pass = err < r.tolerance;
  r.context = detail::hamiltonian_context(h, z0.dim());
  detail::add_flow_context(r.context, cfg);
  if (cfg.total_time > 10.0) r.note = "tolerance is stated for T <= 10";
  return r;
}

/// Max energy error per step size over `steps` steps, the halving ratios between
/// consecutive step sizes related by a factor of two, and a growth test comparing the
/// second half of each run with the first.
template <Hamiltonian H>
VerifyReport check_energy_drift(const H& h, const PhaseState& z0, std::span<const double> dt_list, std::size_t steps) {
  if (dt_list.empty() || steps < 2) throw ConfigError("check_energy_drift: need step sizes and >= 2 steps");
  auto r = make_report("energy_drift", "energy error of the discrete flow scales as dt^2 and stays bounded");
  const double e0 = h.value(z0.q(), z0.p());
  ordered_json drifts = ordered_json::array(), growth = ordered_json::array(), ratios = ordered_json::array();
  std::vector<double> maxd;
  bool bounded = true;
  for (double dt : dt_list) {
    PhaseState z = z0;
    double first = 0.0, second = 0.0;
    for (std::size_t i = 0; i < steps; ++i) {
      z = leapfrog_step(h, z, dt, static_cast<long>(i));
      const double e = std::abs(h.value(z.q(), z.p()) - e0);
      (i < steps / 2 ? first : second) = std::max(i < steps / 2 ? first : second, e);
    }
    // Monotone secular growth would make the late half markedly worse than the early one.
    const bool ok = second <= 1.5 * first + 1e-12;
    bounded = bounded && ok;
    maxd.push_back(std::max(first, second));
    drifts.push_back(maxd.back());
    growth.push_back(first > 0.0 ? second / first : 0.0);
  }
  const double scale = std::max(1.0, std::abs(e0));
  const bool exact = *std::max_element(maxd.begin(), maxd.end()) < 1e-13 * scale;
  bool ratios_ok = true;
  for (std::size_t i = 0; i + 1 < dt_list.size(); ++i) {
    if (std::abs(dt_list[i + 1] - 0.5 * dt_list[i]) > 1e-12 * dt_list[i]) continue;
    const double ratio = maxd[i + 1] > 0.0 ? maxd[i] / maxd[i + 1] : 0.0;
    ratios.push_back(ratio);
    if (!exact) ratios_ok = ratios_ok && ratio >= 3.5 && ratio <= 4.5;
  }
  r.measured["max_drift"] = drifts;
  r.measured["halving_ratios"] = ratios;
  r.measured["late_over_early"] = growth;
  r.measured["bounded"] = bounded;
  r.tolerance = 0.5;  // ratio must lie in 4 ± 0.5
  r.pass = bounded && ratios_ok;
  r.context = detail::hamiltonian_context(h, z0.dim());
  r.context["dt"] = std::vector<double>(dt_list.begin(), dt_list.end());
  r.context["steps"] = steps;
  r.note = exact ? "energy conserved to roundoff; ratio test vacuous"
                 : "long-time horizon truncated to " + std::to_string(steps) + " steps";
  return r;
}

/// Global error against the closed-form flow; least-squares log-log slope.
inline VerifyReport check_convergence_order(const AnalyticHamiltonian& h, const PhaseState& z0, double t,
                                            std::span<const double> dt_list) {
  if (dt_list.size() < 2) throw ConfigError("check_convergence_order: need at least two step sizes");
  const auto exact = h.exact_flow(z0, t);
  if (!exact) throw ConfigError("check_convergence_order: " + h.name() + " has no closed-form flow");
  auto r = make_report("convergence_order", "global error of the discrete flow is second order in dt");
  std::vector<double> errs;
  for (double dt : dt_list) errs.push_back(distance(flow(h, z0, FlowConfig::fixed(t, dt)).state, *exact));
  ordered_json e = errs;
  r.measured["errors"] = e;
  r.tolerance = 0.1;  // slope must lie in 2 ± 0.1
  r.context = detail::hamiltonian_context(h, z0.dim());
  r.context["T"] = t;
  r.context["dt"] = std::vector<double>(dt_list.begin(), dt_list.end());
  if (*std::max_element(errs.begin(), errs.end()) < 1e-12) {
    r.measured["slope"] = nullptr;
    r.pass = true;
    r.note = "exact: leapfrog reproduces this flow to roundoff";
    return r;
  }
  const double slope = loglog_slope(dt_list, errs);
  r.measured["slope"] = slope;
  r.pass = slope >= 1.9 && slope <= 2.1;
  return r;
}

/// Harmonic oscillator from ‖z₀‖ = 1: bounded (‖z‖ < 10) below the threshold 2/ω and
/// blown up (‖z‖ > 10⁶) above it.
inline VerifyReport check_stability_boundary(double omega, double dt_below, double dt_above, std::size_t steps,
                                             std::optional<std::size_t> steps_above = std::nullopt) {
  auto r = make_report("stability_boundary", "leapfrog on a harmonic oscillator is stable iff dt * omega < 2");
  const auto h = AnalyticHamiltonian::harmonic(omega);
  const double threshold = 2.0 / omega;
  r.context = detail::hamiltonian_context(h, 1);
  r.context["omega"] = omega;
  r.context["dt_below"] = dt_below;
  r.context["dt_above"] = dt_above;
  r.context["steps"] = steps;
  r.context["steps_above"] = steps_above.value_or(steps);
  r.measured["threshold"] = threshold;
  if (!(dt_below < threshold && dt_above > threshold)) {
    r.measured["configuration_error"] = true;
    r.pass = false;
    r.note = "configuration error: the step sizes do not straddle 2/omega";
    return r;
  }
  auto run = [&](double dt, std::size_t n) {
    PhaseState z({1.0}, {0.0});
    double peak = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      z = leapfrog_step(h, z, dt, static_cast<long>(i));
      peak = std::max(peak, std::hypot(z.q()[0], z.p()[0]));
      if (peak > 1e6) break;
    }
    return peak;
  };
  const double below = run(dt_below, steps);
  const double above = run(dt_above, steps_above.value_or(steps));
  r.measured["configuration_error"] = false;
  r.measured["peak_norm_below"] = below;
  r.measured["peak_norm_above"] = above;
  r.tolerance = 10.0;
  r.pass = below < 10.0 && above > 1e6;
  return r;
}

// ---------------------------------------------------------------------------
// Nearest-neighbour differential entropy

namespace detail {

inline double digamma_int(std::size_t n) {
  double s = -0.57721566490153286061;
  for (std::size_t j = 1; j < n; ++j) s += 1.0 / static_cast<double>(j);
  return s;
}

}  // namespace detail

/// Kozachenko–Leonenko estimate ψ(n) − ψ(k) + log V_D + (D/n) Σ log ε_k(i), where
/// ε_k(i) is the Euclidean distance from point i to its k-th nearest neighbour.
inline double knn_entropy(const std::vector<Vector>& pts, std::size_t k) {
  const std::size_t n = pts.size();
  if (k == 0 || n <= k) throw std::invalid_argument("knn_entropy: need more than k points");
  const std::size_t dim = pts.front().size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pts[a][0] < pts[b][0]; });

  double sum_log = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const Vector& x = pts[order[s]];
    std::priority_queue<double> best;  // k smallest squared distances
    auto consider = [&](std::size_t t) {
      const Vector& y = pts[order[t]];
      const double dx0 = (y[0] - x[0]) * (y[0] - x[0]);
      if (best.size() == k && dx0 >= best.top()) return false;
      double d2 = 0.0;
      for (std::size_t c = 0; c < dim; ++c) d2 += (y[c] - x[c]) * (y[c] - x[c]);
      if (best.size() < k) best.push(d2);
      else if (d2 < best.top()) {
        best.pop();
        best.push(d2);
      }
      return true;
    };
    // Points are sorted on the first coordinate, so each sweep stops once that gap alone
    // exceeds the current k-th distance.
    for (std::size_t t = s + 1; t < n && consider(t); ++t) {}
    for (std::size_t t = s; t-- > 0 && consider(t);) {}
    sum_log += 0.5 * std::log(std::max(best.top(), 1e-300));
  }
  const double d = static_cast<double>(dim);
  const double log_ball = 0.5 * d * std::log(std::numbers::pi) - std::lgamma(0.5 * d + 1.0);
  return detail::digamma_int(n) - detail::digamma_int(k) + log_ball + d * sum_log / static_cast<double>(n);
}

/// Differential entropy of Z₀ ~ N(0, I) and of Z_T = Φ_T(Z₀), estimated on the same draws.
/// `half_dim` is required only for dimension-agnostic Hamiltonians.
template <Hamiltonian H>
VerifyReport check_entropy_preservation(const H& h, const FlowConfig& cfg, std::size_t n, std::size_t k,
                                        std::uint64_t seed, std::size_t half_dim = 0) {
  auto r = make_report("entropy_preservation", "the flow preserves the differential entropy of the latent");
  Rng rng(seed);
  const std::size_t d = h.dim() != 0 ? h.dim() : half_dim;
  if (d == 0) throw ConfigError("check_entropy_preservation: latent dimension unknown");
  std::vector<Vector> z0s, zts;
  z0s.reserve(n);
  zts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    z0s.push_back(rng.standard_normal(2 * d));
    zts.push_back(flow(h, PhaseState::from_flat(z0s.back()), cfg).state.flat());
  }
  const double h0 = knn_entropy(z0s, k), ht = knn_entropy(zts, k);
  const double truth = static_cast<double>(d) * (kLog2Pi + 1.0);
  r.measured["entropy_z0"] = h0;
  r.measured["entropy_zT"] = ht;
  r.measured["gaussian_entropy"] = truth;
  r.measured["abs_difference"] = std::abs(ht - h0);
  r.tolerance = 0.05;
  r.pass = std::abs(ht - h0) < r.tolerance;
  r.context = detail::hamiltonian_context(h, d);
  detail::add_flow_context(r.context, cfg);
  r.context["n"] = n;
  r.context["k"] = k;
  r.context["seed"] = seed;
  return r;
}

inline VerifyReport check_entropy_preservation(const SgnModel& m, std::size_t n, std::size_t k, std::uint64_t seed) {
  return check_entropy_preservation(m.hamiltonian, m.flow_cfg, n, k, seed);
}

// ---------------------------------------------------------------------------
// Gradient suite

struct GradientSuitePlan {
  std::size_t net_cases = 20;
  std::size_t flow_cases = 5;
  std::size_t model_cases = 1;
  std::uint64_t seed = 7;
};

namespace detail {

inline MlpParams random_scalar_net(Rng& rng) {
  std::vector<std::size_t> dims{1 + rng.below(4)};
  const std::size_t hidden = 1 + rng.below(2);
  for (std::size_t i = 0; i < hidden; ++i) dims.push_back(3 + rng.below(6));
  dims.push_back(1);
  const auto act = rng.below(2) ? Activation::Softplus : Activation::Tanh;
  MlpParams net = MlpParams::init(dims, act, rng);
  for (auto& b : net.biases)
    for (auto& x : b) x = 0.3 * rng.normal();
  return net;
}

inline MlpParams with_params(const MlpParams& net, const Vector& theta) {
  MlpParams out = net;
  std::size_t at = 0;
  read_params(out, theta, at);
  return out;
}

inline Vector central_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    Vector xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

}  // namespace detail

/// Analytic network, flow, and model gradients against central differences.
inline VerifyReport check_gradient_suite(const GradientSuitePlan& plan) {
  auto r = make_report("gradient_suite", "analytic gradients agree with finite differences");
  Rng rng(plan.seed);
  const double fd = 1e-6;
  double first = 0.0, second = 0.0, flow_err = 0.0, model_err = 0.0;

  for (std::size_t c = 0; c < plan.net_cases; ++c) {
    const MlpParams net = detail::random_scalar_net(rng);
    const Vector x = rng.standard_normal(net.input_dim());
    const Vector u = rng.standard_normal(net.input_dim());
    Vector theta;
    append_params(net, theta);

    const Vector gx = mlp_input_grad(net, x);
    first = std::max(first, relative_error(gx, detail::central_gradient(
                                                   [&](const Vector& v) { return mlp_scalar(net, v); }, x, fd)));
    Vector gp;
    mlp_param_grad(net, x, 1.0).append_flat(gp);
    first = std::max(first, relative_error(gp, detail::central_gradient(
                                                   [&](const Vector& t) {
                                                     return mlp_scalar(detail::with_params(net, t), x);
                                                   },
                                                   theta, fd)));

    const auto so = mlp_input_grad_vjp(net, x, u);
    Vector sp;
    so.params.append_flat(sp);
    const auto dir = [&](const MlpParams& n, const Vector& v) { return dot(u, mlp_input_grad(n, v)); };
    second = std::max(second, relative_error(sp, detail::central_gradient(
                                                     [&](const Vector& t) {
                                                       return dir(detail::with_params(net, t), x);
                                                     },
                                                     theta, fd)));
    second = std::max(second, relative_error(so.input, detail::central_gradient(
                                                           [&](const Vector& v) { return dir(net, v); }, x, fd)));
  }

  for (std::size_t c = 0; c < plan.flow_cases; ++c) {
    const std::size_t d = 1 + rng.below(2);
    const auto h = SeparableHamiltonianNet::init(d, 8, 2, Activation::Tanh, rng);
    const auto cfg = FlowConfig::fixed(0.5, 0.05);
    const Vector z0 = rng.standard_normal(2 * d);
    const Vector up = rng.standard_normal(2 * d);
    const auto f = flow(h, PhaseState::from_flat(z0), cfg);
    const auto v = flow_vjp(h, f.trace, f.state, up, BackpropMode::Reversible);
    const auto loss = [&](const SeparableHamiltonianNet& hh, const Vector& z) {
      return dot(up, flow(hh, PhaseState::from_flat(z), cfg).state.flat());
    };
    flow_err = std::max(flow_err, relative_error(v.dz0, detail::central_gradient(
                                                            [&](const Vector& z) { return loss(h, z); }, z0, fd)));
    Vector kp, vp, gk, gv;
    append_params(h.kinetic, kp);
    append_params(h.potential, vp);
    v.d_kinetic.append_flat(gk);
    v.d_potential.append_flat(gv);
    flow_err = std::max(flow_err, relative_error(gk, detail::central_gradient(
                                                         [&](const Vector& t) {
                                                           auto hh = h;
                                                           hh.kinetic = detail::with_params(h.kinetic, t);
                                                           return loss(hh, z0);
                                                         },
                                                         kp, fd)));
    flow_err = std::max(flow_err, relative_error(gv, detail::central_gradient(
                                                         [&](const Vector& t) {
                                                           auto hh = h;
                                                           hh.potential = detail::with_params(h.potential, t);
                                                           return loss(hh, z0);
                                                         },
                                                         vp, fd)));
  }

  for (std::size_t c = 0; c < plan.model_cases; ++c) {
    ModelSpec spec;
    spec.encoder_hidden = {8};
    spec.decoder_hidden = {8};
    spec.hamiltonian_width = 8;
    const SgnModel m = init_model(spec, rng);
    std::vector<Vector> xs, eps;
    for (int i = 0; i < 3; ++i) {
      xs.push_back(rng.standard_normal(2));
      eps.push_back(rng.standard_normal(2));
    }
    ModelGradients g = ModelGradients::zeros_like(m);
    for (std::size_t i = 0; i < xs.size(); ++i) sample_gradients(m, xs[i], eps[i], BackpropMode::Reversible, g);
    const Vector num = detail::central_gradient(
        [&](const Vector& t) {
          SgnModel mm = m;
          unflatten_params(mm, t);
          double s = 0.0;
          for (std::size_t i = 0; i < xs.size(); ++i) s -= elbo_with_noise(mm, xs[i], eps[i]);
          return s;
        },
        flatten_params(m), fd);
    model_err = std::max(model_err, relative_error(g.flat(), num));
  }

  r.measured["worst_first_order"] = first;
  r.measured["worst_second_order"] = second;
  r.measured["worst_flow_vjp"] = flow_err;
  r.measured["worst_model_elbo"] = model_err;
  r.tolerance = 1e-5;
  r.pass = first < 1e-5 && second < 1e-4 && flow_err < 1e-4 && model_err < 1e-3;
  r.context["net_cases"] = plan.net_cases;
  r.context["flow_cases"] = plan.flow_cases;
  r.context["model_cases"] = plan.model_cases;
  r.context["seed"] = plan.seed;
  r.context["fd_step"] = fd;
  r.note = "thresholds: first order 1e-5, second order and flow 1e-4, full model 1e-3";
  return r;
}

// ---------------------------------------------------------------------------

enum class VerifyProfile { Quick, Full };

inline std::vector<VerifyReport> run_all(VerifyProfile profile) {
  const bool full = profile == VerifyProfile::Full;
  std::vector<VerifyReport> out;
  const auto ho = AnalyticHamiltonian::harmonic(1.0);
  Rng rng(2024);
  const auto neural = SeparableHamiltonianNet::init(2, 16, 2, Activation::Tanh, rng);
  const PhaseState zn(rng.standard_normal(2), rng.standard_normal(2));
  const auto cfg = FlowConfig::fixed(1.0, 0.01);

  out.push_back(check_unit_jacobian(AnalyticHamiltonian::constant(0.0), PhaseState({0.5}, {-0.5}), cfg));
  out.push_back(check_unit_jacobian(ho, PhaseState({1.0}, {0.0}), cfg));
  out.push_back(check_unit_jacobian(neural, zn, cfg));
  out.push_back(check_symplectic_form(AnalyticHamiltonian::free_particle(), PhaseState({0.3}, {1.2}),
                                      FlowConfig::fixed(1.0, 0.25)));
  out.push_back(check_symplectic_form(neural, zn, cfg));
  out.push_back(check_reversibility(ho, PhaseState({1.0}, {0.0}), FlowConfig::fixed(10.0, 0.01)));
  out.push_back(check_reversibility(neural, zn, FlowConfig::fixed(10.0, 0.01)));

  const Vector drift_dts{0.1, 0.05};
  out.push_back(check_energy_drift(ho, PhaseState({1.0}, {0.0}), drift_dts, 10000));
  const Vector pend_dt{0.01};
  out.push_back(check_energy_drift(AnalyticHamiltonian::pendulum(), PhaseState({1.0}, {0.0}), pend_dt,
                                   full ? 1000000 : 100000));

  const Vector conv_dts{0.1, 0.05, 0.025, 0.0125};
  out.push_back(check_convergence_order(ho, PhaseState({1.0}, {0.0}), 1.0, conv_dts));
  out.push_back(check_convergence_order(AnalyticHamiltonian::harmonic(3.0), PhaseState({1.0}, {0.0}), 1.0, conv_dts));
  out.push_back(check_convergence_order(AnalyticHamiltonian::free_particle(), PhaseState({0.0}, {1.0}), 1.0, conv_dts));

  out.push_back(check_stability_boundary(1.0, 1.9, 2.1, 100000, 10000));
  out.push_back(check_stability_boundary(2.0, 0.9, 1.1, 100000, 10000));

  Rng cap_rng(99);
  const auto capped = SeparableHamiltonianNet::init(1, 16, 2, Activation::Tanh, cap_rng, 1.0);
  SeparableHamiltonianNet normed(spectral_normalize(capped.kinetic, 50).net,
                                 spectral_normalize(capped.potential, 50).net);
  out.push_back(check_entropy_preservation(ho, FlowConfig::fixed(1.0, 0.1), 20000, 5, 11, 1));
  out.push_back(check_entropy_preservation(normed, FlowConfig::fixed(1.0, 0.1), 20000, 5, 12));

  GradientSuitePlan plan;
  if (full) {
    plan.net_cases = 200;
    plan.flow_cases = 50;
    plan.model_cases = 3;
  }
  out.push_back(check_gradient_suite(plan));
  return out;
}

inline std::string format_summary(const std::vector<VerifyReport>& reports) {
  std::string s;
  char line[256];
  std::snprintf(line, sizeof line, "%-24s %-22s %s\n", "check", "hamiltonian", "result");
  s += line;
  std::size_t passed = 0;
  for (const auto& r : reports) {
    const std::string h = r.context.contains("hamiltonian") ? r.context["hamiltonian"].get<std::string>() : "-";
    std::snprintf(line, sizeof line, "%-24s %-22s %s\n", r.name.c_str(), h.c_str(), r.pass ? "PASS" : "FAIL");
    s += line;
    passed += r.pass ? 1 : 0;
  }
  std::snprintf(line, sizeof line, "%zu/%zu checks passed\n", passed, reports.size());
  s += line;
  return s;
}

}  // namespace sgn
