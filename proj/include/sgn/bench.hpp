#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sgn/train.hpp"
#include "sgn/verify.hpp"

namespace sgn {

struct BenchConfig {
  std::vector<std::size_t> dims{2, 4, 8, 16};
  std::vector<double> times{0.5, 1.0, 2.0, 4.0, 8.0};
  std::vector<std::size_t> steps{10, 100, 1000};
  std::size_t repeats = 9;
  std::size_t time_dim = 4;    // d used for the time sweep and the memory sweep
  double dim_sweep_time = 1.0;  // T used for the dimension sweep
  double dt = 0.01;
  std::size_t width = 16;
  double min_sample_seconds = 0.02;
  std::uint64_t seed = 1;
};

struct BenchRow {
  std::string section;  // flow_vs_T | flow_vs_d | jacobian_vs_d | peak_states
  std::string variant;  // "", "stored", "reversible"
  double x = 0.0;
  double median_seconds = 0.0;
  std::size_t peak_states = 0;
};

struct BenchResult {
  std::vector<BenchRow> rows;
  double slope_flow_vs_T = 0.0;
  double slope_flow_vs_d = 0.0;
  double slope_jacobian_vs_d = 0.0;
  std::vector<std::size_t> reversible_peaks;
  std::vector<std::size_t> stored_peaks;
};

/// Median wall time of one call of each job. Every job gets one untimed warm-up and an
/// inner loop count sized to last at least `min_seconds`; the repeats are interleaved
/// across jobs so that machine drift hits all of them alike.
inline std::vector<double> median_times(const std::vector<std::function<void()>>& jobs, std::size_t repeats,
                                        double min_seconds) {
  using clock = std::chrono::steady_clock;
  std::vector<std::size_t> inner;
  for (const auto& job : jobs) {
    const auto t0 = clock::now();
    job();
    const double once = std::chrono::duration<double>(clock::now() - t0).count();
    inner.push_back(static_cast<std::size_t>(std::max(1.0, std::ceil(min_seconds / std::max(once, 1e-9)))));
  }
  std::vector<std::vector<double>> samples(jobs.size());
  for (std::size_t r = 0; r < std::max<std::size_t>(1, repeats); ++r)
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      const auto t0 = clock::now();
      for (std::size_t i = 0; i < inner[j]; ++i) jobs[j]();
      samples[j].push_back(std::chrono::duration<double>(clock::now() - t0).count() / static_cast<double>(inner[j]));
    }
  std::vector<double> med;
  for (auto& s : samples) {
    std::sort(s.begin(), s.end());
    med.push_back(s[s.size() / 2]);
  }
  return med;
}

/// Dense Jacobian of Φ_T by 2·(2d) central-difference flows, then an LU determinant:
/// what a likelihood without a volume-preservation guarantee would have to pay.
template <Hamiltonian H>
double jacobian_logdet_baseline(const H& h, const PhaseState& z0, const FlowConfig& cfg) {
  const Vector x = z0.flat();
  const std::size_t n = x.size();
  Matrix jac(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    Vector xp = x, xm = x;
    xp[j] += kFiniteDifferenceStep;
    xm[j] -= kFiniteDifferenceStep;
    const Vector yp = flow(h, PhaseState::from_flat(xp), cfg).state.flat();
    const Vector ym = flow(h, PhaseState::from_flat(xm), cfg).state.flat();
    for (std::size_t i = 0; i < n; ++i) jac(i, j) = (yp[i] - ym[i]) / (2.0 * kFiniteDifferenceStep);
  }
  return std::log(std::abs(lu_det(jac)));
}

inline BenchResult run_bench(const BenchConfig& cfg) {
  BenchResult out;
  volatile double sink = 0.0;
  Rng rng(cfg.seed);

  {
    const auto h = SeparableHamiltonianNet::init(cfg.time_dim, cfg.width, 2, Activation::Tanh, rng);
    const PhaseState z0 = PhaseState::from_flat(rng.standard_normal(2 * cfg.time_dim));
    std::vector<FlowConfig> fcs;
    for (double t : cfg.times) fcs.push_back(FlowConfig::fixed(t, cfg.dt));
    std::vector<std::function<void()>> jobs;
    for (const auto& fc : fcs) jobs.push_back([&] { sink = sink + flow(h, z0, fc).state.q()[0]; });
    const auto ts = median_times(jobs, cfg.repeats, cfg.min_sample_seconds);
    for (std::size_t i = 0; i < ts.size(); ++i) out.rows.push_back({"flow_vs_T", "", cfg.times[i], ts[i], 0});
    if (ts.size() >= 2) out.slope_flow_vs_T = loglog_slope(cfg.times, ts);
  }

  {
    std::vector<SeparableHamiltonianNet> nets;
    std::vector<PhaseState> starts;
    for (std::size_t d : cfg.dims) {
      nets.push_back(SeparableHamiltonianNet::init(d, cfg.width, 2, Activation::Tanh, rng));
      starts.push_back(PhaseState::from_flat(rng.standard_normal(2 * d)));
    }
    const auto fc = FlowConfig::fixed(cfg.dim_sweep_time, cfg.dt);
    std::vector<std::function<void()>> jobs;
    for (std::size_t i = 0; i < nets.size(); ++i) {
      jobs.push_back([&, i] { sink = sink + flow(nets[i], starts[i], fc).state.q()[0]; });
      jobs.push_back([&, i] { sink = sink + jacobian_logdet_baseline(nets[i], starts[i], fc); });
    }
    const auto med = median_times(jobs, cfg.repeats, cfg.min_sample_seconds);
    std::vector<double> xs, flow_t, jac_t;
    for (std::size_t i = 0; i < nets.size(); ++i) {
      xs.push_back(static_cast<double>(cfg.dims[i]));
      flow_t.push_back(med[2 * i]);
      jac_t.push_back(med[2 * i + 1]);
      out.rows.push_back({"flow_vs_d", "", xs.back(), flow_t.back(), 0});
      out.rows.push_back({"jacobian_vs_d", "", xs.back(), jac_t.back(), 0});
    }
    if (xs.size() >= 2) {
      out.slope_flow_vs_d = loglog_slope(xs, flow_t);
      out.slope_jacobian_vs_d = loglog_slope(xs, jac_t);
    }
  }

  {
    const auto h = SeparableHamiltonianNet::init(cfg.time_dim, cfg.width, 2, Activation::Tanh, rng);
    const PhaseState z0 = PhaseState::from_flat(rng.standard_normal(2 * cfg.time_dim));
    const Vector up = rng.standard_normal(2 * cfg.time_dim);
    for (std::size_t n : cfg.steps) {
      const std::vector<double> dts(n, 1.0 / static_cast<double>(std::max<std::size_t>(n, 1)));
      const auto tape = record_tape(h, z0, dts);
      const auto& zT = tape.back();
      const auto stored = flow_vjp(h, dts, zT, up, BackpropMode::Stored, &tape);
      const auto rev = flow_vjp(h, dts, zT, up, BackpropMode::Reversible);
      out.rows.push_back({"peak_states", "stored", static_cast<double>(n), 0.0, stored.peak_states});
      out.rows.push_back({"peak_states", "reversible", static_cast<double>(n), 0.0, rev.peak_states});
      out.stored_peaks.push_back(stored.peak_states);
      out.reversible_peaks.push_back(rev.peak_states);
    }
  }
  return out;
}

inline std::string bench_csv(const BenchResult& r) {
  std::string s = "section,variant,x,median_seconds,peak_states\n";
  char line[160];
  for (const auto& row : r.rows) {
    std::snprintf(line, sizeof line, "%s,%s,%.17g,%.17g,%zu\n", row.section.c_str(), row.variant.c_str(), row.x,
                  row.median_seconds, row.peak_states);
    s += line;
  }
  return s;
}

inline ordered_json bench_summary(const BenchResult& r) {
  return {{"slope_flow_vs_T", r.slope_flow_vs_T},
          {"slope_flow_vs_d", r.slope_flow_vs_d},
          {"slope_jacobian_vs_d", r.slope_jacobian_vs_d},
          {"slope_gap_d", r.slope_jacobian_vs_d - r.slope_flow_vs_d},
          {"stored_peaks", r.stored_peaks},
          {"reversible_peaks", r.reversible_peaks}};
}

}  // namespace sgn
