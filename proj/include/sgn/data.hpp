#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgn/core.hpp"
#include "sgn/rng.hpp"

namespace sgn {

class DataError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

struct Dataset {
  std::string name;
  std::size_t dim = 0;
  std::vector<Vector> points;
  std::vector<int> labels;  // generator component per point; not persisted
  nlohmann::ordered_json generator_config = nlohmann::ordered_json::object();

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }

  void validate() const {
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (points[i].size() != dim)
        throw DataError("dataset '" + name + "': point " + std::to_string(i) + " has dimension " +
                        std::to_string(points[i].size()) + ", expected " + std::to_string(dim));
      if (!all_finite(points[i])) throw DataError("dataset '" + name + "': point " + std::to_string(i) + " is not finite");
    }
  }
};

/// n points from an equal-weight mixture of isotropic Gaussians.
inline Dataset gen_gaussian_mixture(std::size_t k, const std::vector<Vector>& centers, const std::vector<double>& scales,
                                    std::size_t n, Rng& rng) {
  if (k == 0 || centers.size() != k || scales.size() != k)
    throw ConfigError("gen_gaussian_mixture: need k >= 1 centers and scales");
  const std::size_t dim = centers.front().size();
  for (std::size_t c = 0; c < k; ++c) {
    require_same_size(centers[c].size(), dim, "gen_gaussian_mixture center");
    if (!(scales[c] >= 0.0)) throw ConfigError("gen_gaussian_mixture: scales must be >= 0");
  }
  Dataset ds;
  ds.name = "gaussian_mixture";
  ds.dim = dim;
  ds.generator_config = {{"generator", "gaussian_mixture"}, {"k", k}, {"centers", centers}, {"scales", scales}, {"n", n}};
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(rng.below(k));
    Vector x = centers[c];
    for (auto& v : x) v += scales[c] * rng.normal();
    ds.points.push_back(std::move(x));
    ds.labels.push_back(static_cast<int>(c));
  }
  return ds;
}

/// Two interleaved unit half-circles: the upper arc (cos t, sin t) and the lower arc
/// (1 − cos t, 0.5 − sin t), t evenly spaced on [0, π], plus isotropic Gaussian noise.
inline Dataset gen_two_moons(std::size_t n, double noise, Rng& rng) {
  if (!(noise >= 0.0)) throw ConfigError("gen_two_moons: noise must be >= 0");
  Dataset ds;
  ds.name = "two_moons";
  ds.dim = 2;
  ds.generator_config = {{"generator", "two_moons"}, {"n", n}, {"noise", noise}};
  const std::size_t n_upper = (n + 1) / 2, n_lower = n - n_upper;
  auto arc = [&](std::size_t count, int label) {
    for (std::size_t i = 0; i < count; ++i) {
      const double t = count > 1 ? std::numbers::pi * static_cast<double>(i) / static_cast<double>(count - 1) : 0.0;
      Vector x = label == 0 ? Vector{std::cos(t), std::sin(t)} : Vector{1.0 - std::cos(t), 0.5 - std::sin(t)};
      for (auto& v : x) v += noise * rng.normal();
      ds.points.push_back(std::move(x));
      ds.labels.push_back(label);
    }
  };
  arc(n_upper, 0);
  arc(n_lower, 1);
  return ds;
}

inline void write_csv(const Dataset& ds, const std::string& path) {
  ds.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  for (std::size_t j = 0; j < ds.dim; ++j) out << (j ? ",x" : "x") << j;
  out << '\n';
  char buf[32];
  for (const auto& x : ds.points) {
    for (std::size_t j = 0; j < x.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", x[j]);
      if (j) out << ',';
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw DataError("write to '" + path + "' failed");
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

}  // namespace detail

inline Dataset read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  Dataset ds;
  ds.name = path;
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": missing header row");
  const auto header = detail::split_csv_line(line);
  for (std::size_t j = 0; j < header.size(); ++j)
    if (detail::trim(header[j]) != "x" + std::to_string(j))
      throw DataError(path + ":1: header must be x0,...,x{D-1}");
  ds.dim = header.size();

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty() || line == "\r") continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != ds.dim)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(ds.dim) + " fields, got " +
                      std::to_string(fields.size()));
    Vector x(ds.dim);
    for (std::size_t j = 0; j < ds.dim; ++j) {
      const std::string f = detail::trim(fields[j]);
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), x[j]);
      if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(x[j]))
        throw DataError(path + ":" + std::to_string(lineno) + ": bad number '" + f + "' in column " + std::to_string(j));
    }
    ds.points.push_back(std::move(x));
  }
  return ds;
}

}  // namespace sgn
