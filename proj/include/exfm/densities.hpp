#pragma once

#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include "core.hpp"
#include "csv.hpp"
#include "rng.hpp"

namespace exfm {

inline constexpr double kLog2Pi = 1.8378770664093454836;  // ln(2*pi)

inline double log_normal_pdf(double x, double mean, double sd) {
  double z = (x - mean) / sd;
  return -0.5 * (z * z + kLog2Pi) - std::log(sd);
}

// Diagonal-covariance Gaussian; `scale` holds per-axis standard deviations.
struct Gaussian {
  Vec mean;
  Vec scale;

  Gaussian() = default;
  Gaussian(Vec m, Vec s) : mean(std::move(m)), scale(std::move(s)) {
    if (mean.size() != scale.size() || mean.empty())
      throw std::invalid_argument("Gaussian: mean/scale size mismatch");
    for (double v : scale)
      if (!(v > 0.0)) throw std::invalid_argument("Gaussian: scale must be positive");
  }
  Gaussian(double m, double s) : Gaussian(Vec{m}, Vec{s}) {}

  std::size_t dim() const { return mean.size(); }
};

inline Gaussian standard_gaussian(std::size_t d) {
  return Gaussian(Vec(d, 0.0), Vec(d, 1.0));
}

struct GaussianMixture {
  std::vector<double> weights;
  std::vector<Gaussian> components;

  GaussianMixture() = default;
  GaussianMixture(std::vector<double> w, std::vector<Gaussian> c)
      : weights(std::move(w)), components(std::move(c)) {
    if (weights.size() != components.size() || weights.empty())
      throw std::invalid_argument("GaussianMixture: weights/components mismatch");
    double sum = 0.0;
    for (double v : weights) {
      if (!(v > 0.0)) throw std::invalid_argument("GaussianMixture: weights must be positive");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("GaussianMixture: weights must sum to 1");
    for (const auto& g : components)
      if (g.dim() != components[0].dim())
        throw std::invalid_argument("GaussianMixture: component dimension mismatch");
  }

  std::size_t dim() const { return components[0].dim(); }
};

using Density = std::variant<Gaussian, GaussianMixture>;

inline std::size_t dim(const Density& d) {
  return std::visit([](const auto& v) { return v.dim(); }, d);
}

inline double log_density(const Gaussian& g, const Vec& x) {
  if (x.size() != g.dim()) throw std::invalid_argument("log_density: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += log_normal_pdf(x[i], g.mean[i], g.scale[i]);
  return s;
}

inline double log_density(const GaussianMixture& m, const Vec& x) {
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(m.weights.size());
  for (std::size_t c = 0; c < m.weights.size(); ++c) {
    terms[c] = std::log(m.weights[c]) + log_density(m.components[c], x);
    best = std::max(best, terms[c]);
  }
  if (!std::isfinite(best)) return best;
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - best);
  return best + std::log(acc);
}

inline double log_density(const Density& d, const Vec& x) {
  return std::visit([&](const auto& v) { return log_density(v, x); }, d);
}

inline Vec mean(const Gaussian& g) { return g.mean; }

inline Vec mean(const GaussianMixture& m) {
  Vec out(m.dim(), 0.0);
  for (std::size_t c = 0; c < m.weights.size(); ++c)
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] += m.weights[c] * m.components[c].mean[i];
  return out;
}

inline Vec mean(const Density& d) {
  return std::visit([](const auto& v) { return mean(v); }, d);
}

// Per-axis variance (diagonal of the covariance).
inline Vec variance(const Gaussian& g) {
  Vec out(g.dim());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sq(g.scale[i]);
  return out;
}

inline Vec variance(const GaussianMixture& m) {
  Vec mu = mean(m);
  Vec out(m.dim(), 0.0);
  for (std::size_t c = 0; c < m.weights.size(); ++c)
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] += m.weights[c] * (sq(m.components[c].scale[i]) + sq(m.components[c].mean[i] - mu[i]));
  return out;
}

inline Vec variance(const Density& d) {
  return std::visit([](const auto& v) { return variance(v); }, d);
}

inline Vec sample(const Gaussian& g, CounterRng& rng) {
  Vec x(g.dim());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = g.mean[i] + g.scale[i] * rng.normal();
  return x;
}

inline Vec sample(const GaussianMixture& m, CounterRng& rng) {
  double u = rng.uniform();
  double acc = 0.0;
  std::size_t pick = m.weights.size() - 1;
  for (std::size_t c = 0; c < m.weights.size(); ++c) {
    acc += m.weights[c];
    if (u < acc) {
      pick = c;
      break;
    }
  }
  return sample(m.components[pick], rng);
}

inline Vec sample(const Density& d, CounterRng& rng) {
  return std::visit([&](const auto& v) { return sample(v, rng); }, d);
}

inline Matrix sample_matrix(const Density& d, std::size_t n, CounterRng& rng) {
  Matrix out(n, dim(d));
  for (std::size_t i = 0; i < n; ++i) out.set_row(i, sample(d, rng));
  return out;
}

inline Matrix sample_matrix(const Density& d, std::size_t n, std::uint64_t seed,
                            std::uint64_t stream = 0) {
  CounterRng rng(seed, stream);
  return sample_matrix(d, n, rng);
}

// A finite sample with a record of where it came from.
struct EmpiricalSet {
  Matrix points;
  std::string origin;

  EmpiricalSet() = default;
  EmpiricalSet(Matrix p, std::string o) : points(std::move(p)), origin(std::move(o)) {
    if (points.rows == 0 || points.cols == 0)
      throw std::invalid_argument("EmpiricalSet: need at least one point");
    for (double v : points.data)
      if (!std::isfinite(v)) throw std::invalid_argument("EmpiricalSet: non-finite entry");
  }

  std::size_t size() const { return points.rows; }
  std::size_t dim() const { return points.cols; }

  Vec mean() const {
    Vec out(dim(), 0.0);
    for (std::size_t i = 0; i < points.rows; ++i)
      for (std::size_t j = 0; j < points.cols; ++j) out[j] += points[i][j];
    for (auto& v : out) v /= static_cast<double>(points.rows);
    return out;
  }

  Vec variance() const {
    Vec mu = mean();
    Vec out(dim(), 0.0);
    for (std::size_t i = 0; i < points.rows; ++i)
      for (std::size_t j = 0; j < points.cols; ++j) out[j] += sq(points[i][j] - mu[j]);
    for (auto& v : out) v /= static_cast<double>(points.rows);
    return out;
  }

  // Uniform rows with replacement.
  Matrix sample_rows(std::size_t n, CounterRng& rng) const {
    Matrix out(n, dim());
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = static_cast<std::size_t>(rng.uniform_index(points.rows));
      for (std::size_t j = 0; j < points.cols; ++j) out[i][j] = points[r][j];
    }
    return out;
  }
};

inline void save_csv(const EmpiricalSet& s, const std::string& path) {
  std::vector<std::string> header(s.dim());
  for (std::size_t j = 0; j < header.size(); ++j) header[j] = "x" + std::to_string(j);
  write_csv(path, header, s.points);
}

inline EmpiricalSet load_empirical_csv(const std::string& path) {
  CsvTable t = read_csv(path);
  return EmpiricalSet(std::move(t.values), path);
}

}  // namespace exfm
