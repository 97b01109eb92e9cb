#pragma once

#include <algorithm>
#include <numeric>

#include "core.hpp"
#include "densities.hpp"
#include "integrators.hpp"
#include "rng.hpp"

namespace exfm {

// E(X, Y) = 2 A - B - C with A = mean cross distance, B/C = mean within-set
// distances (V-statistic form, diagonal included).
inline double energy_distance(const Matrix& x, const Matrix& y) {
  if (x.cols != y.cols) throw std::invalid_argument("energy_distance: dimension mismatch");
  if (x.rows == 0 || y.rows == 0) throw std::invalid_argument("energy_distance: empty sample");
  const std::size_t d = x.cols;
  auto mean_cross = [&](const Matrix& a, const Matrix& b) {
    Vec row_sums(a.rows, 0.0);
    parallel_for(a.rows, [&](std::size_t i) {
      double s = 0.0;
      for (std::size_t j = 0; j < b.rows; ++j)
        s += std::sqrt(sq_dist(a[i], b[j], d));
      row_sums[i] = s;
    });
    double total = std::accumulate(row_sums.begin(), row_sums.end(), 0.0);
    return total / (static_cast<double>(a.rows) * static_cast<double>(b.rows));
  };
  double A = mean_cross(x, y);
  double B = mean_cross(x, x);
  double C = mean_cross(y, y);
  return 2.0 * A - B - C;
}

namespace detail {

// Min-cost assignment on a square cost matrix (shortest augmenting paths with
// potentials, O(n^3)). Returns row -> column.
inline std::vector<std::size_t> solve_assignment(const Matrix& cost) {
  const std::size_t n = cost.rows;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      std::size_t i0 = p[j0], j1 = 0;
      double delta = inf;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n);
  for (std::size_t j = 1; j <= n; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

}  // namespace detail

inline constexpr std::size_t kW2ExactCap = 4096;

// 2-Wasserstein distance between equal-size empirical measures. d=1 uses the
// sorted coupling; otherwise an exact minimum-cost assignment (O(n^3), capped at
// kW2ExactCap rows). Larger inputs are subsampled with the given seed.
inline double wasserstein2(const Matrix& x, const Matrix& y, std::uint64_t subsample_seed = 0) {
  if (x.cols != y.cols) throw std::invalid_argument("wasserstein2: dimension mismatch");
  if (x.rows != y.rows) throw std::invalid_argument("wasserstein2: sample sizes must match");
  if (x.rows == 0) throw std::invalid_argument("wasserstein2: empty sample");

  const Matrix* px = &x;
  const Matrix* py = &y;
  Matrix sx, sy;
  if (x.rows > kW2ExactCap && x.cols > 1) {
    CounterRng rng(subsample_seed, 0x7732);
    auto subsample = [&](const Matrix& m) {
      std::vector<std::size_t> idx(m.rows);
      std::iota(idx.begin(), idx.end(), 0);
      for (std::size_t i = m.rows - 1; i > 0; --i)
        std::swap(idx[i], idx[rng.uniform_index(i + 1)]);
      Matrix out(kW2ExactCap, m.cols);
      for (std::size_t i = 0; i < kW2ExactCap; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) out[i][j] = m[idx[i]][j];
      return out;
    };
    sx = subsample(x);
    sy = subsample(y);
    px = &sx;
    py = &sy;
  }

  const std::size_t n = px->rows, d = px->cols;
  if (d == 1) {
    Vec a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = (*px)[i][0];
      b[i] = (*py)[i][0];
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += sq(a[i] - b[i]);
    return std::sqrt(s / static_cast<double>(n));
  }

  Matrix cost(n, n);
  parallel_for(n, [&](std::size_t i) {
    for (std::size_t j = 0; j < n; ++j) cost[i][j] = sq_dist((*px)[i], (*py)[j], d);
  });
  auto match = detail::solve_assignment(cost);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += cost[i][match[i]];
  return std::sqrt(s / static_cast<double>(n));
}

// Negative log likelihood proxy: pull each sample back to t=0 along the reverse
// ODE dx/dtau = -v(x, 1 - tau) and score it under the standard normal
// (no divergence correction term, by construction of the objective).
inline double nll(const VectorField& field, const Matrix& samples, double tol = 1e-6) {
  if (samples.rows == 0) throw std::invalid_argument("nll: empty sample");
  const std::size_t d = samples.cols;
  VectorField reverse = [&](const Vec& x, double tau) {
    Vec v = field(x, 1.0 - tau);
    for (auto& c : v) c = -c;
    return v;
  };
  Vec per_sample(samples.rows, 0.0);
  OdeOptions opts;
  opts.tol = tol;
  parallel_for(samples.rows, [&](std::size_t i) {
    try {
      auto path = integrate_ode(reverse, samples.row(i), 0.0, 1.0, OdeMethod::adaptive, opts);
      const Vec& z = path.terminal();
      double l = 0.0;
      for (std::size_t c = 0; c < d; ++c) l += 0.5 * (sq(z[c]) + kLog2Pi);
      per_sample[i] = l;
    } catch (const numerical_error& e) {
      throw numerical_error("nll: sample " + std::to_string(i) + ": " + e.what());
    }
  });
  return std::accumulate(per_sample.begin(), per_sample.end(), 0.0) /
         static_cast<double>(samples.rows);
}

}  // namespace exfm
