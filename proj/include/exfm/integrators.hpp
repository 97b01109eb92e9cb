#pragma once

#include <functional>

#include "core.hpp"
#include "rng.hpp"

namespace exfm {

using VectorField = std::function<Vec(const Vec&, double)>;
// Diffusion coefficient g(t) for the sampling SDE.
using DiffusionFn = std::function<double(double)>;

enum class OdeMethod { euler, rk4, adaptive };

struct OdeOptions {
  std::size_t steps = 100;  // euler / rk4
  double tol = 1e-6;        // adaptive, used as both abs and rel tolerance
  std::size_t max_steps = 1000000;
};

struct OdePath {
  std::vector<double> t;
  std::vector<Vec> x;

  const Vec& terminal() const { return x.back(); }
};

namespace detail {

inline void check_state(const Vec& x, double t) {
  if (!all_finite(x))
    throw numerical_error("ode state diverged at t = " + std::to_string(t));
}

inline OdePath fixed_step_ode(const VectorField& f, Vec x, double t0, double t1,
                              std::size_t steps, bool rk4) {
  if (steps == 0) throw std::invalid_argument("integrate_ode: steps must be positive");
  OdePath path;
  path.t.reserve(steps + 1);
  path.x.reserve(steps + 1);
  double h = (t1 - t0) / static_cast<double>(steps);
  path.t.push_back(t0);
  path.x.push_back(x);
  const std::size_t d = x.size();
  Vec k1, k2, k3, k4, tmp(d);
  for (std::size_t s = 0; s < steps; ++s) {
    double t = t0 + h * static_cast<double>(s);
    if (!rk4) {
      k1 = f(x, t);
      for (std::size_t i = 0; i < d; ++i) x[i] = x[i] + h * k1[i];
    } else {
      k1 = f(x, t);
      for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + 0.5 * h * k1[i];
      k2 = f(tmp, t + 0.5 * h);
      for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + 0.5 * h * k2[i];
      k3 = f(tmp, t + 0.5 * h);
      for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + h * k3[i];
      k4 = f(tmp, t + h);
      for (std::size_t i = 0; i < d; ++i)
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    double tn = (s + 1 == steps) ? t1 : t0 + h * static_cast<double>(s + 1);
    check_state(x, tn);
    path.t.push_back(tn);
    path.x.push_back(x);
  }
  return path;
}

// Dormand-Prince 5(4) embedded pair.
inline OdePath dopri54(const VectorField& f, Vec x, double t0, double t1, double tol,
                       std::size_t max_steps) {
  static const double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static const double a21 = 1.0 / 5;
  static const double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static const double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static const double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                      a54 = -212.0 / 729;
  static const double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                      a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static const double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                      b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static const double e1 = 35.0 / 384 - 5179.0 / 57600, e3 = 500.0 / 1113 - 7571.0 / 16695,
                      e4 = 125.0 / 192 - 393.0 / 640, e5 = -2187.0 / 6784 + 92097.0 / 339200,
                      e6 = 11.0 / 84 - 187.0 / 2100, e7 = -1.0 / 40;

  const double dir = (t1 >= t0) ? 1.0 : -1.0;
  const double span = std::abs(t1 - t0);
  if (span == 0.0) return {{t0}, {x}};
  const std::size_t d = x.size();

  OdePath path;
  path.t.push_back(t0);
  path.x.push_back(x);

  double t = t0;
  Vec k1 = f(x, t), k2, k3, k4, k5, k6, k7, xn(d), tmp(d);
  double h = dir * std::min(span / 100.0, std::max(span * 1e-6, 1e-4));
  std::size_t accepted = 0, attempts = 0;
  while (dir * (t1 - t) > 0.0) {
    if (++attempts > max_steps)
      throw numerical_error("adaptive ode: step limit exceeded at t = " + std::to_string(t));
    if (dir * (t + h - t1) > 0.0) h = t1 - t;

    for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + h * a21 * k1[i];
    k2 = f(tmp, t + c2 * h);
    for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + h * (a31 * k1[i] + a32 * k2[i]);
    k3 = f(tmp, t + c3 * h);
    for (std::size_t i = 0; i < d; ++i)
      tmp[i] = x[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
    k4 = f(tmp, t + c4 * h);
    for (std::size_t i = 0; i < d; ++i)
      tmp[i] = x[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
    k5 = f(tmp, t + c5 * h);
    for (std::size_t i = 0; i < d; ++i)
      tmp[i] = x[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
    k6 = f(tmp, t + h);
    for (std::size_t i = 0; i < d; ++i)
      xn[i] = x[i] + h * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] + b6 * k6[i]);
    k7 = f(xn, t + h);

    double err = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double e = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] +
                      e7 * k7[i]);
      double sc = tol + tol * std::max(std::abs(x[i]), std::abs(xn[i]));
      err += sq(e / sc);
    }
    err = std::sqrt(err / static_cast<double>(d));
    if (!std::isfinite(err))
      throw numerical_error("adaptive ode: diverged at t = " + std::to_string(t));

    if (err <= 1.0) {
      t += h;
      x = xn;
      k1 = k7;  // first-same-as-last
      check_state(x, t);
      path.t.push_back(t);
      path.x.push_back(x);
      ++accepted;
    }
    double fac = 0.9 * std::pow(std::max(err, 1e-10), -0.2);
    h *= std::min(5.0, std::max(0.2, fac));
  }
  return path;
}

}  // namespace detail

inline OdePath integrate_ode(const VectorField& f, const Vec& x0, double t0, double t1,
                             OdeMethod method, const OdeOptions& opts = {}) {
  if (x0.empty()) throw std::invalid_argument("integrate_ode: empty state");
  switch (method) {
    case OdeMethod::euler:
      return detail::fixed_step_ode(f, x0, t0, t1, opts.steps, false);
    case OdeMethod::rk4:
      return detail::fixed_step_ode(f, x0, t0, t1, opts.steps, true);
    case OdeMethod::adaptive:
      return detail::dopri54(f, x0, t0, t1, opts.tol, opts.max_steps);
  }
  throw std::invalid_argument("integrate_ode: unknown method");
}

// Euler-Maruyama for dx = (v + g^2/2 s) dt + g dW on the clipped interval
// [eps, 1 - eps], eps = 1/(2 steps); both drift terms are evaluated on the same
// grid. When g(t) returns exactly 0 the noise and score are skipped, so the
// update reduces bit-for-bit to the explicit Euler ODE step on that grid.
inline OdePath integrate_sde(const VectorField& field, const VectorField& score,
                             const DiffusionFn& g, const Vec& x0, std::size_t steps,
                             std::uint64_t seed, std::uint64_t stream = 0) {
  if (steps == 0) throw std::invalid_argument("integrate_sde: steps must be positive");
  if (x0.empty()) throw std::invalid_argument("integrate_sde: empty state");
  const double eps = 1.0 / (2.0 * static_cast<double>(steps));
  const double t0 = eps, t1 = 1.0 - eps;
  const double h = (t1 - t0) / static_cast<double>(steps);
  const double sqrt_h = std::sqrt(h);
  const std::size_t d = x0.size();

  CounterRng rng(seed, stream);
  OdePath path;
  path.t.reserve(steps + 1);
  path.x.reserve(steps + 1);
  Vec x = x0;
  path.t.push_back(t0);
  path.x.push_back(x);
  for (std::size_t s = 0; s < steps; ++s) {
    double t = t0 + h * static_cast<double>(s);
    double gt = g(t);
    Vec v = field(x, t);
    if (gt == 0.0) {
      for (std::size_t i = 0; i < d; ++i) x[i] = x[i] + h * v[i];
    } else {
      Vec sc = score(x, t);
      double half_g2 = 0.5 * gt * gt;
      for (std::size_t i = 0; i < d; ++i)
        x[i] = x[i] + h * (v[i] + half_g2 * sc[i]) + gt * sqrt_h * rng.normal();
    }
    double tn = (s + 1 == steps) ? t1 : t0 + h * static_cast<double>(s + 1);
    detail::check_state(x, tn);
    path.t.push_back(tn);
    path.x.push_back(x);
  }
  return path;
}

// Schroedinger-bridge diffusion schedule g(t) = sigma_e sqrt(t (1-t)).
inline DiffusionFn bridge_diffusion(double sigma_e) {
  return [sigma_e](double t) { return sigma_e * std::sqrt(std::max(0.0, t * (1.0 - t))); };
}

}  // namespace exfm
