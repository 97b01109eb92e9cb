#pragma once

#include "core.hpp"
#include "densities.hpp"
#include "flow_maps.hpp"
#include "quadrature.hpp"

namespace exfm {

// Marginal velocity of the linear interpolation between diagonal Gaussians,
// evaluated axis by axis:
//   v(x,t) = (sigma1^2 t (x - mu0) - sigma0^2 (1-t)(x - mu1))
//            / (sigma1^2 t^2 + sigma0^2 (1-t)^2).
inline Vec gauss_to_gauss_field(const Gaussian& rho0, const Gaussian& rho1, const Vec& x,
                                double t) {
  check_time(t);
  if (x.size() != rho0.dim() || rho0.dim() != rho1.dim())
    throw std::invalid_argument("gauss_to_gauss_field: dimension mismatch");
  Vec v(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double s0 = sq(rho0.scale[i]), s1 = sq(rho1.scale[i]);
    double den = s1 * sq(t) + s0 * sq(1.0 - t);
    v[i] = (s1 * t * (x[i] - rho0.mean[i]) - s0 * (1.0 - t) * (x[i] - rho1.mean[i])) / den;
  }
  return v;
}

// Integral curve of the field above through x0 at t=0:
//   x(t) = (1-t) mu0 + t mu1 + (x0 - mu0) sqrt((sigma1/sigma0)^2 t^2 + (1-t)^2).
inline Vec gauss_to_gauss_trajectory(const Gaussian& rho0, const Gaussian& rho1, const Vec& x0,
                                     double t) {
  check_time(t);
  Vec x(x0.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double r = rho1.scale[i] / rho0.scale[i];
    x[i] = (1.0 - t) * rho0.mean[i] + t * rho1.mean[i] +
           (x0[i] - rho0.mean[i]) * std::sqrt(sq(r * t) + sq(1.0 - t));
  }
  return x;
}

inline void require_symmetric_pair(const GaussianMixture& m) {
  if (m.components.size() != 2)
    throw std::invalid_argument("gauss_to_gm_field: exactly two components supported");
  if (std::abs(m.weights[0] - 0.5) > 1e-12 || std::abs(m.weights[1] - 0.5) > 1e-12)
    throw std::invalid_argument("gauss_to_gm_field: weights must both be 1/2");
  for (std::size_t i = 0; i < m.dim(); ++i) {
    if (std::abs(m.components[0].mean[i] + m.components[1].mean[i]) > 1e-12)
      throw std::invalid_argument("gauss_to_gm_field: component means must be opposite");
    if (std::abs(m.components[0].scale[i] - m.components[1].scale[i]) > 1e-12)
      throw std::invalid_argument("gauss_to_gm_field: component scales must match");
  }
}

// Standard normal source to a symmetric two-component mixture. With shared
// component scale the marginal velocity is a softmax-weighted pair of
// single-Gaussian fields; the branch logits are combined in log space.
inline Vec gauss_to_gm_field(const GaussianMixture& rho1, const Vec& x, double t) {
  check_time(t);
  if (t >= 1.0 - kLinearTimeGuard)
    throw std::invalid_argument("gauss_to_gm_field: t must be below 1");
  require_symmetric_pair(rho1);
  if (x.size() != rho1.dim())
    throw std::invalid_argument("gauss_to_gm_field: dimension mismatch");
  Gaussian rho0 = standard_gaussian(x.size());
  double logit[2];
  for (int c = 0; c < 2; ++c) {
    const Gaussian& g = rho1.components[c];
    double l = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double den = sq(g.scale[i] * t) + sq(1.0 - t);
      l -= 0.5 * sq(x[i] - g.mean[i] * t) / den;
    }
    logit[c] = l;
  }
  double mx = std::max(logit[0], logit[1]);
  double w0 = std::exp(logit[0] - mx);
  double w1 = std::exp(logit[1] - mx);
  double z = w0 + w1;
  Vec v(x.size(), 0.0);
  for (int c = 0; c < 2; ++c) {
    Vec vc = gauss_to_gauss_field(rho0, rho1.components[c], x, t);
    double w = (c == 0 ? w0 : w1) / z;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += w * vc[i];
  }
  return v;
}

namespace detail {

// Hull of the per-component posterior +-12 sd, where the posterior is the product
// of the map weight (Gaussian in x1 with center/width from the inverse) and the
// rho1 component.
inline std::pair<double, double> integration_interval(const ConditionalMap& map,
                                                      const Density& rho1, double x, double t,
                                                      const Density& rho0,
                                                      std::vector<double>* centers) {
  std::vector<Gaussian> comps;
  if (const auto* g = std::get_if<Gaussian>(&rho1)) {
    comps.push_back(*g);
  } else {
    for (const auto& g : std::get<GaussianMixture>(rho1).components) comps.push_back(g);
  }
  double mu0, s0;
  if (const auto* g0 = std::get_if<Gaussian>(&rho0)) {
    mu0 = g0->mean[0];
    s0 = g0->scale[0];
  } else {
    // widen with the mixture envelope
    const auto& m0 = std::get<GaussianMixture>(rho0);
    Vec mm = mean(m0), vv = variance(m0);
    mu0 = mm[0];
    s0 = std::sqrt(vv[0]) + 1.0;
  }

  // Weight as a Gaussian in x1: for affine maps x = a x0 + b x1 the weight
  // rho0((x - b x1)/a) peaks at x1* = (x - a mu0)/b with width |a/b| s0; for the
  // bridge the x0-marginal is N(x | t x1, (1-t)^2 s0^2 + se^2 t(1-t)).
  double wc = 0.0, ww = std::numeric_limits<double>::infinity();
  if (map.deterministic()) {
    auto c = affine_coefs(map, t);
    if (std::abs(c.b) > 1e-300) {
      wc = (x - c.a * mu0) / c.b;
      ww = std::abs(c.a / c.b) * s0;
    }
  } else {
    double var = sq(1.0 - t) * sq(s0) + sq(map.sigma_e) * t * (1.0 - t);
    if (t > 1e-300) {
      wc = x / t;
      ww = std::sqrt(var) / t;
    }
  }

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& g : comps) {
    double m = g.mean[0], s = g.scale[0];
    double pm = m, ps = s;
    if (std::isfinite(ww) && ww > 0.0) {
      double prec = 1.0 / sq(s) + 1.0 / sq(ww);
      ps = std::sqrt(1.0 / prec);
      pm = (m / sq(s) + wc / sq(ww)) / prec;
    }
    lo = std::min(lo, pm - 12.0 * ps);
    hi = std::max(hi, pm + 12.0 * ps);
    if (centers) centers->push_back(pm);
  }
  return {lo, hi};
}

}  // namespace detail

// One-dimensional marginal velocity by adaptive quadrature of
// v(x,t) = E[w(t, x1, x) | x] with the map's transition weight, for any map
// variant and Gaussian / mixture endpoints. Relative tolerance 1e-9 or better.
inline double quadrature_field_map(const ConditionalMap& map, const Density& rho0,
                                   const Density& rho1, double x, double t) {
  if (dim(rho0) != 1 || dim(rho1) != 1)
    throw std::invalid_argument("quadrature_field_map: one-dimensional only");
  std::vector<double> centers;
  auto [lo, hi] = detail::integration_interval(map, rho1, x, t, rho0, &centers);
  auto logw = [&](double y) {
    return conditional_log_weight(map, t, Vec{x}, Vec{y}, rho0) + log_density(rho1, Vec{y});
  };
  auto vel = [&](double y) { return conditional_velocity(map, t, Vec{y}, Vec{x})[0]; };
  return quadrature_ratio(vel, logw, lo, hi, 1e-11, centers);
}

// Linear-map field for arbitrary 1-D endpoint densities.
inline double quadrature_field(const Density& rho0, const Density& rho1, double x, double t) {
  if (t >= 1.0 - kLinearTimeGuard)
    throw std::invalid_argument("quadrature_field: t must be below 1");
  return quadrature_field_map(ConditionalMap::linear(), rho0, rho1, x, t);
}

// Field of the sigma_s-regularized map, defined on all of [0, 1].
inline double regularized_field(const Density& rho0, const Density& rho1, double x, double t,
                                double sigma_s) {
  return quadrature_field_map(ConditionalMap::regularized_linear(sigma_s), rho0, rho1, x, t);
}

// Diffusion-path marginals for standard normal source and rho1 = N(mu1, sigma1^2),
// with bridge width sigma_e. Marginal law at t is N(t mu1, V(t)),
// V(t) = t(1-t) sigma_e^2 + sigma1^2 t^2 + (1-t)^2.
struct SdeGaussParams {
  Vec mu1;
  Vec sigma1;
  double sigma_e = 1.0;
};

inline Vec sde_gauss_field(const SdeGaussParams& p, const Vec& x, double t) {
  check_time(t);
  double se2 = sq(p.sigma_e);
  Vec v(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double s1 = sq(p.sigma1[i]);
    double den = t * (1.0 - t) * se2 + s1 * sq(t) + sq(1.0 - t);
    v[i] = (x[i] * (t * s1 + 0.5 * (1.0 - t) * se2) -
            (x[i] - p.mu1[i]) * ((1.0 - t) + 0.5 * t * se2)) /
           den;
  }
  return v;
}

inline Vec sde_gauss_score(const SdeGaussParams& p, const Vec& x, double t) {
  check_time(t);
  double se2 = sq(p.sigma_e);
  Vec s(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double den = sq(1.0 - t) + t * (1.0 - t) * se2 + sq(p.sigma1[i]) * sq(t);
    s[i] = (t * p.mu1[i] - x[i]) / den;
  }
  return s;
}

inline Vec sde_gauss_trajectory(const SdeGaussParams& p, const Vec& x0, double t) {
  check_time(t);
  double se2 = sq(p.sigma_e);
  Vec x(x0.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double v = t * (1.0 - t) * se2 + sq(p.sigma1[i]) * sq(t) + sq(1.0 - t);
    x[i] = p.mu1[i] * t + x0[i] * std::sqrt(v);
  }
  return x;
}

// Straight-line (optimal transport) interpolation toward N(mu, diag(sigma^2))
// from the standard normal: per axis
//   v_i(x,t) = (mu_i + x_i (sigma_i - 1)) / (1 + (sigma_i - 1) t).
struct OtDiagParams {
  Vec mu;
  Vec sigma;
};

inline Vec ot_diag_field(const OtDiagParams& p, const Vec& x, double t) {
  check_time(t);
  Vec v(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double den = 1.0 + (p.sigma[i] - 1.0) * t;
    if (!(den > 0.0)) throw numerical_error("ot_diag_field: degenerate interpolation scale");
    v[i] = (p.mu[i] + x[i] * (p.sigma[i] - 1.0)) / den;
  }
  return v;
}

inline Vec ot_diag_trajectory(const OtDiagParams& p, const Vec& x0, double t) {
  check_time(t);
  Vec x(x0.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] = (1.0 + (p.sigma[i] - 1.0) * t) * x0[i] + p.mu[i] * t;
  return x;
}

}  // namespace exfm
