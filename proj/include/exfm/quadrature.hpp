#pragma once

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <functional>

#include "core.hpp"

namespace exfm {

using LogFn = std::function<double(double)>;
using Fn = std::function<double(double)>;

// Ratio of integrals sharing one log-space weight:
//   ( \int num(y) exp(logw(y)) dy ) / ( \int exp(logw(y)) dy )  over [a, b].
// The weight is shifted by its probed maximum so that both integrals stay
// representable; the shift cancels in the ratio.
inline double quadrature_ratio(const Fn& num, const LogFn& logw, double a, double b,
                               double rel_tol = 1e-11,
                               const std::vector<double>& extra_probes = {}) {
  if (!(b > a)) throw std::invalid_argument("quadrature_ratio: empty interval");
  double shift = -std::numeric_limits<double>::infinity();
  constexpr int kProbes = 257;
  for (int i = 0; i < kProbes; ++i) {
    double y = a + (b - a) * static_cast<double>(i) / (kProbes - 1);
    shift = std::max(shift, logw(y));
  }
  for (double y : extra_probes)
    if (y >= a && y <= b) shift = std::max(shift, logw(y));
  if (!std::isfinite(shift))
    throw numerical_error("quadrature_ratio: weight underflows everywhere on the interval");

  using boost::math::quadrature::gauss_kronrod;
  auto den_f = [&](double y) { return std::exp(logw(y) - shift); };
  auto num_f = [&](double y) { return num(y) * std::exp(logw(y) - shift); };
  double den = gauss_kronrod<double, 61>::integrate(den_f, a, b, 15, rel_tol);
  if (!(den > 0.0) || !std::isfinite(den))
    throw numerical_error("quadrature_ratio: denominator underflowed");
  double numer = gauss_kronrod<double, 61>::integrate(num_f, a, b, 15, rel_tol);
  if (!std::isfinite(numer)) throw numerical_error("quadrature_ratio: numerator diverged");
  return numer / den;
}

}  // namespace exfm
