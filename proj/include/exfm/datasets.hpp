#pragma once

#include <algorithm>
#include <string>

#include "core.hpp"
#include "csv.hpp"
#include "densities.hpp"
#include "rng.hpp"

namespace exfm {

// 2-D toy distributions, all landing in roughly [-4, 4]^2. The constants below
// (scales, noise levels, offsets) follow the widely used open-source toy-data
// conventions and are normative for this module:
//   swissroll      theta = 1.5 pi (1 + 2u); (theta cos theta, theta sin theta)
//                  + N(0,1) noise per axis, divided by 5
//   circles        half the points on radius 1, half on radius 0.5, noise 0.08,
//                  scaled by 3
//   rings          quarter each on radii {0.25, 0.5, 0.75, 1} (angles evenly
//                  spaced), scaled by 3, then + N(0, 0.08^2)
//   moons          upper arc (cos a, sin a), lower arc (1 - cos a, -sin a + 0.5),
//                  a uniform on [0, pi], + N(0, 0.1^2), *2 + (-1, -0.2)
//   8gaussians     centers at radius 4 on the 8 compass directions,
//                  + N(0, 0.5^2), divided by 1.414
//   pinwheel       5 blades, radial std 0.3, tangential std 0.1, rate 0.25,
//                  angle = blade + 0.25 exp(radial feature), scaled by 2
//   2spirals       r = sqrt(u) * 3 pi; (-cos r, sin r) r + U[0, 0.5) per axis,
//                  half the points mirrored, / 3, + N(0, 0.1^2)
//   checkerboard   x ~ U[-2,2), y ~ U[0,1) - {0,2} + (floor(x) mod 2), * 2
enum class ToyName {
  swissroll,
  circles,
  rings,
  moons,
  eight_gaussians,
  pinwheel,
  two_spirals,
  checkerboard
};

inline ToyName toy_from_string(const std::string& s) {
  if (s == "swissroll") return ToyName::swissroll;
  if (s == "circles") return ToyName::circles;
  if (s == "rings") return ToyName::rings;
  if (s == "moons") return ToyName::moons;
  if (s == "8gaussians") return ToyName::eight_gaussians;
  if (s == "pinwheel") return ToyName::pinwheel;
  if (s == "2spirals") return ToyName::two_spirals;
  if (s == "checkerboard") return ToyName::checkerboard;
  throw std::invalid_argument("unknown toy dataset: " + s);
}

inline const std::vector<std::string>& toy_names() {
  static const std::vector<std::string> names = {"swissroll", "circles",   "rings",
                                                 "moons",     "8gaussians", "pinwheel",
                                                 "2spirals",  "checkerboard"};
  return names;
}

namespace detail {

inline void shuffle_rows(Matrix& m, CounterRng& rng) {
  for (std::size_t i = m.rows; i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.uniform_index(i));
    if (j == i - 1) continue;
    for (std::size_t c = 0; c < m.cols; ++c) std::swap(m[i - 1][c], m[j][c]);
  }
}

}  // namespace detail

inline Matrix make_toy(ToyName name, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("make_toy: n must be positive");
  CounterRng rng(seed, static_cast<std::uint64_t>(name) + 0x746f79);
  Matrix out(n, 2);
  const double pi = std::numbers::pi;
  switch (name) {
    case ToyName::swissroll: {
      for (std::size_t i = 0; i < n; ++i) {
        double th = 1.5 * pi * (1.0 + 2.0 * rng.uniform());
        out[i][0] = (th * std::cos(th) + rng.normal()) / 5.0;
        out[i][1] = (th * std::sin(th) + rng.normal()) / 5.0;
      }
      break;
    }
    case ToyName::circles: {
      for (std::size_t i = 0; i < n; ++i) {
        double r = (i < n / 2) ? 1.0 : 0.5;
        double a = 2.0 * pi * rng.uniform();
        out[i][0] = 3.0 * (r * std::cos(a) + 0.08 * rng.normal());
        out[i][1] = 3.0 * (r * std::sin(a) + 0.08 * rng.normal());
      }
      detail::shuffle_rows(out, rng);
      break;
    }
    case ToyName::rings: {
      static const double radii[4] = {1.0, 0.75, 0.5, 0.25};
      std::size_t per = n / 4;
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t ring = std::min<std::size_t>(per ? i / per : 0, 3);
        std::size_t k = i - ring * per;
        std::size_t count = (ring == 3) ? n - 3 * per : per;
        double a = 2.0 * pi * static_cast<double>(k) / static_cast<double>(std::max<std::size_t>(count, 1));
        out[i][0] = 3.0 * radii[ring] * std::cos(a);
        out[i][1] = 3.0 * radii[ring] * std::sin(a);
      }
      detail::shuffle_rows(out, rng);
      for (std::size_t i = 0; i < n; ++i) {
        out[i][0] += 0.08 * rng.normal();
        out[i][1] += 0.08 * rng.normal();
      }
      break;
    }
    case ToyName::moons: {
      for (std::size_t i = 0; i < n; ++i) {
        double a = pi * rng.uniform();
        double x, y;
        if (i < n / 2) {
          x = std::cos(a);
          y = std::sin(a);
        } else {
          x = 1.0 - std::cos(a);
          y = -std::sin(a) + 0.5;
        }
        x += 0.1 * rng.normal();
        y += 0.1 * rng.normal();
        out[i][0] = 2.0 * x - 1.0;
        out[i][1] = 2.0 * y - 0.2;
      }
      detail::shuffle_rows(out, rng);
      break;
    }
    case ToyName::eight_gaussians: {
      const double r2 = std::sqrt(0.5);
      static const double cx[8] = {1, -1, 0, 0, 1, 1, -1, -1};
      static const double cy[8] = {0, 0, 1, -1, 1, -1, 1, -1};
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t c = static_cast<std::size_t>(rng.uniform_index(8));
        double sx = (c < 4) ? cx[c] : cx[c] * r2;
        double sy = (c < 4) ? cy[c] : cy[c] * r2;
        out[i][0] = (4.0 * sx + 0.5 * rng.normal()) / 1.414;
        out[i][1] = (4.0 * sy + 0.5 * rng.normal()) / 1.414;
      }
      break;
    }
    case ToyName::pinwheel: {
      const double radial_std = 0.3, tangential_std = 0.1, rate = 0.25;
      const std::size_t blades = 5;
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t b = static_cast<std::size_t>(rng.uniform_index(blades));
        double fr = 1.0 + radial_std * rng.normal();
        double ft = tangential_std * rng.normal();
        double ang = 2.0 * pi * static_cast<double>(b) / static_cast<double>(blades) +
                     rate * std::exp(fr);
        double ca = std::cos(ang), sa = std::sin(ang);
        out[i][0] = 2.0 * (fr * ca + ft * sa);
        out[i][1] = 2.0 * (-fr * sa + ft * ca);
      }
      break;
    }
    case ToyName::two_spirals: {
      for (std::size_t i = 0; i < n; ++i) {
        double r = std::sqrt(rng.uniform()) * 3.0 * pi;
        double x = -std::cos(r) * r + 0.5 * rng.uniform();
        double y = std::sin(r) * r + 0.5 * rng.uniform();
        double sign = (i < n / 2) ? 1.0 : -1.0;
        out[i][0] = sign * x / 3.0 + 0.1 * rng.normal();
        out[i][1] = sign * y / 3.0 + 0.1 * rng.normal();
      }
      detail::shuffle_rows(out, rng);
      break;
    }
    case ToyName::checkerboard: {
      for (std::size_t i = 0; i < n; ++i) {
        double x1 = rng.uniform() * 4.0 - 2.0;
        double shift = (rng.uniform_index(2) == 0) ? 0.0 : 2.0;
        double x2 = rng.uniform() - shift;
        long cell = static_cast<long>(std::floor(x1));
        double parity = static_cast<double>(((cell % 2) + 2) % 2);
        out[i][0] = 2.0 * x1;
        out[i][1] = 2.0 * (x2 + parity);
      }
      break;
    }
  }
  return out;
}

inline Matrix make_toy(const std::string& name, std::size_t n, std::uint64_t seed) {
  return make_toy(toy_from_string(name), n, seed);
}

struct LoadOptions {
  bool standardize = false;
};

struct LoadedDataset {
  EmpiricalSet set;
  Vec shift;  // applied as (x - shift) / scale when standardized
  Vec scale;
};

inline LoadedDataset load_dataset_csv(const std::string& path, const LoadOptions& opts = {}) {
  CsvTable t = read_csv(path);
  if (t.values.rows == 0) throw std::runtime_error(path + ": no data rows");
  LoadedDataset out{EmpiricalSet(std::move(t.values), path), Vec(t.header.size(), 0.0),
                    Vec(t.header.size(), 1.0)};
  if (opts.standardize) {
    out.shift = out.set.mean();
    Vec var = out.set.variance();
    for (std::size_t j = 0; j < var.size(); ++j) {
      out.scale[j] = std::sqrt(var[j]);
      if (!(out.scale[j] > 0.0))
        throw std::runtime_error(path + ": column " + std::to_string(j) +
                                 " has zero variance; cannot standardize");
    }
    for (std::size_t i = 0; i < out.set.points.rows; ++i)
      for (std::size_t j = 0; j < out.set.points.cols; ++j)
        out.set.points[i][j] = (out.set.points[i][j] - out.shift[j]) / out.scale[j];
  }
  return out;
}

}  // namespace exfm
