#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "core.hpp"

namespace exfm {

// Counter-based generator: output k is splitmix64's mix applied to
// key + k * golden, where key itself mixes (seed, stream). Draw k depends only on
// (seed, stream, k), never on library internals, so runs replay bit-for-bit across
// platforms and substreams can be split without coordination
// (CounterRng(seed, i) per path/worker).
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(mix(mix(seed + kGolden) + stream)), ctr_(0) {}

  std::uint64_t next_u64() { return mix(key_ + (++ctr_) * kGolden); }

  // [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // (0, 1]
  double uniform_pos() { return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // Box-Muller; the pair is generated together and the second value cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform_pos();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

  Vec normal_vec(std::size_t d) {
    Vec v(d);
    for (auto& x : v) x = normal();
    return v;
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t ctr_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace exfm
