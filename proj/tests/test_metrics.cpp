#include <algorithm>
#include <catch2/catch_amalgamated.hpp>
#include <exfm/exact_fields.hpp>
#include <exfm/metrics.hpp>
#include <numeric>

using namespace exfm;

namespace {

Matrix random_points(std::size_t n, std::size_t d, std::uint64_t seed) {
  CounterRng rng(seed);
  Matrix m(n, d);
  for (auto& v : m.data) v = rng.normal();
  return m;
}

double naive_energy(const Matrix& x, const Matrix& y) {
  auto mean_dist = [](const Matrix& a, const Matrix& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows; ++i)
      for (std::size_t j = 0; j < b.rows; ++j)
        s += std::sqrt(sq_dist(a[i], b[j], a.cols));
    return s / (static_cast<double>(a.rows) * static_cast<double>(b.rows));
  };
  return 2.0 * mean_dist(x, y) - mean_dist(x, x) - mean_dist(y, y);
}

}  // namespace

TEST_CASE("energy distance basics") {
  Matrix x = random_points(40, 2, 1);
  REQUIRE(energy_distance(x, x) == Catch::Approx(0.0).margin(1e-12));

  Matrix a(1, 1), b(1, 1);
  a[0][0] = 0.0;
  b[0][0] = 1.0;
  REQUIRE(energy_distance(a, b) == Catch::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("energy distance equals the naive double loop and is symmetric") {
  Matrix x = random_points(37, 3, 2);
  Matrix y = random_points(53, 3, 3);
  double e = energy_distance(x, y);
  REQUIRE(e == Catch::Approx(naive_energy(x, y)).margin(1e-12));
  REQUIRE(e == Catch::Approx(energy_distance(y, x)).margin(1e-12));
  REQUIRE(e >= -1e-12);

  // permuting one set changes nothing
  Matrix xp = x;
  for (std::size_t i = 0; i + 1 < xp.rows; i += 2)
    for (std::size_t c = 0; c < xp.cols; ++c) std::swap(xp[i][c], xp[i + 1][c]);
  REQUIRE(energy_distance(xp, y) == Catch::Approx(e).margin(1e-12));

  Matrix wrong(5, 2);
  REQUIRE_THROWS_AS(energy_distance(x, wrong), std::invalid_argument);
}

TEST_CASE("w2 basics") {
  Matrix x = random_points(20, 2, 4);
  REQUIRE(wasserstein2(x, x) == Catch::Approx(0.0).margin(1e-12));

  Matrix a(1, 1), b(1, 1);
  a[0][0] = 0.0;
  b[0][0] = 3.0;
  REQUIRE(wasserstein2(a, b) == Catch::Approx(3.0).epsilon(1e-15));

  Matrix unequal(3, 2);
  REQUIRE_THROWS_AS(wasserstein2(x, unequal), std::invalid_argument);
}

TEST_CASE("w2 matches permutation brute force at n = 6") {
  Matrix x = random_points(6, 2, 5);
  Matrix y = random_points(6, 2, 6);
  std::vector<std::size_t> perm{0, 1, 2, 3, 4, 5};
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < 6; ++i) s += sq_dist(x[i], y[perm[i]], 2);
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  REQUIRE(wasserstein2(x, y) == Catch::Approx(std::sqrt(best / 6.0)).margin(1e-12));
}

TEST_CASE("1d sorted coupling agrees with the assignment solver") {
  Matrix x1(50, 1), y1(50, 1);
  CounterRng rng(7);
  for (auto& v : x1.data) v = rng.normal();
  for (auto& v : y1.data) v = 2.0 + 1.5 * rng.normal();
  // same points embedded in 2d with a dead second coordinate
  Matrix x2(50, 2, 0.0), y2(50, 2, 0.0);
  for (std::size_t i = 0; i < 50; ++i) {
    x2[i][0] = x1[i][0];
    y2[i][0] = y1[i][0];
  }
  REQUIRE(wasserstein2(x1, y1) == Catch::Approx(wasserstein2(x2, y2)).margin(1e-12));
}

TEST_CASE("w2 satisfies the triangle inequality on random triples") {
  for (std::uint64_t s = 0; s < 3; ++s) {
    Matrix a = random_points(64, 2, 10 + s);
    Matrix b = random_points(64, 2, 20 + s);
    Matrix c = random_points(64, 2, 30 + s);
    REQUIRE(wasserstein2(a, c) <= wasserstein2(a, b) + wasserstein2(b, c) + 1e-9);
  }
}

TEST_CASE("nll of a zero field on standard normal samples hits the analytic constant") {
  Matrix z = random_points(2000, 2, 11);
  VectorField zero = [](const Vec& x, double) { return Vec(x.size(), 0.0); };
  double v = nll(zero, z);
  REQUIRE(v == Catch::Approx(1.0 + kLog2Pi).margin(0.08));
}

TEST_CASE("nll of the closed-form field maps target samples back to the source") {
  Gaussian g0(0.0, 1.0), g1(2.0, 3.0);
  VectorField f = [&](const Vec& x, double t) { return gauss_to_gauss_field(g0, g1, x, t); };
  CounterRng rng(12);
  Matrix samples = sample_matrix(Density(g1), 2000, rng);
  double v = nll(f, samples, 1e-7);
  REQUIRE(v == Catch::Approx(0.5 * (1.0 + kLog2Pi)).margin(0.06));
}

TEST_CASE("nll of the exact reverse image of zero is the pure constant") {
  Gaussian g0(0.0, 1.0), g1(2.0, 3.0);
  VectorField f = [&](const Vec& x, double t) { return gauss_to_gauss_field(g0, g1, x, t); };
  Matrix one(1, 1);
  one[0][0] = gauss_to_gauss_trajectory(g0, g1, {0.0}, 1.0)[0];
  REQUIRE(one[0][0] == Catch::Approx(2.0));
  REQUIRE(nll(f, one, 1e-10) == Catch::Approx(0.5 * kLog2Pi).margin(1e-5));
}

TEST_CASE("nll reports the failing sample on divergence") {
  VectorField blowup = [](const Vec& x, double) { return Vec{sq(x[0]) * 1e3}; };
  Matrix bad(1, 1);
  bad[0][0] = -50.0;
  try {
    nll(blowup, bad, 1e-6);
    FAIL("expected numerical_error");
  } catch (const numerical_error& e) {
    REQUIRE(std::string(e.what()).find("sample 0") != std::string::npos);
  }
}
