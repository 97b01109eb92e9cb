#include <catch2/catch_amalgamated.hpp>
#include <exfm/flow_maps.hpp>

using namespace exfm;

namespace {

std::vector<ConditionalMap> deterministic_maps() {
  return {ConditionalMap::linear(), ConditionalMap::regularized_linear(0.1),
          ConditionalMap::ve(), ConditionalMap::vp()};
}

}  // namespace

TEST_CASE("endpoint behaviour of the deterministic maps") {
  Vec x0{1.5, -0.5}, x1{-2.0, 3.0};
  auto lin = ConditionalMap::linear();
  REQUIRE(forward(lin, 0.0, x0, x1) == x0);
  REQUIRE(forward(lin, 1.0, x0, x1) == x1);

  auto reg = ConditionalMap::regularized_linear(0.1);
  Vec at1 = forward(reg, 1.0, x0, x1);
  for (std::size_t i = 0; i < 2; ++i)
    REQUIRE(at1[i] == Catch::Approx(x1[i] + 0.1 * x0[i]).epsilon(1e-14));

  auto vp = ConditionalMap::vp();
  Vec vp0 = forward(vp, 0.0, x0, x1);  // alpha_1 = cos(pi/2): pure source
  for (std::size_t i = 0; i < 2; ++i) REQUIRE(vp0[i] == Catch::Approx(x0[i]).margin(1e-15));
  Vec vp1 = forward(vp, 1.0, x0, x1);
  for (std::size_t i = 0; i < 2; ++i) REQUIRE(vp1[i] == Catch::Approx(x1[i]).margin(1e-12));

  auto ve = ConditionalMap::ve();
  Vec ve1 = forward(ve, 1.0, x0, x1);
  REQUIRE(ve1 == x1);  // sigma_0 = 0
  Vec ve0 = forward(ve, 0.0, x0, x1);
  for (std::size_t i = 0; i < 2; ++i)
    REQUIRE(ve0[i] == Catch::Approx(x0[i] + x1[i]).epsilon(1e-14));
}

TEST_CASE("inverse undoes forward") {
  Vec x0{0.3, -1.1}, x1{2.0, 0.4};
  for (const auto& m : deterministic_maps()) {
    for (double t : {0.0, 0.31, 0.77, 0.95}) {
      Vec x = forward(m, t, x0, x1);
      Vec back = inverse(m, t, x, x1);
      for (std::size_t i = 0; i < 2; ++i) REQUIRE(back[i] == Catch::Approx(x0[i]).margin(1e-12));
    }
  }
}

TEST_CASE("finite difference of forward matches conditional_velocity") {
  Vec x0{0.8, -0.2}, x1{-1.4, 2.2};
  const double h = 1e-6;
  for (const auto& m : deterministic_maps()) {
    for (double t : {0.2, 0.5, 0.8}) {
      Vec x = forward(m, t, x0, x1);
      Vec w = conditional_velocity(m, t, x1, x);
      Vec fp = forward(m, t + h, x0, x1);
      Vec fm = forward(m, t - h, x0, x1);
      for (std::size_t i = 0; i < 2; ++i) {
        double fd = (fp[i] - fm[i]) / (2.0 * h);
        REQUIRE(w[i] == Catch::Approx(fd).margin(1e-6));
      }
    }
  }
}

TEST_CASE("pair_velocity equals conditional_velocity on the path") {
  Vec x0{0.8, -0.2}, x1{-1.4, 2.2};
  for (const auto& m : deterministic_maps()) {
    for (double t : {0.1, 0.5, 0.9}) {
      Vec x = forward(m, t, x0, x1);
      Vec pv = pair_velocity(m, t, x0, x1, x);
      Vec w = conditional_velocity(m, t, x1, x);
      for (std::size_t i = 0; i < 2; ++i) REQUIRE(pv[i] == Catch::Approx(w[i]).margin(1e-10));
    }
  }
}

TEST_CASE("linear velocity closed form") {
  Vec x1{2.0}, x{0.5};
  Vec w = conditional_velocity(ConditionalMap::linear(), 0.25, x1, x);
  REQUIRE(w[0] == Catch::Approx((2.0 - 0.5) / 0.75).epsilon(1e-14));
}

TEST_CASE("regularized map approaches the linear map as sigma_s -> 0") {
  Vec x0{0.8}, x1{-1.4};
  auto lin = ConditionalMap::linear();
  auto reg = ConditionalMap::regularized_linear(1e-10);
  for (double t : {0.1, 0.6, 0.9}) {
    Vec a = forward(lin, t, x0, x1);
    Vec b = forward(reg, t, x0, x1);
    REQUIRE(a[0] == Catch::Approx(b[0]).margin(1e-9));
  }
}

TEST_CASE("log weight is the source density at the inverse") {
  Density rho0 = standard_gaussian(1);
  auto lin = ConditionalMap::linear();
  REQUIRE(conditional_log_weight(lin, 0.0, {0.0}, {5.0}, rho0) ==
          Catch::Approx(-0.5 * kLog2Pi).epsilon(1e-14));
  double t = 0.4;
  Vec x{1.0}, x1{2.5};
  double expect = log_density(rho0, inverse(lin, t, x, x1));
  REQUIRE(conditional_log_weight(lin, t, x, x1, rho0) == Catch::Approx(expect).epsilon(1e-14));
}

TEST_CASE("inverse jacobian scale depends on t only") {
  // d inverse / dx measured by finite differences at scattered (x, x1) pairs
  Density rho0 = standard_gaussian(1);
  const double h = 1e-6;
  for (const auto& m : deterministic_maps()) {
    for (double t : {0.15, 0.5, 0.85}) {
      double ref = 0.0;
      bool first = true;
      for (double x : {-2.0, 0.3, 1.7}) {
        for (double x1 : {-1.0, 0.9, 2.4}) {
          double up = inverse(m, t, {x + h}, {x1})[0];
          double dn = inverse(m, t, {x - h}, {x1})[0];
          double jac = (up - dn) / (2.0 * h);
          if (first) {
            ref = jac;
            first = false;
          } else {
            REQUIRE(jac == Catch::Approx(ref).epsilon(1e-6));
          }
        }
      }
    }
  }
}

TEST_CASE("brownian bridge forward interpolates endpoints and adds bridge noise") {
  auto bb = ConditionalMap::brownian_bridge(2.0);
  CounterRng rng(5);
  Vec x0{1.0}, x1{3.0};
  REQUIRE(forward(bb, 0.0, x0, x1, rng)[0] == 1.0);
  REQUIRE(forward(bb, 1.0, x0, x1, rng)[0] == 3.0);
  double t = 0.5;
  const std::size_t n = 40000;
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double v = forward(bb, t, x0, x1, rng)[0];
    s += v;
    s2 += v * v;
  }
  double mean = s / n;
  double var = s2 / n - mean * mean;
  REQUIRE(mean == Catch::Approx(2.0).margin(0.02));
  REQUIRE(var == Catch::Approx(4.0 * 0.25).margin(0.03));
}

TEST_CASE("brownian bridge log weight matches the x0-marginal gaussian") {
  auto bb = ConditionalMap::brownian_bridge(1.5);
  Density rho0 = standard_gaussian(1);
  double t = 0.3;
  Vec x{0.7}, x1{2.0};
  double var = sq(1.0 - t) + sq(1.5) * t * (1.0 - t);
  double expect = log_normal_pdf(0.7, t * 2.0, std::sqrt(var));
  REQUIRE(conditional_log_weight(bb, t, x, x1, rho0) == Catch::Approx(expect).epsilon(1e-13));
  // and via Monte Carlo over x0: E_z N(x | (1-t)z + t x1, se^2 t (1-t))
  CounterRng rng(17);
  double acc = 0.0;
  const std::size_t n = 400000;
  double nvar = sq(1.5) * t * (1.0 - t);
  for (std::size_t i = 0; i < n; ++i) {
    double z = rng.normal();
    acc += std::exp(log_normal_pdf(0.7, (1.0 - t) * z + t * 2.0, std::sqrt(nvar)));
  }
  REQUIRE(std::log(acc / n) == Catch::Approx(expect).margin(0.01));
}

TEST_CASE("brownian bridge pair quantities match the bridge law") {
  auto bb = ConditionalMap::brownian_bridge(1.0);
  double t = 0.4;
  Vec x0{1.0}, x1{-1.0}, x{0.2};
  double mean = (1.0 - t) * 1.0 + t * -1.0;
  double expect_v = (1.0 - 2.0 * t) / (2.0 * t * (1.0 - t)) * (0.2 - mean) + (-1.0 - 1.0);
  REQUIRE(pair_velocity(bb, t, x0, x1, x)[0] == Catch::Approx(expect_v).epsilon(1e-13));
  double expect_s = (mean - 0.2) / (t * (1.0 - t));
  REQUIRE(pair_score(bb, t, x0, x1, x)[0] == Catch::Approx(expect_s).epsilon(1e-13));
}

TEST_CASE("singularity guards and argument validation") {
  Vec x0{0.0}, x1{1.0};
  auto lin = ConditionalMap::linear();
  REQUIRE_THROWS_AS(inverse(lin, 1.0 - 5e-10, x0, x1), std::invalid_argument);
  REQUIRE_THROWS_AS(conditional_velocity(lin, 1.0, x1, x0), std::invalid_argument);
  REQUIRE_NOTHROW(forward(lin, 1.0, x0, x1));
  REQUIRE_THROWS_AS(forward(lin, 1.5, x0, x1), std::invalid_argument);
  REQUIRE_THROWS_AS(forward(lin, -0.1, x0, x1), std::invalid_argument);
  REQUIRE_THROWS_AS(inverse(ConditionalMap::ve(), 1.0, x0, x1), std::invalid_argument);
  REQUIRE_THROWS_AS(inverse(ConditionalMap::vp(), 1.0, x0, x1), std::invalid_argument);
  REQUIRE_NOTHROW(inverse(ConditionalMap::regularized_linear(0.1), 1.0, x0, x1));

  auto bb = ConditionalMap::brownian_bridge(1.0);
  REQUIRE_THROWS_AS(forward(bb, 0.5, x0, x1), std::invalid_argument);
  REQUIRE_THROWS_AS(conditional_velocity(bb, 0.0, x1, x0), std::invalid_argument);
  Density gm = GaussianMixture({0.5, 0.5}, {Gaussian(0., 1.), Gaussian(1., 1.)});
  REQUIRE_THROWS_AS(conditional_log_weight(bb, 0.5, x0, x1, gm), std::invalid_argument);
  REQUIRE_THROWS_AS(ConditionalMap::regularized_linear(0.0), std::invalid_argument);
  REQUIRE_THROWS_AS(ConditionalMap::brownian_bridge(-1.0), std::invalid_argument);
}
