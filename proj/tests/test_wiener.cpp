#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>
#include <sstream>

#include "generators.hpp"
#include "stochflow/wiener.hpp"

using namespace stochflow;
using testgen::for_all;
using testgen::Gen;

namespace {

// Trapezoid rule on E|g|^q = 2 / sqrt(2 pi) int_0^inf x^q e^(-x^2 / 2) dx.
double quadrature_abs_moment(double q) {
  const int steps = 400000;
  const double top = 40.0, h = top / steps;
  double s = 0.0;
  for (int k = 0; k <= steps; ++k) {
    const double x = k * h;
    const double f = std::pow(x, q) * std::exp(-0.5 * x * x);
    s += (k == 0 || k == steps) ? 0.5 * f : f;
  }
  return 2.0 * s * h / std::sqrt(2.0 * std::numbers::pi);
}

DyadicPath handmade_path(int n_max, std::vector<double> values) {
  DyadicPath p;
  p.n_max = n_max;
  p.noise_dim = 1;
  p.values = std::move(values);
  return p;
}

}  // namespace

TEST_CASE("Philox known-answer vectors") {
  // Reference outputs of Philox4x32-10 published with the Random123 library.
  const Philox4x32 zero(0);
  const auto a = zero({0, 0, 0, 0});
  CHECK(a == Philox4x32::Block{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  const Philox4x32 ones(0xffffffffffffffffULL);
  const auto b = ones({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu});
  CHECK(b == Philox4x32::Block{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
}

TEST_CASE("uniform_open stays strictly inside the unit interval") {
  CHECK(uniform_open(0) > 0.0);
  CHECK(uniform_open(~std::uint64_t{0}) < 1.0);
  CHECK(uniform_open(std::uint64_t{1} << 63) == doctest::Approx(0.5));
}

TEST_CASE("normal quantile") {
  CHECK(normal_quantile(0.5) == 0.0);
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-14));
  CHECK(normal_quantile(0.995) == doctest::Approx(2.5758293035489004).epsilon(1e-14));
  CHECK(normal_quantile(1e-10) == doctest::Approx(-6.361340902404056).epsilon(1e-12));
  // symmetry and agreement with erfc as an independent oracle
  for_all(200, 21, [](Gen& g, std::uint64_t seed) {
    CAPTURE(seed);
    const double p = g.uniform(1e-12, 1.0 - 1e-12);
    const double z = normal_quantile(p);
    CHECK(normal_quantile(1.0 - p) == doctest::Approx(-z).epsilon(1e-9).scale(1.0));
    CHECK(0.5 * std::erfc(-z / std::sqrt(2.0)) == doctest::Approx(p).epsilon(1e-12));
  });
}

TEST_CASE("Gaussian stream is a pure function of seed, stream and index") {
  const GaussianStream s(42, 7), t(42, 7), other(42, 8);
  std::vector<double> block(37);
  s.fill(5, block);
  for (std::size_t j = 0; j < block.size(); ++j) {
    CHECK(block[j] == t.at(5 + j));
  }
  CHECK(s.at(0) != other.at(0));
  CHECK(GaussianStream(43, 7).at(0) != s.at(0));
}

TEST_CASE("paths start at zero and are reproducible") {
  for_all(20, 22, [](Gen& g, std::uint64_t seed) {
    const int n_max = g.integer(1, 12);
    const std::size_t dim = static_cast<std::size_t>(g.integer(1, 3));
    const auto p = sample_path(n_max, dim, seed, 3);
    const auto q = sample_path(n_max, dim, seed, 3);
    CHECK(p.values == q.values);
    CHECK(p.values.size() == p.nodes() * dim);
    for (std::size_t i = 0; i < dim; ++i) CHECK(p.value(0, i) == 0.0);
    CHECK(sample_path(n_max, dim, seed, 4).values != p.values);
  });
  CHECK_THROWS_AS(sample_path(0, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(sample_path(25, 1, 1), std::invalid_argument);
}

TEST_CASE("level-8 increment variance over 1e5 paths") {
  const int n = 8;
  const std::size_t paths = 100000;
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t k = 0; k < paths; ++k) {
    const auto p = sample_path(n, 1, 2024, k);
    const double inc = p.value(1, 0) - p.value(0, 0);
    sum += inc;
    sum_sq += inc * inc;
  }
  const double var_target = std::ldexp(1.0, -n);
  const double mean_sq = sum_sq / paths;
  // the variance of inc^2 is 2 sigma^4 for a centred Gaussian
  const double se = std::sqrt(2.0) * var_target / std::sqrt(static_cast<double>(paths));
  CHECK(std::fabs(mean_sq - var_target) <= 3.0 * se);
  CHECK(std::fabs(sum / paths) <= 3.0 * std::sqrt(var_target / paths));
}

TEST_CASE("scaled finest increments have mean 0 and variance 1") {
  const auto p = sample_path(18, 2, 99);
  const double scale = std::sqrt(std::ldexp(1.0, 18));
  for (std::size_t i = 0; i < 2; ++i) {
    double s = 0.0, s2 = 0.0;
    const std::size_t m = p.nodes() - 1;
    for (std::size_t k = 0; k < m; ++k) {
      const double z = scale * (p.value(k + 1, i) - p.value(k, i));
      s += z;
      s2 += z * z;
    }
    CHECK(std::fabs(s / m) <= 3.0 / std::sqrt(static_cast<double>(m)));
    CHECK(std::fabs(s2 / m - 1.0) <= 3.0 * std::sqrt(2.0 / m));
  }
}

TEST_CASE("interpolant slope examples") {
  const auto p = handmade_path(1, {0.0, 1.0, 1.0});
  CHECK(interpolant_slope(p, 1, 0.75)[0] == 0.0);
  CHECK(interpolant_slope(p, 1, 0.25)[0] == 2.0);
  CHECK(interpolant_slope(p, 1, 1.0)[0] == 0.0);

  const auto q = sample_path(6, 2, 5);
  for (std::size_t k = 0; k < 64; ++k) {
    const double t = (k + 0.5) / 64.0;
    const auto s = interpolant_slope(q, 6, t);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(s[i] == doctest::Approx(64.0 * (q.value(k + 1, i) - q.value(k, i))).epsilon(1e-14));
    }
  }
}

TEST_CASE("interpolants fix their nodes and agree across levels") {
  for_all(10, 23, [](Gen& g, std::uint64_t seed) {
    const int n_max = g.integer(4, 12);
    const auto p = sample_path(n_max, 2, seed);
    const int n = g.integer(1, n_max);
    const int coarse = g.integer(1, n);
    const std::size_t stride = std::size_t{1} << (n_max - coarse);
    for (std::size_t k = 0; k <= (std::size_t{1} << coarse); ++k) {
      const double t = std::ldexp(static_cast<double>(k), -coarse);
      const auto a = interpolant_value(p, n, t), b = interpolant_value(p, coarse, t);
      for (std::size_t i = 0; i < 2; ++i) {
        CHECK(a[i] == doctest::Approx(p.value(k * stride, i)).epsilon(1e-13).scale(1e-12));
        CHECK(b[i] == doctest::Approx(p.value(k * stride, i)).epsilon(1e-13).scale(1e-12));
      }
    }
    // level slopes integrate back to the path
    const auto slopes = level_slopes(p, n);
    const double dt = std::ldexp(1.0, -n);
    double acc = 0.0;
    for (std::size_t l = 0; l < (std::size_t{1} << n); ++l) acc += slopes[l * 2] * dt;
    CHECK(acc == doctest::Approx(p.value(p.nodes() - 1, 0)).epsilon(1e-12).scale(1e-12));
  });
}

TEST_CASE("gamma_n examples and scaling") {
  const int n = 4;
  const double inc = std::ldexp(1.0, -n / 2);
  std::vector<double> values(17, 0.0);
  for (std::size_t k = 1; k < values.size(); ++k) values[k] = values[k - 1] + (k == 1 ? inc : 0.0);
  CHECK(gamma_n(handmade_path(4, values), 4, 0.01) == doctest::Approx(1.0));

  const auto p = sample_path(10, 3, 8);
  auto scaled = p;
  for (auto& v : scaled.values) v *= 2.5;
  for (double s : {0.0, 0.3, 0.99}) {
    CHECK(gamma_n(scaled, 6, s) == doctest::Approx(2.5 * gamma_n(p, 6, s)).epsilon(1e-13));
  }
}

TEST_CASE("Monte Carlo moments of gamma_n") {
  const std::size_t paths = 20000;
  for (std::size_t dim : {1u, 3u}) {
    double s = 0.0, s2 = 0.0, s_sq = 0.0, s_sq2 = 0.0;
    for (std::size_t k = 0; k < paths; ++k) {
      const double g = gamma_n(sample_path(6, dim, 31, k), 6, 0.4);
      s += g;
      s2 += g * g;
      s_sq += g * g;
      s_sq2 += g * g * g * g;
    }
    const double mean = s / paths;
    const double sd = std::sqrt(s2 / paths - mean * mean);
    CHECK(std::fabs(mean - dim * std::sqrt(2.0 / std::numbers::pi)) <= 3.0 * sd / std::sqrt(paths));
    if (dim == 1) {
      const double m2 = s_sq / paths;
      const double sd2 = std::sqrt(s_sq2 / paths - m2 * m2);
      CHECK(std::fabs(m2 - 1.0) <= 3.0 * sd2 / std::sqrt(paths));
    }
  }
}

TEST_CASE("absolute Gaussian moments") {
  CHECK(gaussian_abs_moment(2.0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(gaussian_abs_moment(4.0) == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(gaussian_abs_moment(1.0) == doctest::Approx(0.7978845608028654).epsilon(1e-14));
  for (double q : {1.0, 3.0, 7.5, 16.0}) {
    CHECK(gaussian_abs_moment(q) == doctest::Approx(quadrature_abs_moment(q)).epsilon(1e-9));
  }
}

TEST_CASE("path CSV layout") {
  const auto p = sample_path(2, 2, 1);
  std::ostringstream os;
  write_path_csv(p, os);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "t,w1,w2");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == 5);
}
