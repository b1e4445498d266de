#include <doctest.h>

#include <initializer_list>

#include <cmath>

#include "nica/special.hpp"

using namespace nica;

namespace {

// Standard normal CDF via the complementary error function; independent of
// the implementations under test.
double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Closed-form Gamma(shape=2, rate=b) CDF: 1 - exp(-b x)(1 + b x).
double gamma2_cdf(double x, double rate) {
  return 1.0 - std::exp(-rate * x) * (1.0 + rate * x);
}

double bisect(double lo, double hi, double target,
              double (*f)(double, double), double param) {
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    if (f(mid, param) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("digamma and trigamma match classical constants") {
  const double euler = 0.57721566490153286;
  CHECK(digamma(1.0) == doctest::Approx(-euler).epsilon(1e-12));
  CHECK(digamma(0.5) ==
        doctest::Approx(-euler - 2.0 * std::log(2.0)).epsilon(1e-12));
  // Recurrence: psi(x+1) = psi(x) + 1/x.
  for (double x : {0.3, 1.7, 4.2}) {
    CHECK(digamma(x + 1.0) == doctest::Approx(digamma(x) + 1.0 / x).epsilon(1e-12));
  }
  const double pi = M_PI;
  CHECK(trigamma(1.0) == doctest::Approx(pi * pi / 6.0).epsilon(1e-10));
  CHECK(trigamma(0.5) == doctest::Approx(pi * pi / 2.0).epsilon(1e-10));
  for (double x : {0.4, 2.3}) {
    CHECK(trigamma(x + 1.0) ==
          doctest::Approx(trigamma(x) - 1.0 / (x * x)).epsilon(1e-10));
  }
}

TEST_CASE("regularized incomplete gamma agrees with closed forms") {
  // P(1, x) = 1 - exp(-x).
  for (double x : {0.1, 0.9, 2.5, 7.0}) {
    CHECK(reg_gamma_p(1.0, x) == doctest::Approx(1.0 - std::exp(-x)).epsilon(1e-12));
  }
  // P(1/2, x) = erf(sqrt(x)).
  for (double x : {0.2, 1.0, 3.0}) {
    CHECK(reg_gamma_p(0.5, x) ==
          doctest::Approx(std::erf(std::sqrt(x))).epsilon(1e-12));
  }
  // P(2, x) = 1 - exp(-x)(1 + x).
  for (double x : {0.5, 1.5, 6.0}) {
    CHECK(reg_gamma_p(2.0, x) == doctest::Approx(gamma2_cdf(x, 1.0)).epsilon(1e-12));
  }
  CHECK(reg_gamma_p(3.0, 0.0) == 0.0);
}

TEST_CASE("incomplete gamma shape derivative matches finite differences") {
  for (double a : {0.7, 2.0, 5.5}) {
    for (double x : {0.4, 1.8, 6.0}) {
      double p, dpda;
      reg_gamma_p_with_da(a, x, &p, &dpda);
      CHECK(p == doctest::Approx(reg_gamma_p(a, x)).epsilon(1e-12));
      const double h = 1e-6;
      double fd = (reg_gamma_p(a + h, x) - reg_gamma_p(a - h, x)) / (2.0 * h);
      CHECK(dpda == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("gamma cdf and pdf are consistent") {
  // CDF in rate form equals P(a, b x).
  CHECK(gamma_cdf(1.3, 2.5, 2.0) ==
        doctest::Approx(reg_gamma_p(2.5, 2.6)).epsilon(1e-12));
  // pdf integrates the cdf: finite-difference derivative.
  for (double x : {0.5, 1.2, 3.0}) {
    const double h = 1e-6;
    double fd = (gamma_cdf(x + h, 3.0, 1.5) - gamma_cdf(x - h, 3.0, 1.5)) / (2 * h);
    CHECK(gamma_pdf(x, 3.0, 1.5) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("gamma quantile matches a bisection oracle for the shape-2 closed form") {
  // Median of Gamma(2, 2), from bisecting 1 - exp(-2x)(1+2x) = 1/2.
  double oracle = bisect(0.0, 10.0, 0.5, gamma2_cdf, 2.0);
  CHECK(oracle == doctest::Approx(0.8391735).epsilon(1e-6));  // sanity on the oracle
  GammaQuantileResult q = gamma_quantile(2.0, 2.0, 0.5);
  CHECK(q.value == doctest::Approx(oracle).epsilon(1e-10));

  // Quantiles invert the CDF across shapes and levels.
  for (double a : {0.6, 1.0, 4.0}) {
    for (double u : {0.05, 0.35, 0.88}) {
      GammaQuantileResult r = gamma_quantile(a, 1.7, u);
      CHECK(gamma_cdf(r.value, a, 1.7) == doctest::Approx(u).epsilon(1e-9));
    }
  }
}

TEST_CASE("gamma quantile derivatives match finite differences and scaling") {
  for (double a : {0.8, 2.0, 5.0}) {
    for (double u : {0.2, 0.5, 0.9}) {
      const double b = 1.3;
      GammaQuantileResult q = gamma_quantile(a, b, u);
      // The rate enters as a pure scale: x(a, b, u) = x(a, 1, u) / b.
      CHECK(q.d_rate == doctest::Approx(-q.value / b).epsilon(1e-8));
      const double h = 1e-5;
      double fd_shape =
          (gamma_quantile(a + h, b, u).value - gamma_quantile(a - h, b, u).value) /
          (2 * h);
      CHECK(q.d_shape == doctest::Approx(fd_shape).epsilon(1e-4));
    }
  }
}

TEST_CASE("regularized incomplete beta closed forms") {
  for (double x : {0.1, 0.5, 0.85}) {
    CHECK(reg_beta_i(x, 1.0, 1.0) == doctest::Approx(x).epsilon(1e-12));
    CHECK(reg_beta_i(x, 2.0, 2.0) ==
          doctest::Approx(x * x * (3.0 - 2.0 * x)).epsilon(1e-10));
    // Reflection identity.
    CHECK(reg_beta_i(x, 2.7, 1.4) ==
          doctest::Approx(1.0 - reg_beta_i(1.0 - x, 1.4, 2.7)).epsilon(1e-10));
  }
}

TEST_CASE("student t cdf special cases") {
  CHECK(student_t_cdf(0.0, 3.0) == doctest::Approx(0.5).epsilon(1e-12));
  // One degree of freedom is the Cauchy law.
  for (double x : {-2.0, -0.3, 1.5}) {
    CHECK(student_t_cdf(x, 1.0) ==
          doctest::Approx(0.5 + std::atan(x) / M_PI).epsilon(1e-10));
  }
  // Very many degrees of freedom approaches the normal law.
  for (double x : {-1.0, 0.7, 2.2}) {
    CHECK(student_t_cdf(x, 1e7) == doctest::Approx(norm_cdf(x)).epsilon(1e-5));
  }
  // Symmetry.
  CHECK(student_t_cdf(1.3, 4.0) + student_t_cdf(-1.3, 4.0) ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("normal quantile inverts the erfc-based cdf") {
  for (double u : {1e-4, 0.025, 0.31, 0.5, 0.75, 0.999}) {
    CHECK(norm_cdf(normal_quantile(u)) == doctest::Approx(u).epsilon(1e-8));
  }
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("softplus and its inverse") {
  for (double x : {-20.0, -3.0, 0.0, 2.5, 30.0}) {
    double y = softplus(x);
    CHECK(y > 0.0);
    CHECK(softplus_inverse(y) == doctest::Approx(x).epsilon(1e-9));
  }
  CHECK(softplus(50.0) == doctest::Approx(50.0).epsilon(1e-12));
  CHECK(softplus(-50.0) == doctest::Approx(std::exp(-50.0)).epsilon(1e-10));
}
