#include "nica/special.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "nica/common.hpp"

namespace nica {
namespace {

// First-order dual number used to carry d/d(shape) through the incomplete
// gamma evaluation.
struct Dual {
  double v;
  double d;
};

template <typename T>
T from_double(double v);
template <>
double from_double<double>(double v) {
  return v;
}

inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator+(Dual a, double b) { return {a.v + b, a.d}; }
inline Dual operator+(double a, Dual b) { return {a + b.v, b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator-(double a, Dual b) { return {a - b.v, -b.d}; }
inline Dual operator-(Dual a, double b) { return {a.v - b, a.d}; }
inline Dual operator-(Dual a) { return {-a.v, -a.d}; }
inline Dual operator*(Dual a, Dual b) {
  return {a.v * b.v, a.d * b.v + a.v * b.d};
}
inline Dual operator*(double a, Dual b) { return {a * b.v, a * b.d}; }
inline Dual operator*(Dual a, double b) { return {a.v * b, a.d * b}; }
inline Dual operator/(Dual a, Dual b) {
  double inv = 1.0 / b.v;
  return {a.v * inv, (a.d - a.v * b.d * inv) * inv};
}
inline Dual operator/(double a, Dual b) {
  double inv = 1.0 / b.v;
  return {a * inv, -a * b.d * inv * inv};
}
inline Dual operator/(Dual a, double b) { return {a.v / b, a.d / b}; }

inline Dual exp(Dual a) {
  double e = std::exp(a.v);
  return {e, a.d * e};
}
inline Dual log(Dual a) { return {std::log(a.v), a.d / a.v}; }
inline Dual lgamma(Dual a) { return {std::lgamma(a.v), a.d * digamma(a.v)}; }
// double counterparts so the templates below resolve for both scalar types
inline double exp(double a) { return std::exp(a); }
inline double lgamma(double a) { return std::lgamma(a); }
inline double fabs_v(Dual a) { return std::fabs(a.v); }
inline double fabs_v(double a) { return std::fabs(a); }
inline double value_of(Dual a) { return a.v; }
inline double value_of(double a) { return a; }

template <>
Dual from_double<Dual>(double v) {
  return {v, 0.0};
}

constexpr double kEps = 1e-16;
constexpr double kFpMin = 1e-290;

// Both expansions slow down as x approaches a: the series terms shrink only
// harmonically there and need roughly 9*sqrt(a) rounds to fall below machine
// precision, and the continued fraction behaves alike from the other side.
// Scale the budget accordingly so large shape parameters converge instead of
// throwing; small shapes exit early and never feel the difference.
inline int adaptive_max_iter(double a) {
  const double extra = 24.0 * std::sqrt(std::max(a, 0.0));
  return 400 + static_cast<int>(std::min(extra, 5e6));
}

// Convergence test for one Lentz step. The scalar version stops when the
// multiplicative update is 1 to machine precision. The dual version must
// additionally wait for the derivative channel: the update of h.d is
// h.d * (del.v - 1) + h.v * del.d, and the second term keeps moving for a
// while after the value has frozen, so require it to be small relative to
// the accumulated derivative as well.
inline bool lentz_step_converged(double del, double /*h*/) {
  return std::fabs(del - 1.0) < kEps;
}
inline bool lentz_step_converged(Dual del, Dual h) {
  return std::fabs(del.v - 1.0) < kEps &&
         std::fabs(h.v * del.d) <= kEps * (std::fabs(h.d) + kFpMin);
}

// Same idea for the series: the term's derivative must be negligible against
// the accumulated derivative, not just term value against sum value.
inline bool series_term_converged(double del, double sum) {
  return std::fabs(del) < std::fabs(sum) * kEps;
}
inline bool series_term_converged(Dual del, Dual sum) {
  return std::fabs(del.v) < std::fabs(sum.v) * kEps &&
         std::fabs(del.d) <= kEps * (std::fabs(sum.d) + kFpMin);
}

// Series expansion of P(a, x), valid and fast for x < a + 1.
template <typename T>
T gamma_p_series(T a, double x) {
  const int max_iter = adaptive_max_iter(value_of(a));
  T ap = a;
  T del = 1.0 / a;
  T sum = del;
  for (int i = 0; i < max_iter; ++i) {
    ap = ap + 1.0;
    del = del * (x / ap);
    sum = sum + del;
    if (series_term_converged(del, sum)) {
      return sum * exp(-x + a * std::log(x) - lgamma(a));
    }
  }
  throw_numerical("incomplete gamma series failed to converge");
}

// Continued fraction for Q(a, x) = 1 - P(a, x), for x >= a + 1 (modified
// Lentz iteration).
template <typename T>
T gamma_q_contfrac(T a, double x) {
  const int max_iter = adaptive_max_iter(value_of(a));
  T b = x + 1.0 - a;
  T c = from_double<T>(1.0 / kFpMin);
  T d = 1.0 / b;
  T h = d;
  for (int i = 1; i <= max_iter; ++i) {
    T an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b = b + 2.0;
    d = an * d + b;
    if (fabs_v(d) < kFpMin) d = from_double<T>(kFpMin);
    c = b + an / c;
    if (fabs_v(c) < kFpMin) c = from_double<T>(kFpMin);
    d = 1.0 / d;
    T del = d * c;
    h = h * del;
    if (lentz_step_converged(del, h)) {
      return exp(-x + a * std::log(x) - lgamma(a)) * h;
    }
  }
  throw_numerical("incomplete gamma continued fraction failed to converge");
}

template <typename T>
T reg_gamma_p_impl(T a, double x) {
  if (x < value_of(a) + 1.0) {
    return gamma_p_series(a, x);
  }
  return 1.0 - gamma_q_contfrac(a, x);
}

}  // namespace

double digamma(double x) {
  require(x > 0.0, ErrorKind::Numerical, "digamma requires x > 0");
  double result = 0.0;
  while (x < 6.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  double inv = 1.0 / x;
  double inv2 = inv * inv;
  // Asymptotic expansion with Bernoulli-number coefficients.
  double series = inv2 * (1.0 / 12.0 -
                  inv2 * (1.0 / 120.0 -
                  inv2 * (1.0 / 252.0 -
                  inv2 * (1.0 / 240.0 -
                  inv2 * (1.0 / 132.0 -
                  inv2 * (691.0 / 32760.0))))));
  return result + std::log(x) - 0.5 * inv - series;
}

double trigamma(double x) {
  require(x > 0.0, ErrorKind::Numerical, "trigamma requires x > 0");
  double result = 0.0;
  while (x < 6.0) {
    result += 1.0 / (x * x);
    x += 1.0;
  }
  double inv = 1.0 / x;
  double inv2 = inv * inv;
  double series = 1.0 +
                  inv * 0.5 +
                  inv2 * (1.0 / 6.0 -
                  inv2 * (1.0 / 30.0 -
                  inv2 * (1.0 / 42.0 -
                  inv2 * (1.0 / 30.0))));
  return result + inv * series;
}

double reg_gamma_p(double a, double x) {
  require(a > 0.0 && x >= 0.0, ErrorKind::Numerical,
          "reg_gamma_p requires a > 0, x >= 0");
  if (x == 0.0) return 0.0;
  return reg_gamma_p_impl<double>(a, x);
}

void reg_gamma_p_with_da(double a, double x, double* p, double* dp_da) {
  require(a > 0.0 && x >= 0.0, ErrorKind::Numerical,
          "reg_gamma_p requires a > 0, x >= 0");
  if (x == 0.0) {
    *p = 0.0;
    *dp_da = 0.0;
    return;
  }
  Dual r = reg_gamma_p_impl<Dual>(Dual{a, 1.0}, x);
  *p = r.v;
  *dp_da = r.d;
}

double gamma_pdf(double x, double shape, double rate) {
  if (x <= 0.0) return 0.0;
  return std::exp(shape * std::log(rate) + (shape - 1.0) * std::log(x) -
                  rate * x - std::lgamma(shape));
}

double gamma_cdf(double x, double shape, double rate) {
  if (x <= 0.0) return 0.0;
  return reg_gamma_p(shape, rate * x);
}

GammaQuantileResult gamma_quantile(double shape, double rate, double u) {
  require(shape > 0.0 && rate > 0.0, ErrorKind::Numerical,
          "gamma_quantile requires positive shape and rate");
  require(u > 0.0 && u < 1.0, ErrorKind::Numerical,
          "gamma_quantile requires u in (0, 1)");

  // Wilson-Hilferty starting point, then expand to a sign-changing bracket.
  double z = normal_quantile(u);
  double wh = 1.0 - 1.0 / (9.0 * shape) + z / (3.0 * std::sqrt(shape));
  double x0 = shape * wh * wh * wh;
  if (!(x0 > 0.0) || !std::isfinite(x0)) x0 = shape;

  double lo = x0, hi = x0;
  double flo = reg_gamma_p(shape, lo) - u;
  double fhi = flo;
  int guard = 0;
  while (flo > 0.0) {
    lo *= 0.25;
    flo = reg_gamma_p(shape, lo) - u;
    if (++guard > 600) throw_numerical("gamma_quantile failed to bracket from below");
  }
  guard = 0;
  while (fhi < 0.0) {
    hi *= 4.0;
    fhi = reg_gamma_p(shape, hi) - u;
    if (++guard > 600) throw_numerical("gamma_quantile failed to bracket from above");
  }

  // Newton iterations safeguarded by the bracket.
  double x = std::min(std::max(x0, lo), hi);
  double f = reg_gamma_p(shape, x) - u;
  for (int iter = 0; iter < 200; ++iter) {
    if (f > 0.0) {
      hi = x;
    } else {
      lo = x;
    }
    double pdf = gamma_pdf(x, shape, 1.0);
    double step = pdf > 0.0 ? f / pdf : 0.0;
    double xn = x - step;
    if (!(xn > lo && xn < hi) || pdf <= 0.0) {
      xn = 0.5 * (lo + hi);
    }
    double fx = reg_gamma_p(shape, xn) - u;
    bool converged = std::fabs(xn - x) <= 1e-12 * std::max(1.0, xn) ||
                     hi - lo <= 1e-12 * std::max(1.0, xn);
    x = xn;
    f = fx;
    if (converged) {
      GammaQuantileResult out;
      out.value = x / rate;
      double p, dp_da;
      reg_gamma_p_with_da(shape, x, &p, &dp_da);
      double pdf_x = gamma_pdf(x, shape, 1.0);
      if (pdf_x <= 0.0 || !std::isfinite(pdf_x)) {
        throw_numerical("gamma_quantile derivative undefined: density underflow at the solution");
      }
      out.d_shape = -dp_da / (rate * pdf_x);
      out.d_rate = -out.value / rate;
      return out;
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "gamma_quantile did not converge: shape=%.6g rate=%.6g u=%.17g",
                shape, rate, u);
  throw_numerical(buf);
}

namespace {

// Continued fraction used by the regularized incomplete beta.
double beta_contfrac(double a, double b, double x) {
  const int max_iter = adaptive_max_iter(a + b);
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= max_iter; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 3e-16) return h;
  }
  throw_numerical("incomplete beta continued fraction failed to converge");
}

}  // namespace

double reg_beta_i(double x, double a, double b) {
  require(a > 0.0 && b > 0.0, ErrorKind::Numerical, "reg_beta_i requires a, b > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                       a * std::log(x) + b * std::log1p(-x));
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return bt * beta_contfrac(a, b, x) / a;
  }
  return 1.0 - bt * beta_contfrac(b, a, 1.0 - x) / b;
}

double student_t_cdf(double x, double nu) {
  require(nu > 0.0, ErrorKind::Numerical, "student_t_cdf requires nu > 0");
  double z = nu / (nu + x * x);
  double tail = 0.5 * reg_beta_i(z, 0.5 * nu, 0.5);
  return x >= 0.0 ? 1.0 - tail : tail;
}

double normal_quantile(double u) {
  require(u > 0.0 && u < 1.0, ErrorKind::Numerical,
          "normal_quantile requires u in (0, 1)");
  // Acklam's rational approximation with central / tail branches.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00, 2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double q, r;
  if (u < plow) {
    q = std::sqrt(-2.0 * std::log(u));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (u > 1.0 - plow) {
    q = std::sqrt(-2.0 * std::log1p(-u));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  q = u - 0.5;
  r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

double softplus(double x) {
  if (x > 35.0) return x;
  if (x < -35.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double softplus_inverse(double y) {
  require(y > 0.0, ErrorKind::Numerical, "softplus_inverse requires y > 0");
  if (y > 35.0) return y;
  return std::log(std::expm1(y));
}

}  // namespace nica
