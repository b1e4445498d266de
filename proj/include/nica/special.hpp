#pragma once

#include <cstdint>

namespace nica {

double digamma(double x);
double trigamma(double x);

/// Regularized lower incomplete gamma P(a, x).
double reg_gamma_p(double a, double x);

/// P(a, x) together with its partial derivative in the shape parameter,
/// propagated through the series / continued-fraction evaluation.
void reg_gamma_p_with_da(double a, double x, double* p, double* dp_da);

/// Gamma(shape, rate) density and CDF.
double gamma_pdf(double x, double shape, double rate);
double gamma_cdf(double x, double shape, double rate);

struct GammaQuantileResult {
  double value;     // x with CDF(x) = u
  double d_shape;   // dx / d(shape)
  double d_rate;    // dx / d(rate)
};

/// Inverse CDF of Gamma(shape, rate) by bracketed root finding, with the
/// implicit-function derivatives used for reparameterized gradients.
GammaQuantileResult gamma_quantile(double shape, double rate, double u);

/// Regularized incomplete beta I_x(a, b).
double reg_beta_i(double x, double a, double b);

/// CDF of the standard Student-t with `nu` degrees of freedom.
double student_t_cdf(double x, double nu);

/// Standard normal quantile (rational approximation, ~1e-9 accuracy).
double normal_quantile(double u);

double softplus(double x);
/// Inverse of softplus, i.e. x with log1p(exp(x)) = y (y > 0).
double softplus_inverse(double y);

}  // namespace nica
