#pragma once

namespace subsced {

// Scaled complementary error function exp(x^2) erfc(x).
double erfcx(double x);

// Mills ratio R(x) = exp(x^2/2) * int_x^inf exp(-z^2/2) dz.
double mills_ratio(double x);

// Continued-fraction tails of the Mills ratio for x > 0:
//   R = 1/(x + K1),  K1 = 1/(x + K2),  K2 = 2/(x + 3/(x + 4/(x + ...))).
// Quantities like 1 - xR = R*K1 lose every digit to cancellation for large x
// when formed directly, but are products of positive terms in this form.
struct MillsTails {
  double r;
  double k1;
  double k2;
};
MillsTails mills_tails(double x);

// h(x) = sqrt(2 pi) x exp(x^2/2) Phi(-x) = x R(x).
double h_fn(double x);

// 1 - h(x), accurate for large x.
double one_minus_h(double x);

// int exp(-z^2/2) / (c + z^2)^2 dz over the real line, c > 0.
double gauss_inv_square_integral(double c);

// int z^2 exp(-z^2/2) / (c + z^2)^2 dz over the real line, c > 0.
double gauss_z2_inv_square_integral(double c);

// Standard normal quantile.
double normal_quantile(double p);

}  // namespace subsced
