#include "subsced/special.hpp"

#include "subsced/types.hpp"

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <limits>
#include <numbers>

namespace subsced {

namespace {

// exp(x*x) with the rounding error of the square carried into a second factor.
double exp_square(double x) {
  const double hi = x * x;
  const double lo = std::fma(x, x, -hi);
  return std::exp(hi) * std::exp(lo);
}

// K_j = j / (x + (j+1) / (x + (j+2) / ...)) by the modified Lentz method.
double mills_tail_cf(double x, int j) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 3e-16;
  double f = tiny, c = tiny, d = 0.0;
  for (int m = 0; m < 200000; ++m) {
    const double a = static_cast<double>(j + m);
    d = x + a * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = x + a / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = c * d;
    f *= delta;
    if (std::fabs(delta - 1.0) < eps) break;
  }
  return f;
}

constexpr double kSqrtHalfPi = 1.2533141373155002512;  // sqrt(pi/2)
constexpr double kCfSwitch = 3.0;

}  // namespace

double erfcx(double x) {
  if (std::isnan(x)) return x;
  if (x < 0.0) {
    if (x < -26.7) return std::numeric_limits<double>::infinity();
    return 2.0 * exp_square(x) - erfcx(-x);
  }
  if (x < 26.0) return exp_square(x) * std::erfc(x);
  const double t = x * std::numbers::sqrt2;
  const double k1 = 1.0 / (t + mills_tail_cf(t, 2));
  return std::numbers::sqrt2 / std::sqrt(std::numbers::pi) / (t + k1);
}

MillsTails mills_tails(double x) {
  if (!(x > 0.0)) throw Error(ErrorKind::InvalidArgument, "mills_tails needs x > 0");
  MillsTails t{};
  if (x < kCfSwitch) {
    t.r = kSqrtHalfPi * erfcx(x / std::numbers::sqrt2);
    t.k1 = 1.0 / t.r - x;
    t.k2 = 1.0 / t.k1 - x;
  } else {
    t.k2 = mills_tail_cf(x, 2);
    t.k1 = 1.0 / (x + t.k2);
    t.r = 1.0 / (x + t.k1);
  }
  return t;
}

double mills_ratio(double x) {
  if (x > 0.0) return mills_tails(x).r;
  return kSqrtHalfPi * erfcx(x / std::numbers::sqrt2);
}

double h_fn(double x) {
  if (x == 0.0) return 0.0;
  return x * mills_ratio(x);
}

double one_minus_h(double x) {
  if (x > 0.0) {
    const MillsTails t = mills_tails(x);
    return t.r * t.k1;
  }
  return 1.0 - h_fn(x);
}

double gauss_inv_square_integral(double c) {
  if (!(c > 0.0)) throw Error(ErrorKind::InvalidArgument, "integral needs c > 0");
  const double x = std::sqrt(c);
  const MillsTails t = mills_tails(x);
  return kSqrtHalfPi * t.r * (1.0 + x * t.k1) / (c * x);
}

double gauss_z2_inv_square_integral(double c) {
  if (!(c > 0.0)) throw Error(ErrorKind::InvalidArgument, "integral needs c > 0");
  const double x = std::sqrt(c);
  const MillsTails t = mills_tails(x);
  return kSqrtHalfPi * t.r * t.k1 * t.k2 / x;
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error(ErrorKind::InvalidArgument, "quantile level must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

}  // namespace subsced
