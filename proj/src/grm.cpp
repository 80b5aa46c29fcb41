#include "subsced/grm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <vector>

namespace subsced {

namespace family {

ScedasticFunction identity() { return {[](double w) { return w; }, "identity", {}}; }

ScedasticFunction constant(double c) {
  if (!(c > 0.0)) throw Error(ErrorKind::InvalidArgument, "constant must be positive");
  return {[c](double) { return c; }, "constant", {{"c", c}}};
}

ScedasticFunction power(double q) {
  if (!(q >= 1.0)) throw Error(ErrorKind::InvalidArgument, "power needs q >= 1");
  return {[q](double w) { return std::pow(w, 1.0 / q); }, "power", {{"q", q}}};
}

ScedasticFunction translate(double lambda) {
  if (!(lambda >= 0.0)) throw Error(ErrorKind::InvalidArgument, "translation needs lambda >= 0");
  return {[lambda](double w) { return w + lambda; }, "translate", {{"lambda", lambda}}};
}

ScedasticFunction log_shift(double lambda) {
  if (!(lambda > 1.0)) throw Error(ErrorKind::InvalidArgument, "log shift needs lambda > 1");
  return {[lambda](double w) { return std::log(w + lambda); }, "log_shift", {{"lambda", lambda}}};
}

ScedasticFunction square() { return {[](double w) { return w * w; }, "square", {}}; }

ScedasticFunction truncated_mass(double k) {
  if (!(k > 0.0)) throw Error(ErrorKind::InvalidArgument, "truncation needs k > 0");
  // The integral is sqrt(2 pi omega) erf(k / sqrt(2 omega)).
  return {[k](double w) {
            return 1.0 / (std::sqrt(2.0 * std::numbers::pi) * std::erf(k / std::sqrt(2.0 * w)));
          },
          "truncated_mass",
          {{"k", k}}};
}

ScedasticFunction compose(const ScedasticFunction& outer, const ScedasticFunction& inner) {
  auto params = inner.params;
  for (const auto& [key, v] : outer.params) params["outer." + key] = v;
  return {[o = outer.eval, i = inner.eval](double w) { return o(i(w)); }, outer.label + "(" + inner.label + ")",
          params};
}

}  // namespace family

Vector log_grid(double lo, double hi, int points) {
  if (!(lo > 0.0 && hi > lo) || points < 2) throw Error(ErrorKind::InvalidArgument, "bad grid bounds");
  Vector g(points);
  const double a = std::log(lo), b = std::log(hi);
  for (int k = 0; k < points; ++k) g[k] = std::exp(a + (b - a) * k / (points - 1));
  g[0] = lo;
  g[points - 1] = hi;
  return g;
}

GrmCheckResult grm_check(const ScedasticFunction& g, const Vector& grid) {
  if (grid.size() < 64) throw Error(ErrorKind::InvalidArgument, "grid needs at least 64 points");
  for (Index k = 0; k < grid.size(); ++k) {
    if (!(grid[k] > 0.0) || (k > 0 && !(grid[k] > grid[k - 1])))
      throw Error(ErrorKind::InvalidArgument, "grid must be positive and strictly increasing");
  }
  std::vector<double> v(grid.size());
  for (Index k = 0; k < grid.size(); ++k) {
    v[k] = g(grid[k]);
    if (!(v[k] > 0.0) || !std::isfinite(v[k])) {
      std::ostringstream os;
      os << g.label << " is not positive at omega = " << grid[k];
      throw Error(ErrorKind::NonPositiveValue, os.str());
    }
  }
  GrmCheckResult res;
  for (Index k = 0; k + 1 < grid.size(); ++k) {
    if (v[k + 1] < v[k] * (1.0 - kGrmSlack)) {
      res = {false, k, "non-decreasing"};
      return res;
    }
    if (v[k + 1] / grid[k + 1] > (v[k] / grid[k]) * (1.0 + kGrmSlack)) {
      res = {false, k, "ratio non-increasing"};
      return res;
    }
  }
  return res;
}

ScedasticFunction bounded_transform(const ScedasticFunction& g, double lambda, double gamma) {
  if (!(lambda >= 0.0 && gamma >= 0.0)) throw Error(ErrorKind::InvalidArgument, "lambda and gamma must be >= 0");
  if (!grm_check(g).ok) throw Error(ErrorKind::InvalidArgument, g.label + " does not satisfy GRM");
  auto params = g.params;
  params["bound.lambda"] = lambda;
  params["bound.gamma"] = gamma;
  return {[e = g.eval, lambda, gamma](double w) { return 1.0 / (1.0 / e(w) + lambda) + gamma; },
          "bounded(" + g.label + ")", params};
}

bool majorization_check(const ScedasticFunction& g, const Vector& omega) {
  if (omega.size() == 0) return true;
  if (!(omega.minCoeff() > 0.0)) throw Error(ErrorKind::NonPositive, "variances must be positive");
  const Index n = omega.size();
  std::vector<double> a(n), b(n);
  for (Index i = 0; i < n; ++i) {
    a[i] = g(omega[i]);
    b[i] = omega[i];
  }
  const double sa = std::accumulate(a.begin(), a.end(), 0.0);
  const double sb = omega.sum();
  std::sort(a.begin(), a.end(), std::greater<>());
  std::sort(b.begin(), b.end(), std::greater<>());
  double pa = 0.0, pb = 0.0;
  for (Index i = 0; i < n; ++i) {
    pa += a[i] / sa;
    pb += b[i] / sb;
    if (pa > pb + kMajorizationTol) return false;
  }
  return true;
}

DiagonalWeights grm_to_subscedastic(const ScedasticFunction& g, const DiagonalWeights& truth) {
  const Vector& o = truth.values();
  const double lo = std::min(1e-4, 0.5 * o.minCoeff());
  const double hi = std::max(1e4, 2.0 * o.maxCoeff());
  Vector base = log_grid(lo, hi, 512);
  std::vector<double> pts(base.data(), base.data() + base.size());
  pts.insert(pts.end(), o.data(), o.data() + o.size());
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (!grm_check(g, Eigen::Map<Vector>(pts.data(), static_cast<Index>(pts.size()))).ok)
    throw Error(ErrorKind::InvalidArgument, g.label + " does not satisfy GRM on the range of the truth");
  return DiagonalWeights(o.unaryExpr([&](double w) { return g(w); }));
}

ScedasticFunction random_grm_function(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto pick_base = [&]() -> ScedasticFunction {
    switch (std::uniform_int_distribution<int>(0, 5)(rng)) {
      case 0: return family::power(1.0 + 4.0 * unit(rng));
      case 1: return family::translate(5.0 * unit(rng));
      case 2: return family::log_shift(1.01 + 9.0 * unit(rng));
      case 3: return family::truncated_mass(0.3 + 2.7 * unit(rng));
      case 4: return family::constant(0.1 + 10.0 * unit(rng));
      default: return family::identity();
    }
  };
  ScedasticFunction g = pick_base();
  const double roll = unit(rng);
  if (roll < 0.25) {
    g = family::compose(pick_base(), g);
  } else if (roll < 0.45) {
    const double lambda = 2.0 * unit(rng);
    const double gamma = 2.0 * unit(rng);
    g = bounded_transform(g, lambda, gamma);
  }
  return g;
}

}  // namespace subsced
