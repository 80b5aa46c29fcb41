#pragma once

#include "subsced/linmodel.hpp"

#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>

namespace subsced {

// Scalar map from variances to weights, w = g(omega), with a label for reports.
struct ScedasticFunction {
  std::function<double(double)> eval;
  std::string label;
  std::map<std::string, double> params;

  double operator()(double omega) const { return eval(omega); }
};

namespace family {

ScedasticFunction identity();
ScedasticFunction constant(double c);
ScedasticFunction power(double q);          // omega^{1/q}
ScedasticFunction translate(double lambda);  // omega + lambda
ScedasticFunction log_shift(double lambda);  // log(omega + lambda)
ScedasticFunction square();                  // omega^2, the standard non-example
// sqrt(omega) / int_{-k}^{k} exp(-z^2 / (2 omega)) dz
ScedasticFunction truncated_mass(double k);
ScedasticFunction compose(const ScedasticFunction& outer, const ScedasticFunction& inner);

}  // namespace family

// Log-spaced grid on [lo, hi].
Vector log_grid(double lo = 1e-4, double hi = 1e4, int points = 512);

struct GrmCheckResult {
  bool ok = true;
  // Index k of the first failing step grid[k] -> grid[k+1].
  std::optional<Index> first_violation;
  std::string condition;  // "non-decreasing" or "ratio non-increasing"
};

constexpr double kGrmSlack = 1e-12;

GrmCheckResult grm_check(const ScedasticFunction& g, const Vector& grid = log_grid());

// f(omega) = 1 / (1/g(omega) + lambda) + gamma.
ScedasticFunction bounded_transform(const ScedasticFunction& g, double lambda, double gamma);

constexpr double kMajorizationTol = 1e-12;

bool majorization_check(const ScedasticFunction& g, const Vector& omega);

DiagonalWeights grm_to_subscedastic(const ScedasticFunction& g, const DiagonalWeights& truth);

// A random member of the families above, possibly composed or bounded.
ScedasticFunction random_grm_function(std::mt19937_64& rng);

}  // namespace subsced
