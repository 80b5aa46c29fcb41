#pragma once

#include "subsced/grm.hpp"
#include "subsced/linmodel.hpp"

#include <vector>

namespace subsced {

// Observations partitioned into K groups with a known variance ranking.
struct GroupSpec {
  std::vector<int> group_of;  // group label per observation, 1..K
  std::vector<int> order;     // group labels from lowest to highest variance
  double gamma = 1.0;         // lower bound on consecutive variance ratios
};

// Random-intercept design: A is the n x K batch indicator.
struct MixedSpec {
  Matrix a;
  double gamma = 1.0;  // upper bound on theta0^2 / theta1^2
};

enum class ParametricForm { LOG_ABS_X, LINEAR_X };

struct ParametricOptions {
  double residual_floor = 0.01 * 0.01;  // squared residuals are floored here before the log
  double abs_floor = 1e-8;              // |x| floor before the log in LOG_ABS_X
};

// Group r in the ranking (r = 0 lowest) gets weight (2 gamma - 1)^r.
DiagonalWeights groupwise_weights(const GroupSpec& spec);

// Group r gets c^r with c = min_{1<=d<K} (2 gamma^d - 1)^{1/d}, the largest
// common step whose powers stay below every pairwise bound 2 gamma^d - 1.
// Coincides with groupwise_weights for K = 2.
DiagonalWeights groupwise_weights_uniform(const GroupSpec& spec);

// Expands per-group values (indexed by label - 1) to observations.
Vector expand_groups(const std::vector<int>& group_of, const Vector& per_group);

namespace covariate {

ScedasticFunction abs_power(double theta);      // |x|^theta
ScedasticFunction log_power(double theta);      // (log |x|)^theta
ScedasticFunction exp_quadratic(double theta);  // exp(theta |x| + theta |x|^2)

}  // namespace covariate

// w_i = v(|x_i|).
DiagonalWeights covariate_weights(const ScedasticFunction& v, const Vector& x);

Matrix batch_indicator(const std::vector<Index>& sizes);

FullCovariance mixed_effects_weights(const MixedSpec& spec);

// Spectral form of theta1^2 A A' + theta0^2 I.
FullCovariance mixed_effects_covariance(const Matrix& a, double theta0_sq, double theta1_sq);

struct ParametricVarianceFit {
  DiagonalWeights weights;
  Vector theta;  // intercept first, then one coefficient per non-constant design column
};

ParametricVarianceFit parametric_variance_fit(const Design& design, const Vector& y, ParametricForm form,
                                              const ParametricOptions& opts = {});
DiagonalWeights parametric_fls_weights(const Design& design, const Vector& y, ParametricForm form,
                                       const ParametricOptions& opts = {});

DiagonalWeights regularize_weights(const DiagonalWeights& w, double s);

}  // namespace subsced
