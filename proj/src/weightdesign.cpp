#include "subsced/weightdesign.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace subsced {

namespace {

int validate_groups(const GroupSpec& spec) {
  if (!(spec.gamma >= 1.0)) throw Error(ErrorKind::InvalidArgument, "gamma must be >= 1");
  const int k = static_cast<int>(spec.order.size());
  if (k == 0) throw Error(ErrorKind::BadOrdering, "order is empty");
  std::vector<int> sorted = spec.order;
  std::sort(sorted.begin(), sorted.end());
  for (int r = 0; r < k; ++r) {
    if (sorted[r] != r + 1) throw Error(ErrorKind::BadOrdering, "order is not a permutation of 1..K");
  }
  std::vector<int> count(k, 0);
  for (const int g : spec.group_of) {
    if (g < 1 || g > k) throw Error(ErrorKind::BadOrdering, "group label outside 1..K");
    ++count[g - 1];
  }
  for (int r = 0; r < k; ++r) {
    if (count[r] == 0) throw Error(ErrorKind::EmptyBatch, "every group needs at least one observation");
  }
  return k;
}

DiagonalWeights geometric_groups(const GroupSpec& spec, double step) {
  const int k = static_cast<int>(spec.order.size());
  Vector per_group(k);
  for (int r = 0; r < k; ++r) per_group[spec.order[r] - 1] = std::pow(step, r);
  return DiagonalWeights(expand_groups(spec.group_of, per_group));
}

}  // namespace

Vector expand_groups(const std::vector<int>& group_of, const Vector& per_group) {
  Vector out(static_cast<Index>(group_of.size()));
  for (std::size_t i = 0; i < group_of.size(); ++i) out[static_cast<Index>(i)] = per_group[group_of[i] - 1];
  return out;
}

DiagonalWeights groupwise_weights(const GroupSpec& spec) {
  validate_groups(spec);
  return geometric_groups(spec, 2.0 * spec.gamma - 1.0);
}

DiagonalWeights groupwise_weights_uniform(const GroupSpec& spec) {
  const int k = validate_groups(spec);
  double step = 2.0 * spec.gamma - 1.0;
  for (int d = 2; d < k; ++d) step = std::min(step, std::pow(2.0 * std::pow(spec.gamma, d) - 1.0, 1.0 / d));
  return geometric_groups(spec, step);
}

namespace covariate {

ScedasticFunction abs_power(double theta) {
  return {[theta](double ax) { return std::pow(ax, theta); }, "abs_power", {{"theta", theta}}};
}

ScedasticFunction log_power(double theta) {
  return {[theta](double ax) { return std::pow(std::log(ax), theta); }, "log_power", {{"theta", theta}}};
}

ScedasticFunction exp_quadratic(double theta) {
  return {[theta](double ax) { return std::exp(theta * ax + theta * ax * ax); }, "exp_quadratic", {{"theta", theta}}};
}

}  // namespace covariate

DiagonalWeights covariate_weights(const ScedasticFunction& v, const Vector& x) {
  Vector w(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    w[i] = v(std::fabs(x[i]));
    if (!(w[i] > 0.0) || !std::isfinite(w[i])) {
      std::ostringstream os;
      os << v.label << " is undefined or non-positive at x = " << x[i] << " (row " << i << ")";
      throw Error(ErrorKind::DegenerateCovariate, os.str());
    }
  }
  return DiagonalWeights(std::move(w));
}

Matrix batch_indicator(const std::vector<Index>& sizes) {
  const Index n = std::accumulate(sizes.begin(), sizes.end(), Index{0});
  Matrix a = Matrix::Zero(n, static_cast<Index>(sizes.size()));
  Index row = 0;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    if (sizes[k] < 1) throw Error(ErrorKind::EmptyBatch, "batch sizes must be >= 1");
    for (Index m = 0; m < sizes[k]; ++m) a(row++, static_cast<Index>(k)) = 1.0;
  }
  return a;
}

FullCovariance mixed_effects_weights(const MixedSpec& spec) {
  if (!(spec.gamma > 0.0)) throw Error(ErrorKind::InvalidArgument, "gamma must be positive");
  const Matrix& a = spec.a;
  const Index n = a.rows(), k = a.cols();
  if (k < 1 || n <= k) throw Error(ErrorKind::DimensionMismatch, "need n > K >= 1");
  for (Index i = 0; i < n; ++i) {
    const auto row = a.row(i);
    if ((row.array() != 0.0 && row.array() != 1.0).any() || row.sum() != 1.0)
      throw Error(ErrorKind::InvalidArgument, "each row of A must hold a single 1");
  }
  const Vector sizes = a.colwise().sum().transpose();
  if (sizes.minCoeff() < 1.0) throw Error(ErrorKind::EmptyBatch, "every batch needs at least one observation");

  // Columns K.. of the full Householder Q span the null space of A'.
  Eigen::HouseholderQR<Matrix> qr(a);
  const Matrix qfull = qr.householderQ();
  Matrix u(n, n);
  u.leftCols(k) = a * sizes.cwiseSqrt().cwiseInverse().asDiagonal();
  u.rightCols(n - k) = qfull.rightCols(n - k);
  Vector lam = Vector::Constant(n, spec.gamma);
  lam.head(k) = sizes.array() + spec.gamma;

  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::stable_sort(idx.begin(), idx.end(), [&](Index x, Index y) { return lam[x] > lam[y]; });
  FullCovariance out;
  out.eigvals.resize(n);
  out.eigvecs.resize(n, n);
  for (Index c = 0; c < n; ++c) {
    out.eigvals[c] = lam[idx[static_cast<std::size_t>(c)]];
    out.eigvecs.col(c) = u.col(idx[static_cast<std::size_t>(c)]);
  }
  out.v = out.eigvecs * out.eigvals.asDiagonal() * out.eigvecs.transpose();
  out.v = 0.5 * (out.v + out.v.transpose()).eval();
  return out;
}

FullCovariance mixed_effects_covariance(const Matrix& a, double theta0_sq, double theta1_sq) {
  if (!(theta0_sq > 0.0 && theta1_sq >= 0.0)) throw Error(ErrorKind::InvalidArgument, "variance components");
  const Matrix v = theta1_sq * a * a.transpose() + theta0_sq * Matrix::Identity(a.rows(), a.rows());
  return eigendecompose(v);
}

ParametricVarianceFit parametric_variance_fit(const Design& design, const Vector& y, ParametricForm form,
                                              const ParametricOptions& opts) {
  const Matrix& x = design.x();
  const Index n = x.rows(), p = x.cols();
  if (n <= p + 1) throw Error(ErrorKind::DimensionMismatch, "parametric weights need n > p + 1");
  if (y.size() != n) throw Error(ErrorKind::DimensionMismatch, "response length mismatch");

  const RegressionFit ols = ols_fit(design, y);
  const Vector resid = y - x * ols.beta;
  const Vector target = resid.cwiseAbs2().cwiseMax(opts.residual_floor).array().log().matrix();

  std::vector<Index> cols;
  for (Index j = 0; j < p; ++j) {
    const double lo = x.col(j).minCoeff(), hi = x.col(j).maxCoeff();
    if (hi - lo > 1e-12 * std::max(1.0, std::max(std::fabs(lo), std::fabs(hi)))) cols.push_back(j);
  }
  Matrix z(n, static_cast<Index>(cols.size()) + 1);
  z.col(0).setOnes();
  for (std::size_t c = 0; c < cols.size(); ++c) {
    const auto col = x.col(cols[c]);
    if (form == ParametricForm::LOG_ABS_X)
      z.col(static_cast<Index>(c) + 1) = col.cwiseAbs().cwiseMax(opts.abs_floor).array().log().matrix();
    else
      z.col(static_cast<Index>(c) + 1) = col;
  }
  const Design zd(z);
  const RegressionFit second = ols_fit(zd, target);
  const Vector fitted = z * second.beta;
  return {DiagonalWeights(fitted.array().exp().matrix()), second.beta};
}

DiagonalWeights parametric_fls_weights(const Design& design, const Vector& y, ParametricForm form,
                                       const ParametricOptions& opts) {
  return parametric_variance_fit(design, y, form, opts).weights;
}

DiagonalWeights regularize_weights(const DiagonalWeights& w, double s) {
  if (!(s > 0.0)) throw Error(ErrorKind::InvalidArgument, "regularization needs s > 0");
  return DiagonalWeights(w.values().array() + s);
}

}  // namespace subsced
