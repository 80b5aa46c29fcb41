#pragma once

#include "subsced/types.hpp"

#include <cmath>
#include <optional>
#include <string>

namespace subsced {

// Design matrix with a cached orthonormal basis U of its column space.
class Design {
 public:
  explicit Design(Matrix x);

  const Matrix& x() const { return x_; }
  const Matrix& u() const { return u_; }
  Index rows() const { return x_.rows(); }
  Index cols() const { return x_.cols(); }

  // Hat-matrix diagonal, the squared row norms of U.
  Vector leverages() const { return u_.rowwise().squaredNorm(); }

  // First n rows as a new design.
  Design head(Index n) const;

 private:
  Matrix x_;
  Matrix u_;
};

// Strictly positive diagonal of a covariance (or of working weights).
class DiagonalWeights {
 public:
  explicit DiagonalWeights(Vector d);
  static DiagonalWeights ones(Index n) { return DiagonalWeights(Vector::Ones(n)); }

  const Vector& values() const { return d_; }
  Index size() const { return d_.size(); }
  double operator[](Index i) const { return d_[i]; }
  Vector inverse() const { return d_.cwiseInverse(); }

 private:
  Vector d_;
};

enum class Method { OLS, WLS, FLS, T_MLE, HUBER };
const char* to_string(Method m);

struct CovarianceEstimate {
  Matrix matrix;
  std::string estimator;
};

struct FitDiagnostics {
  int iterations = 0;
  bool converged = true;
  double objective = 0.0;
};

struct RegressionFit {
  Vector beta;
  std::optional<CovarianceEstimate> cov;
  std::optional<DiagonalWeights> weights_used;
  Method method = Method::OLS;
  FitDiagnostics diagnostics;
};

// Non-diagonal covariance together with its spectral decomposition,
// eigenvalues sorted descending.
struct FullCovariance {
  Matrix v;
  Matrix eigvecs;
  Vector eigvals;
};

RegressionFit fls_fit(const Design& design, const Vector& y, const DiagonalWeights& weights,
                      Method tag = Method::FLS);
RegressionFit ols_fit(const Design& design, const Vector& y);

// Exact covariance of the weighted fit with working variances `fls` when the
// errors have variances `truth`.
Matrix sandwich_cov(const Design& design, const DiagonalWeights& fls, const DiagonalWeights& truth);

// (X' diag(w) X)^{-1} M (X' diag(w) X)^{-1} with M = X' diag(m) X, computed through
// a QR factorization of diag(sqrt(w)) X. Both w and m are per-row multipliers.
Matrix weighted_sandwich(const Matrix& x, const Vector& w, const Vector& m);

FullCovariance eigendecompose(const Matrix& v);

namespace detail {

template <class Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> psd_eigenvalues(
    const Eigen::MatrixBase<Derived>& cov) {
  using Scalar = typename Derived::Scalar;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (cov.rows() != cov.cols()) throw Error(ErrorKind::DimensionMismatch, "covariance must be square");
  Eigen::SelfAdjointEigenSolver<Mat> es(Mat(cov), Eigen::EigenvaluesOnly);
  auto ev = es.eigenvalues();
  const Scalar top = ev.size() ? ev.cwiseAbs().maxCoeff() : Scalar(0);
  const Scalar tol = Scalar(1e-8) * std::max(Scalar(1), top);
  if (ev.size() && ev.minCoeff() < -tol) throw Error(ErrorKind::NonPSD, "covariance has a negative eigenvalue");
  return ev.cwiseMax(Scalar(0));
}

}  // namespace detail

template <class Derived>
typename Derived::Scalar generalized_variance(const Eigen::MatrixBase<Derived>& cov) {
  return detail::psd_eigenvalues(cov).prod();
}

template <class Derived>
typename Derived::Scalar total_variance(const Eigen::MatrixBase<Derived>& cov) {
  detail::psd_eigenvalues(cov);
  return cov.trace();
}

// Standardized generalized variance det(cov)^{1/p}, evaluated as a geometric
// mean of eigenvalues so it neither overflows nor underflows for large p.
template <class Derived>
typename Derived::Scalar sgv(const Eigen::MatrixBase<Derived>& cov) {
  using Scalar = typename Derived::Scalar;
  auto ev = detail::psd_eigenvalues(cov);
  if (ev.size() == 0) return Scalar(1);
  if (ev.minCoeff() <= Scalar(0)) return Scalar(0);
  return std::exp(ev.array().log().mean());
}

}  // namespace subsced
