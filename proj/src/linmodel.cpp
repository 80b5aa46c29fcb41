#include "subsced/linmodel.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace subsced {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::NonPSD: return "NonPSD";
    case ErrorKind::NotSymmetric: return "NotSymmetric";
    case ErrorKind::NotPD: return "NotPD";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::NonPositive: return "NonPositive";
    case ErrorKind::NotSimultaneouslyDiagonalizable: return "NotSimultaneouslyDiagonalizable";
    case ErrorKind::NonPositiveValue: return "NonPositiveValue";
    case ErrorKind::BadOrdering: return "BadOrdering";
    case ErrorKind::DegenerateCovariate: return "DegenerateCovariate";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::NotConverged: return "NotConverged";
    case ErrorKind::DegenerateScale: return "DegenerateScale";
    case ErrorKind::SingularHessian: return "SingularHessian";
    case ErrorKind::LeverageOne: return "LeverageOne";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::ParseError: return "ParseError";
  }
  return "Unknown";
}

const char* to_string(Method m) {
  switch (m) {
    case Method::OLS: return "ols";
    case Method::WLS: return "wls";
    case Method::FLS: return "fls";
    case Method::T_MLE: return "t";
    case Method::HUBER: return "huber";
  }
  return "unknown";
}

namespace {

constexpr double kRcondFloor = 1e-12;

double qr_rcond(const Eigen::ColPivHouseholderQR<Matrix>& qr) {
  const Vector d = qr.matrixR().diagonal().cwiseAbs();
  if (d.size() == 0) return 1.0;
  const double top = d.maxCoeff();
  return top > 0 ? d.minCoeff() / top : 0.0;
}

void require_rank(const Eigen::ColPivHouseholderQR<Matrix>& qr) {
  const double rc = qr_rcond(qr);
  if (!(rc >= kRcondFloor)) {
    std::ostringstream os;
    os << "design is rank deficient (rcond " << rc << ")";
    throw Error(ErrorKind::RankDeficient, os.str());
  }
}

}  // namespace

Design::Design(Matrix x) : x_(std::move(x)) {
  const Index n = x_.rows(), p = x_.cols();
  if (p < 1 || n <= p) throw Error(ErrorKind::DimensionMismatch, "design needs n > p >= 1");
  if (!x_.allFinite()) throw Error(ErrorKind::InvalidArgument, "design has non-finite entries");
  Eigen::ColPivHouseholderQR<Matrix> qr(x_);
  require_rank(qr);
  u_ = qr.householderQ() * Matrix::Identity(n, p);
}

Design Design::head(Index n) const { return Design(x_.topRows(n)); }

DiagonalWeights::DiagonalWeights(Vector d) : d_(std::move(d)) {
  for (Index i = 0; i < d_.size(); ++i) {
    if (!(d_[i] > 0.0) || !std::isfinite(d_[i])) {
      std::ostringstream os;
      os << "weight " << i << " is not a positive finite number (" << d_[i] << ")";
      throw Error(ErrorKind::NonPositive, os.str());
    }
  }
}

RegressionFit fls_fit(const Design& design, const Vector& y, const DiagonalWeights& weights, Method tag) {
  const Index n = design.rows();
  if (y.size() != n || weights.size() != n)
    throw Error(ErrorKind::DimensionMismatch, "response and weights must have one entry per design row");
  const Vector s = weights.values().cwiseSqrt().cwiseInverse();
  const Matrix a = s.asDiagonal() * design.x();
  Eigen::ColPivHouseholderQR<Matrix> qr(a);
  require_rank(qr);
  const Vector ys = s.cwiseProduct(y);

  RegressionFit fit;
  fit.beta = qr.solve(ys);
  fit.method = tag;
  fit.weights_used = weights;
  fit.diagnostics.objective = (ys - a * fit.beta).squaredNorm();
  return fit;
}

RegressionFit ols_fit(const Design& design, const Vector& y) {
  return fls_fit(design, y, DiagonalWeights::ones(design.rows()), Method::OLS);
}

Matrix weighted_sandwich(const Matrix& x, const Vector& w, const Vector& m) {
  const Index n = x.rows(), p = x.cols();
  if (w.size() != n || m.size() != n) throw Error(ErrorKind::DimensionMismatch, "sandwich weights length mismatch");
  // With diag(sqrt(w)) X P = Q R the bread is P R^{-1} R^{-T} P', so the
  // sandwich collapses to P R^{-1} (Q' diag(m / w) Q) R^{-T} P'.
  Eigen::ColPivHouseholderQR<Matrix> qr(w.cwiseSqrt().asDiagonal() * x);
  require_rank(qr);
  const Matrix q = qr.householderQ() * Matrix::Identity(n, p);
  const Matrix inner = q.transpose() * m.cwiseQuotient(w).asDiagonal() * q;
  const auto r = qr.matrixR().topLeftCorner(p, p).template triangularView<Eigen::Upper>();
  Matrix left = r.solve(Matrix::Identity(p, p));            // R^{-1}
  Matrix core = left * inner * left.transpose();
  Matrix out = qr.colsPermutation() * core * qr.colsPermutation().transpose();
  return 0.5 * (out + out.transpose());
}

Matrix sandwich_cov(const Design& design, const DiagonalWeights& fls, const DiagonalWeights& truth) {
  const Index n = design.rows();
  if (fls.size() != n || truth.size() != n) throw Error(ErrorKind::DimensionMismatch, "weights length mismatch");
  const Vector phi = fls.inverse();
  return weighted_sandwich(design.x(), phi, phi.cwiseAbs2().cwiseProduct(truth.values()));
}

FullCovariance eigendecompose(const Matrix& v) {
  if (v.rows() != v.cols()) throw Error(ErrorKind::DimensionMismatch, "matrix must be square");
  const double scale = std::max(1.0, v.cwiseAbs().maxCoeff());
  if ((v - v.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw Error(ErrorKind::NotSymmetric, "matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(v);
  if (es.info() != Eigen::Success) throw Error(ErrorKind::NotPD, "eigendecomposition failed");
  if (!(es.eigenvalues().minCoeff() > 0.0)) throw Error(ErrorKind::NotPD, "matrix is not positive definite");
  const Index n = v.rows();
  FullCovariance out;
  out.v = v;
  out.eigvals.resize(n);
  out.eigvecs.resize(n, n);
  // SelfAdjointEigenSolver sorts ascending.
  for (Index k = 0; k < n; ++k) {
    out.eigvals[k] = es.eigenvalues()[n - 1 - k];
    out.eigvecs.col(k) = es.eigenvectors().col(n - 1 - k);
  }
  return out;
}

}  // namespace subsced
