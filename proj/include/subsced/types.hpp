#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace subsced {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

enum class ErrorKind {
  DimensionMismatch,
  RankDeficient,
  NonPSD,
  NotSymmetric,
  NotPD,
  LengthMismatch,
  NonPositive,
  NotSimultaneouslyDiagonalizable,
  NonPositiveValue,
  BadOrdering,
  DegenerateCovariate,
  EmptyBatch,
  NotConverged,
  DegenerateScale,
  SingularHessian,
  LeverageOne,
  InvalidArgument,
  ParseError,
};

const char* to_string(ErrorKind kind);

// Every failure raised by the library carries a machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace subsced
