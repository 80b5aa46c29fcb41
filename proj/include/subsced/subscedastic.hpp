#pragma once

#include "subsced/linmodel.hpp"

#include <cstdint>
#include <optional>
#include <utility>

namespace subsced {

// Result of checking 1 <= w_i/w_j <= 2 o_i/o_j - 1 over all pairs with o_i >= o_j.
struct SubscedasticCertificate {
  bool verdict = true;
  // Worst pair (i, j), 0-based, with truth_i >= truth_j. Set whenever n >= 2.
  std::optional<std::pair<Index, Index>> witness_pair;
  // Unit vector u with k(u) > 0, present when the verdict is false.
  std::optional<Vector> witness_vector;
  double margin = 0.0;
};

constexpr double kCertifyTol = 1e-12;

SubscedasticCertificate certify(const DiagonalWeights& candidate, const DiagonalWeights& truth);

// Certification of two commuting full covariances through their shared eigenbasis.
SubscedasticCertificate certify_simultaneous(const FullCovariance& candidate, const FullCovariance& truth);

// Paired spectra of two commuting covariances: eigenvalues of each along a common
// eigenbasis. Throws NotSimultaneouslyDiagonalizable when no such basis exists.
std::pair<Vector, Vector> joint_spectra(const FullCovariance& candidate, const FullCovariance& truth);

struct ExcessResult {
  double excess = 0.0;  // sup of k(u) over two-sparse unit vectors
  Vector u;             // maximizer
  std::pair<Index, Index> pair{0, 0};
  double scale = 1.0;   // max_i w_i^{-2} o_i, the natural magnitude of k
};

// k(u) = u' P O P u - (u' P u)^2 (u' O u) with P = diag(1/candidate), O = diag(truth).
double k_value(const DiagonalWeights& candidate, const DiagonalWeights& truth, const Vector& u);

ExcessResult brute_force_excess(const DiagonalWeights& candidate, const DiagonalWeights& truth, int grid = 4096);

double trace_criterion_excess(const DiagonalWeights& candidate, const DiagonalWeights& truth, const Design& design);

// Exploratory diagnostic: tr(H(W,O) H(I,O)^{-1}) / p - 1. Reported, never used to certify.
double relative_trace_excess(const DiagonalWeights& candidate, const DiagonalWeights& truth, const Design& design);

struct SetPropertyReport {
  int samples = 0;
  int convexity_failures = 0;
  int cone_failures = 0;
  int inverse_failures = 0;
  int regularization_failures = 0;
  int total_failures() const {
    return convexity_failures + cone_failures + inverse_failures + regularization_failures;
  }
};

SetPropertyReport set_properties_check(const DiagonalWeights& truth, int samples, std::uint64_t seed);

}  // namespace subsced
