#include "instances.hpp"
#include "oracles.hpp"

#include "subsced/subscedastic.hpp"
#include "subsced/weightdesign.hpp"

#include <doctest.h>

using namespace subsced;

namespace {

DiagonalWeights dw(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (const double x : v) out[i++] = x;
  return DiagonalWeights(out);
}

FullCovariance diag_cov(const Vector& d) {
  FullCovariance fc;
  fc.v = d.asDiagonal();
  fc.eigvecs = Matrix::Identity(d.size(), d.size());
  fc.eigvals = d;
  return fc;
}

// X = [u, e_k for k outside the support of u], the witness design for p columns.
Matrix witness_design(const Vector& u, Index p) {
  const Index n = u.size();
  Matrix x = Matrix::Zero(n, p);
  x.col(0) = u;
  Index col = 1;
  for (Index k = 0; k < n && col < p; ++k)
    if (u[k] == 0.0) x(k, col++) = 1.0;
  return x;
}

}  // namespace

TEST_CASE("certify worked examples") {
  std::mt19937_64 rng(1);
  const Vector truth = instances::random_truth(rng, 7);
  CHECK(certify(DiagonalWeights::ones(7), DiagonalWeights(truth)).verdict);
  CHECK(certify(DiagonalWeights(truth), DiagonalWeights(truth)).verdict);

  const SubscedasticCertificate edge = certify(dw({1, 3}), dw({1, 2}));
  CHECK(edge.verdict);
  CHECK(edge.margin == doctest::Approx(0.0).scale(1.0));
  CHECK(!edge.witness_vector.has_value());

  const SubscedasticCertificate over = certify(dw({1, 3.0001}), dw({1, 2}));
  CHECK(!over.verdict);
  REQUIRE(over.witness_pair.has_value());
  CHECK(over.witness_pair->first == 1);
  CHECK(over.witness_pair->second == 0);
  CHECK(over.margin == doctest::Approx(-1e-4).epsilon(1e-9));
  REQUIRE(over.witness_vector.has_value());
  CHECK(over.witness_vector->norm() == doctest::Approx(1.0));
  CHECK(k_value(dw({1, 3.0001}), dw({1, 2}), *over.witness_vector) > 0.0);

  const SubscedasticCertificate flipped = certify(dw({2, 1}), dw({1, 2}));
  CHECK(!flipped.verdict);
  CHECK(flipped.margin == doctest::Approx(-0.5));

  CHECK_THROWS_AS(certify(dw({1, 2}), dw({1, 2, 3})), Error);
  CHECK_THROWS_AS(certify(dw({1}), dw({1})), Error);
}

TEST_CASE("certify treats ties through the closed condition") {
  CHECK(certify(dw({2, 2, 5}), dw({1, 1, 3})).verdict);
  CHECK(!certify(dw({2, 2.001, 5}), dw({1, 1, 3})).verdict);
  CHECK(certify(dw({2, 2 * (1 + 1e-13), 5}), dw({1, 1, 3})).verdict);
}

TEST_CASE("certify_simultaneous") {
  std::mt19937_64 rng(2);
  const Vector t = instances::random_truth(rng, 5);
  const Vector c = instances::random_candidate(rng, t);
  CHECK(certify_simultaneous(diag_cov(t), diag_cov(t)).verdict);
  CHECK(certify_simultaneous(diag_cov(c), diag_cov(t)).verdict == certify(DiagonalWeights(c), DiagonalWeights(t)).verdict);

  // Rotated into a shared random basis.
  const Matrix q = oracle::random_orthonormal(rng, 5, 5);
  FullCovariance rc, rt;
  rc.v = q * c.asDiagonal() * q.transpose();
  rt.v = q * t.asDiagonal() * q.transpose();
  const SubscedasticCertificate rot = certify_simultaneous(eigendecompose(rc.v), eigendecompose(rt.v));
  const SubscedasticCertificate flat = certify(DiagonalWeights(c), DiagonalWeights(t));
  CHECK(rot.verdict == flat.verdict);
  CHECK(rot.margin == doctest::Approx(flat.margin).epsilon(1e-6));

  Matrix other = Matrix::Identity(5, 5);
  other(0, 1) = other(1, 0) = 0.3;
  other(2, 2) = 4.0;
  CHECK_THROWS_AS(certify_simultaneous(eigendecompose(other), diag_cov(t)), Error);
}

TEST_CASE("brute_force_excess worked examples") {
  const ExcessResult same = brute_force_excess(dw({1, 2, 5}), dw({1, 2, 5}));
  CHECK(same.excess <= 1e-15);
  CHECK(same.excess >= -1e-15);
  const ExcessResult over = brute_force_excess(dw({1, 4}), dw({1, 2}));
  CHECK(over.excess > 0.0);
  CHECK(over.u.norm() == doctest::Approx(1.0));
  CHECK(k_value(dw({1, 4}), dw({1, 2}), over.u) == doctest::Approx(over.excess));
  CHECK(oracle::k_direct((Vector(2) << 1, 4).finished(), (Vector(2) << 1, 2).finished(), over.u) ==
        doctest::Approx(over.excess));
  const ExcessResult edge = brute_force_excess(dw({1, 3}), dw({1, 2}));
  CHECK(std::fabs(edge.excess) <= 1e-14);
}

TEST_CASE("oracle equivalence over random instances") {
  std::mt19937_64 rng(20);
  int agree = 0, trues = 0;
  const int total = 600;
  for (int rep = 0; rep < total; ++rep) {
    const Index n = 2 + rep % 5;
    const Vector t = instances::random_truth(rng, n);
    const Vector c = instances::random_candidate(rng, t);
    const SubscedasticCertificate cert = certify(DiagonalWeights(c), DiagonalWeights(t));
    const ExcessResult ex = brute_force_excess(DiagonalWeights(c), DiagonalWeights(t));
    const bool oracle_true = ex.excess <= 1e-10 * ex.scale;
    agree += (cert.verdict == oracle_true);
    trues += cert.verdict;
    CHECK(cert.verdict == oracle::pairwise_condition(c, t, 1e-12));
    if (!cert.verdict) CHECK(k_value(DiagonalWeights(c), DiagonalWeights(t), *cert.witness_vector) > 0.0);
  }
  CHECK(agree == total);
  CHECK(trues > total / 5);
  CHECK(trues < total * 4 / 5);
}

TEST_CASE("verdicts do not depend on p") {
  std::mt19937_64 rng(30);
  for (int rep = 0; rep < 20; ++rep) {
    const Index n = 6;
    const Vector t = instances::random_truth(rng, n);
    const Vector c = instances::certified_candidate(rng, t);
    for (int d = 0; d < 30; ++d) {
      const Index p = 1 + d % 3;
      const Design u(oracle::random_orthonormal(rng, n, p));
      const double dw_ = generalized_variance(sandwich_cov(u, DiagonalWeights(c), DiagonalWeights(t)));
      const double di = generalized_variance(sandwich_cov(u, DiagonalWeights::ones(n), DiagonalWeights(t)));
      CHECK(dw_ <= di * (1.0 + 1e-9) + 1e-10);
      CHECK(trace_criterion_excess(DiagonalWeights(c), DiagonalWeights(t), u) <= 1e-10 * t.maxCoeff());
    }
  }
  for (int rep = 0; rep < 20; ++rep) {
    const Index n = 6;
    const Vector t = instances::random_truth(rng, n);
    const Vector c = instances::violating_candidate(rng, t);
    const SubscedasticCertificate cert = certify(DiagonalWeights(c), DiagonalWeights(t));
    REQUIRE(!cert.verdict);
    for (Index p = 1; p <= 3; ++p) {
      const Design x(witness_design(*cert.witness_vector, p));
      const Matrix hw = sandwich_cov(x, DiagonalWeights(c), DiagonalWeights(t));
      const Matrix hi = sandwich_cov(x, DiagonalWeights::ones(n), DiagonalWeights(t));
      CHECK(generalized_variance(hw) > generalized_variance(hi));
      CHECK(hw.trace() > hi.trace());
    }
  }
}

TEST_CASE("trace criterion examples and sign agreement") {
  std::mt19937_64 rng(40);
  const Vector t = instances::random_truth(rng, 6);
  const Design d(oracle::random_orthonormal(rng, 6, 2));
  CHECK(trace_criterion_excess(DiagonalWeights::ones(6), DiagonalWeights(t), d) == 0.0);
  CHECK(trace_criterion_excess(DiagonalWeights(t), DiagonalWeights(t), d) <= 0.0);

  for (int rep = 0; rep < 200; ++rep) {
    const Index n = 3 + rep % 4;
    const Vector tt = instances::random_truth(rng, n);
    const Vector c = instances::random_candidate(rng, tt);
    const Design x(oracle::random_orthonormal(rng, n, 1 + rep % (n - 1)));
    const double excess = trace_criterion_excess(DiagonalWeights(c), DiagonalWeights(tt), x);
    if (certify(DiagonalWeights(c), DiagonalWeights(tt)).verdict) CHECK(excess <= 1e-10 * tt.maxCoeff());
    // Reported only; finite for every input.
    CHECK(std::isfinite(relative_trace_excess(DiagonalWeights(c), DiagonalWeights(tt), x)));
  }
}

TEST_CASE("continuity at tied variances") {
  std::mt19937_64 rng(50);
  std::uniform_int_distribution<int> level(1, 3);
  int checked = 0;
  for (int rep = 0; rep < 300; ++rep) {
    Vector t(5);
    for (Index i = 0; i < 5; ++i) t[i] = level(rng);
    const Vector c = instances::random_candidate(rng, t);
    const SubscedasticCertificate base = certify(DiagonalWeights(c), DiagonalWeights(t));
    if (std::fabs(base.margin) <= 1e-6) continue;
    ++checked;
    for (int s = 0; s < 4; ++s) {
      Vector tp = t;
      for (Index i = 0; i < 5; ++i) tp[i] *= 1.0 + (std::bernoulli_distribution(0.5)(rng) ? 1e-9 : -1e-9);
      CHECK(certify(DiagonalWeights(c), DiagonalWeights(tp)).verdict == base.verdict);
    }
  }
  CHECK(checked > 50);
}

TEST_CASE("set structure") {
  const SetPropertyReport rep = set_properties_check(dw({1, 2, 4}), 100, 7);
  CHECK(rep.samples == 100);
  CHECK(rep.total_failures() == 0);
  CHECK(set_properties_check(dw({3, 3, 3, 3}), 50, 8).total_failures() == 0);

  // Square-root weights and their images under each closure operation.
  const DiagonalWeights truth = dw({1, 2, 4});
  const DiagonalWeights root = dw({1, std::sqrt(2.0), 2});
  CHECK(certify(root, truth).verdict);
  CHECK(certify(DiagonalWeights(0.5 * root.values() + 0.5 * truth.values()), truth).verdict);
  CHECK(certify(DiagonalWeights(1e3 * root.values()), truth).verdict);
  CHECK(certify(DiagonalWeights(root.inverse()), DiagonalWeights(truth.inverse())).verdict);
  CHECK(certify(DiagonalWeights(root.values().array() + 10.0), truth).verdict);

  // Constant truth admits only constant candidates.
  CHECK(certify(dw({2, 2, 2}), dw({3, 3, 3})).verdict);
  CHECK(!certify(dw({2, 2.1, 2}), dw({3, 3, 3})).verdict);

  // Regularizing the boundary candidate moves it strictly inside.
  const double before = certify(dw({1, 19}), dw({1, 10})).margin;
  for (const double s : {0.1, 1.0, 10.0}) CHECK(certify(dw({1 + s, 19 + s}), dw({1, 10})).margin > before);
  CHECK(before == doctest::Approx(0.0).scale(1.0));
}
