#include "subsced/subscedastic.hpp"

#include "subsced/grm.hpp"
#include "subsced/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>

namespace subsced {

namespace {

void check_pair_inputs(const DiagonalWeights& candidate, const DiagonalWeights& truth) {
  if (candidate.size() != truth.size())
    throw Error(ErrorKind::LengthMismatch, "candidate and truth must have equal length");
  if (candidate.size() < 2) throw Error(ErrorKind::LengthMismatch, "need at least two entries");
}

// k restricted to u = sqrt(t) e_i + sqrt(1-t) e_j.
double pair_k(double pi, double pj, double oi, double oj, double t) {
  const double s = 1.0 - t;
  const double quad = t * pi * pi * oi + s * pj * pj * oj;
  const double pu = t * pi + s * pj;
  const double ou = t * oi + s * oj;
  return quad - pu * pu * ou;
}

struct PairMax {
  double value;
  double t;
};

// Maximum of the cubic k(t) on [0, 1]: grid, endpoints, the nontrivial root
// and the two stationary points of the cubic.
PairMax pair_max(double pi, double pj, double oi, double oj, int grid) {
  PairMax best{0.0, 1.0};
  auto consider = [&](double t) {
    if (!(t >= 0.0 && t <= 1.0)) return;
    const double v = pair_k(pi, pj, oi, oj, t);
    if (v > best.value) best = {v, t};
  };
  for (int m = 0; m <= grid; ++m) consider(static_cast<double>(m) / grid);

  const double a = pi - pj, b = oi - oj;
  if (a != 0.0 && b != 0.0) {
    consider((2.0 * pj * oj - (pi + pj) * oi) / (a * b));
    // k(t) = c1 t + c2 t^2 + c3 t^3
    const double c1 = pi * pi * oi - pj * pj * oj - pj * pj * b - 2.0 * pj * a * oj;
    const double c2 = -(2.0 * pj * a * b + a * a * oj);
    const double c3 = -a * a * b;
    const double qa = 3.0 * c3, qb = 2.0 * c2, qc = c1;
    const double disc = qb * qb - 4.0 * qa * qc;
    if (disc >= 0.0) {
      const double sq = std::sqrt(disc);
      const double q = -0.5 * (qb + std::copysign(sq, qb));
      if (q != 0.0) {
        consider(q / qa);
        consider(qc / q);
      }
    }
  }
  return best;
}

Vector embed(Index n, Index i, Index j, double t) {
  Vector u = Vector::Zero(n);
  u[i] = std::sqrt(t);
  u[j] = std::sqrt(1.0 - t);
  return u;
}

}  // namespace

SubscedasticCertificate certify(const DiagonalWeights& candidate, const DiagonalWeights& truth) {
  check_pair_inputs(candidate, truth);
  const Index n = truth.size();
  const Vector& w = candidate.values();
  const Vector& o = truth.values();

  SubscedasticCertificate cert;
  cert.margin = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (i == j || o[i] < o[j]) continue;
      const double rt = w[i] / w[j];
      const double r = o[i] / o[j];
      const double m = std::min(rt - 1.0, 2.0 * r - 1.0 - rt);
      if (m < cert.margin) {
        cert.margin = m;
        cert.witness_pair = std::make_pair(i, j);
      }
    }
  }
  cert.verdict = cert.margin >= -kCertifyTol;
  if (!cert.verdict) {
    const auto [i, j] = *cert.witness_pair;
    const PairMax pm = pair_max(1.0 / w[i], 1.0 / w[j], o[i], o[j], 4096);
    cert.witness_vector = embed(n, i, j, pm.t);
  }
  return cert;
}

double k_value(const DiagonalWeights& candidate, const DiagonalWeights& truth, const Vector& u) {
  check_pair_inputs(candidate, truth);
  const Vector phi = candidate.inverse();
  const Vector pu = phi.cwiseProduct(u);
  const double a = pu.cwiseProduct(truth.values()).dot(pu);
  const double b = phi.dot(u.cwiseAbs2());
  const double c = truth.values().dot(u.cwiseAbs2());
  return a - b * b * c;
}

ExcessResult brute_force_excess(const DiagonalWeights& candidate, const DiagonalWeights& truth, int grid) {
  check_pair_inputs(candidate, truth);
  if (grid < 1) throw Error(ErrorKind::InvalidArgument, "grid must be positive");
  const Index n = truth.size();
  const Vector phi = candidate.inverse();
  const Vector& o = truth.values();

  ExcessResult res;
  res.excess = -std::numeric_limits<double>::infinity();
  res.scale = phi.cwiseAbs2().cwiseProduct(o).maxCoeff();
  double best_t = 1.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const PairMax pm = pair_max(phi[i], phi[j], o[i], o[j], grid);
      if (pm.value > res.excess) {
        res.excess = pm.value;
        res.pair = {i, j};
        best_t = pm.t;
      }
    }
  }
  res.u = embed(n, res.pair.first, res.pair.second, best_t);
  return res;
}

double trace_criterion_excess(const DiagonalWeights& candidate, const DiagonalWeights& truth, const Design& design) {
  const Matrix hw = sandwich_cov(design, candidate, truth);
  const Matrix hi = sandwich_cov(design, DiagonalWeights::ones(design.rows()), truth);
  return hw.trace() - hi.trace();
}

double relative_trace_excess(const DiagonalWeights& candidate, const DiagonalWeights& truth, const Design& design) {
  const Matrix hw = sandwich_cov(design, candidate, truth);
  const Matrix hi = sandwich_cov(design, DiagonalWeights::ones(design.rows()), truth);
  const Matrix m = hi.ldlt().solve(hw);
  return m.trace() / static_cast<double>(design.cols()) - 1.0;
}

std::pair<Vector, Vector> joint_spectra(const FullCovariance& candidate, const FullCovariance& truth) {
  const Matrix& a = candidate.v;
  const Matrix& b = truth.v;
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() != a.cols())
    throw Error(ErrorKind::LengthMismatch, "covariances must be square and of equal size");
  const double na = a.cwiseAbs().maxCoeff(), nb = b.cwiseAbs().maxCoeff();
  // A generic combination of two commuting matrices has the joint eigenvectors
  // as its own; a second coefficient guards against accidental eigenvalue ties.
  constexpr std::array<double, 3> mix{0.6180339887498949, 0.4142135623730951, 1.7320508075688772};
  for (const double c : mix) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(b / nb + c * a / na);
    const Matrix& q = es.eigenvectors();
    const Matrix da = q.transpose() * a * q;
    const Matrix db = q.transpose() * b * q;
    const double offa = (da - Matrix(da.diagonal().asDiagonal())).cwiseAbs().maxCoeff();
    const double offb = (db - Matrix(db.diagonal().asDiagonal())).cwiseAbs().maxCoeff();
    if (offa <= 1e-8 * na && offb <= 1e-8 * nb) return {da.diagonal(), db.diagonal()};
  }
  throw Error(ErrorKind::NotSimultaneouslyDiagonalizable, "covariances do not share an eigenbasis");
}

SubscedasticCertificate certify_simultaneous(const FullCovariance& candidate, const FullCovariance& truth) {
  const auto [wc, wt] = joint_spectra(candidate, truth);
  return certify(DiagonalWeights(wc), DiagonalWeights(wt));
}

SetPropertyReport set_properties_check(const DiagonalWeights& truth, int samples, std::uint64_t seed) {
  std::mt19937_64 rng = rng_stream(seed, 0);
  SetPropertyReport rep;
  rep.samples = samples;
  const DiagonalWeights truth_inv(truth.inverse());
  for (int s = 0; s < samples; ++s) {
    const DiagonalWeights a = grm_to_subscedastic(random_grm_function(rng), truth);
    const DiagonalWeights b = grm_to_subscedastic(random_grm_function(rng), truth);
    for (const double t : {0.25, 0.5, 0.75}) {
      if (!certify(DiagonalWeights(t * a.values() + (1.0 - t) * b.values()), truth).verdict)
        ++rep.convexity_failures;
    }
    for (const double c : {1e-3, 1e3}) {
      if (!certify(DiagonalWeights(c * a.values()), truth).verdict) ++rep.cone_failures;
    }
    if (!certify(DiagonalWeights(a.inverse()), truth_inv).verdict) ++rep.inverse_failures;
    for (const double c : {0.1, 10.0}) {
      if (!certify(DiagonalWeights(a.values().array() + c), truth).verdict) ++rep.regularization_failures;
    }
  }
  return rep;
}

}  // namespace subsced
