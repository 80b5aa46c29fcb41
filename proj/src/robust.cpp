#include "subsced/robust.hpp"

#include "subsced/special.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace subsced {

namespace {

constexpr double kMinScale = 1e-12;

double median(Vector v) {
  const Index n = v.size();
  std::sort(v.data(), v.data() + n);
  return (n % 2) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// (X' diag(b) X)^{-1} (X' diag(m) X) (X' diag(b) X)^{-1} for a possibly
// indefinite bread; singular breads are rejected.
Matrix bread_meat(const Matrix& x, const Vector& b, const Vector& m) {
  const Matrix h = x.transpose() * b.asDiagonal() * x;
  const Matrix meat = x.transpose() * m.asDiagonal() * x;
  Eigen::SelfAdjointEigenSolver<Matrix> es(h);
  const Vector ev = es.eigenvalues();
  const double top = ev.cwiseAbs().maxCoeff();
  if (!(top > 0.0) || ev.cwiseAbs().minCoeff() < 1e-12 * top)
    throw Error(ErrorKind::SingularHessian, "Hessian sum is numerically singular");
  const Matrix hinv = es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  const Matrix out = hinv * meat * hinv;
  return 0.5 * (out + out.transpose());
}

void check_response(const Design& design, const Vector& y) {
  if (y.size() != design.rows()) throw Error(ErrorKind::DimensionMismatch, "response length mismatch");
}

void check_t_params(const TModelParams& p, Index cols) {
  if (p.beta.size() != cols) throw Error(ErrorKind::DimensionMismatch, "beta length mismatch");
  if (!(p.omega0 > 0.0) || !(p.nu > 0.0)) throw Error(ErrorKind::InvalidArgument, "omega0 and nu must be positive");
}

// Part of the expected complete-data log-likelihood that depends on nu:
// (nu/2) (n log(nu omega0 / 2) - sum E log w_i - omega0 sum E[1/w_i]) - n lgamma(nu/2).
struct NuObjective {
  double n;
  double omega0;
  double sum_elog;
  double sum_einv;
  double operator()(double nu) const {
    return 0.5 * nu * (n * std::log(0.5 * nu * omega0) - sum_elog - omega0 * sum_einv) -
           n * boost::math::lgamma(0.5 * nu);
  }
};

double golden_max_log(const NuObjective& q, double lo, double hi, double tol) {
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = std::log(lo), b = std::log(hi);
  double c = b - invphi * (b - a), d = a + invphi * (b - a);
  double fc = q(std::exp(c)), fd = q(std::exp(d));
  while (b - a > tol) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - invphi * (b - a);
      fc = q(std::exp(c));
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + invphi * (b - a);
      fd = q(std::exp(d));
    }
  }
  return std::exp(0.5 * (a + b));
}

}  // namespace

const char* to_string(HCVariant v) {
  switch (v) {
    case HCVariant::HC0: return "HC0";
    case HCVariant::HC1: return "HC1";
    case HCVariant::HC2: return "HC2";
    case HCVariant::HC3: return "HC3";
  }
  return "HC?";
}

double t_nu_lower_bound(Index n, Index p) {
  if (n <= p) throw Error(ErrorKind::DimensionMismatch, "need n > p");
  return std::max(kNuMin, 2.0 * static_cast<double>(p) / static_cast<double>(n - p));
}

TModelParams t_em_init(const Design& design, const Vector& y) {
  check_response(design, y);
  TModelParams p;
  p.beta = ols_fit(design, y).beta;
  const Vector r = y - design.x() * p.beta;
  p.omega0 = std::max(median(r.cwiseAbs2()), kMinScale);
  p.nu = 7.0;
  return p;
}

double t_loglik(const Design& design, const Vector& y, const TModelParams& params) {
  check_response(design, y);
  check_t_params(params, design.cols());
  const double nu = params.nu, w0 = params.omega0;
  const Vector r = y - design.x() * params.beta;
  const double c = boost::math::lgamma(0.5 * (nu + 1.0)) - boost::math::lgamma(0.5 * nu) -
                   0.5 * std::log(std::numbers::pi * nu * w0);
  double s = 0.0;
  for (Index i = 0; i < r.size(); ++i) s += std::log1p(r[i] * r[i] / (nu * w0));
  return static_cast<double>(r.size()) * c - 0.5 * (nu + 1.0) * s;
}

Vector t_score(const Design& design, const Vector& y, const TModelParams& params) {
  check_response(design, y);
  const Vector r = y - design.x() * params.beta;
  const double nw = params.nu * params.omega0;
  const Vector a = ((params.nu + 1.0) * r.array() / (nw + r.array().square())).matrix();
  return design.x().transpose() * a;
}

TEMResult t_em_fit(const Design& design, const Vector& y, const TModelParams& init, const TEMOptions& opts) {
  check_response(design, y);
  check_t_params(init, design.cols());
  const Index n = design.rows();
  const double dn = static_cast<double>(n);
  const Matrix& x = design.x();

  TEMResult out;
  TModelParams cur = init;
  const double nu_lo = t_nu_lower_bound(n, design.cols());
  if (opts.fix_nu) cur.nu = *opts.fix_nu;
  else cur.nu = std::clamp(cur.nu, nu_lo, kNuMax);
  if (opts.fix_omega0) cur.omega0 = *opts.fix_omega0;
  check_t_params(cur, design.cols());

  out.trace.loglik.push_back(t_loglik(design, y, cur));
  if (opts.keep_snapshots) out.trace.snapshots.push_back(cur);

  Vector s;
  int it = 0;
  bool converged = false;
  while (it < opts.max_iter && !converged) {
    ++it;
    const Vector r = y - x * cur.beta;
    s = (r.array().square() + cur.nu * cur.omega0).matrix();

    TModelParams next = cur;
    next.beta = fls_fit(design, y, DiagonalWeights(s), Method::T_MLE).beta;

    const double sum_inv = s.cwiseInverse().sum();
    if (!opts.fix_omega0) {
      next.omega0 = dn / ((cur.nu + 1.0) * sum_inv);
      if (!(next.omega0 >= kMinScale))
        throw Error(ErrorKind::DegenerateScale, "scale estimate collapsed below 1e-12");
    }
    if (!opts.fix_nu) {
      const double dg = boost::math::digamma(0.5 * (cur.nu + 1.0));
      double sum_elog = 0.0;
      for (Index i = 0; i < n; ++i) sum_elog += std::log(0.5 * s[i]) - dg;
      const NuObjective q{dn, next.omega0, sum_elog, (cur.nu + 1.0) * sum_inv};
      const double cand = golden_max_log(q, nu_lo, kNuMax, 1e-10);
      // A golden-section answer is only accepted when it does not lower the objective.
      next.nu = q(cand) >= q(cur.nu) ? cand : cur.nu;
    }

    const double beta_scale = cur.beta.cwiseAbs().maxCoeff() + std::sqrt(cur.omega0);
    double change = (next.beta - cur.beta).cwiseAbs().maxCoeff() / beta_scale;
    change = std::max(change, std::fabs(next.omega0 - cur.omega0) / cur.omega0);
    change = std::max(change, std::fabs(std::log(next.nu / cur.nu)));
    cur = next;
    out.trace.loglik.push_back(t_loglik(design, y, cur));
    if (opts.keep_snapshots) out.trace.snapshots.push_back(cur);
    converged = change < opts.tol;
  }

  out.params = cur;
  out.trace.converged = converged;
  out.fit.beta = cur.beta;
  out.fit.method = Method::T_MLE;
  if (s.size() == n) out.fit.weights_used = DiagonalWeights(s);
  out.fit.diagnostics.iterations = it;
  out.fit.diagnostics.converged = converged;
  out.fit.diagnostics.objective = out.trace.loglik.back();
  return out;
}

RegressionFit huber_fit(const Design& design, const Vector& y, const HuberParams& params, const HuberOptions& opts) {
  check_response(design, y);
  if (!(params.k > 0.0)) throw Error(ErrorKind::InvalidArgument, "Huber threshold must be positive");
  const Matrix& x = design.x();
  const double k = params.k;

  RegressionFit fit = ols_fit(design, y);
  Vector beta = fit.beta;
  Vector w;
  int it = 0;
  bool converged = false;
  while (it < opts.max_iter && !converged) {
    ++it;
    const Vector r = y - x * beta;
    w = r.unaryExpr([k](double v) { return std::fabs(v) <= k ? 1.0 : k / std::fabs(v); });
    const Vector next = fls_fit(design, y, DiagonalWeights(w.cwiseInverse()), Method::HUBER).beta;
    const double scale = std::max(beta.cwiseAbs().maxCoeff(), 1e-300);
    converged = (next - beta).cwiseAbs().maxCoeff() <= opts.tol * scale;
    beta = next;
  }
  const Vector r = y - x * beta;
  double obj = 0.0;
  for (Index i = 0; i < r.size(); ++i) {
    const double a = std::fabs(r[i]);
    obj += a <= k ? 0.5 * a * a : k * a - 0.5 * k * k;
  }
  fit.beta = beta;
  fit.method = Method::HUBER;
  fit.weights_used = DiagonalWeights(w.cwiseInverse());
  fit.diagnostics = {it, converged, obj};
  return fit;
}

AsymFG t_asym_fg(double omega, double omega0, double nu) {
  if (!(omega > 0.0 && omega0 > 0.0 && nu > 0.0)) throw Error(ErrorKind::InvalidArgument, "inputs must be positive");
  const double x = std::sqrt(nu * omega0 / omega);
  const MillsTails t = mills_tails(x);
  // 1 - h(x) = R K1 and h(x)(1 + 1/x^2) - 1 = R K1 K2 / x.
  return {2.0 * omega * x / (t.r * t.k1 * t.k2), omega / (t.r * t.k1)};
}

AsymFG huber_asym_fg(double omega, double k) {
  if (!(omega > 0.0 && k > 0.0)) throw Error(ErrorKind::InvalidArgument, "inputs must be positive");
  const double a = k / std::sqrt(omega);
  const double inside = std::erf(a / std::numbers::sqrt2);
  const double outside = std::erfc(a / std::numbers::sqrt2);
  const double dens = std::exp(-0.5 * a * a) / std::sqrt(2.0 * std::numbers::pi);
  // E[psi_k(e)^2] / omega for e ~ N(0, omega).
  const double m2 = inside - 2.0 * a * dens + a * a * outside;
  return {1.0 / (omega * m2), 1.0 / inside};
}

ScedasticFunction t_scedastic(double omega0, double nu) {
  return {[omega0, nu](double w) { return t_asym_fg(w, omega0, nu).g; }, "t_weight",
          {{"omega0", omega0}, {"nu", nu}}};
}

ScedasticFunction huber_scedastic(double k) {
  return {[k](double w) { return huber_asym_fg(w, k).g; }, "huber_weight", {{"k", k}}};
}

double worst_case_constant(WorstCaseKind kind, double ratio) {
  if (!(ratio > 0.0)) throw Error(ErrorKind::InvalidArgument, "ratio must be positive");
  const AsymFG fg = kind == WorstCaseKind::T ? t_asym_fg(ratio, 1.0, 1.0) : huber_asym_fg(ratio, 1.0);
  return fg.g * fg.g / (ratio * fg.f);
}

double t_limit_omega0(const Vector& omegas, double nu) {
  if (!(nu > 0.0) || omegas.size() == 0 || !(omegas.minCoeff() > 0.0))
    throw Error(ErrorKind::InvalidArgument, "t_limit_omega0 needs nu > 0 and positive variances");
  const double n = static_cast<double>(omegas.size());
  double w0 = median(omegas);
  for (int it = 0; it < 10000; ++it) {
    // E[1 / (eps^2 + c)] = R(x) / (omega x) with x = sqrt(c / omega).
    double s = 0.0;
    for (Index i = 0; i < omegas.size(); ++i) {
      const double x = std::sqrt(nu * w0 / omegas[i]);
      s += mills_ratio(x) / (omegas[i] * x);
    }
    const double next = n / ((nu + 1.0) * s);
    if (std::fabs(next - w0) <= 1e-14 * next) return next;
    w0 = next;
  }
  throw Error(ErrorKind::NotConverged, "t_limit_omega0 fixed point did not settle");
}

Matrix t_asym_cov(const Matrix& rows, const Vector& omegas, const TModelParams& params) {
  if (rows.rows() != omegas.size()) throw Error(ErrorKind::DimensionMismatch, "one variance per row");
  Vector ig(omegas.size()), jf(omegas.size());
  for (Index i = 0; i < omegas.size(); ++i) {
    const AsymFG fg = t_asym_fg(omegas[i], params.omega0, params.nu);
    ig[i] = 1.0 / fg.g;
    jf[i] = 1.0 / fg.f;
  }
  return weighted_sandwich(rows, ig, jf);
}

Matrix huber_asym_cov(const Matrix& rows, const Vector& omegas, const HuberParams& params) {
  if (rows.rows() != omegas.size()) throw Error(ErrorKind::DimensionMismatch, "one variance per row");
  Vector ig(omegas.size()), jf(omegas.size());
  for (Index i = 0; i < omegas.size(); ++i) {
    const AsymFG fg = huber_asym_fg(omegas[i], params.k);
    ig[i] = 1.0 / fg.g;
    jf[i] = 1.0 / fg.f;
  }
  return weighted_sandwich(rows, ig, jf);
}

IntervalSet wald_intervals(const Vector& estimate, const Matrix& cov, double alpha, std::string label) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(ErrorKind::InvalidArgument, "alpha must lie in (0, 1]");
  const double z = alpha >= 1.0 ? 0.0 : normal_quantile(1.0 - 0.5 * alpha);
  const Vector half = z * cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  return {estimate, estimate - half, estimate + half, cov, std::move(label)};
}

IntervalSet t_sandwich_ci(const Design& design, const Vector& y, const TModelParams& fit, double alpha) {
  check_response(design, y);
  check_t_params(fit, design.cols());
  const Vector r = y - design.x() * fit.beta;
  const double nw = fit.nu * fit.omega0;
  const Eigen::ArrayXd r2 = r.array().square();
  const Eigen::ArrayXd d2 = (nw + r2).square();
  const Vector score_sq = ((fit.nu + 1.0) * (fit.nu + 1.0) * r2 / d2).matrix();
  const Vector hess = ((fit.nu + 1.0) * (r2 - nw) / d2).matrix();
  return wald_intervals(fit.beta, bread_meat(design.x(), hess, score_sq), alpha, "t-sandwich");
}

Matrix hc_cov(const Design& design, const Vector& residuals, HCVariant variant) {
  const Index n = design.rows(), p = design.cols();
  if (residuals.size() != n) throw Error(ErrorKind::DimensionMismatch, "residual length mismatch");
  Vector m = residuals.cwiseAbs2();
  if (variant == HCVariant::HC1) {
    m *= static_cast<double>(n) / static_cast<double>(n - p);
  } else if (variant == HCVariant::HC2 || variant == HCVariant::HC3) {
    const Vector h = design.leverages();
    if (h.maxCoeff() >= 1.0 - 1e-12) throw Error(ErrorKind::LeverageOne, "an observation has leverage one");
    const Vector inv = (1.0 - h.array()).inverse().matrix();
    m = m.cwiseProduct(variant == HCVariant::HC2 ? inv : inv.cwiseAbs2());
  }
  return weighted_sandwich(design.x(), Vector::Ones(n), m);
}

Matrix homoscedastic_cov(const Design& design, const Vector& residuals) {
  const Index n = design.rows(), p = design.cols();
  if (residuals.size() != n) throw Error(ErrorKind::DimensionMismatch, "residual length mismatch");
  const double s2 = residuals.squaredNorm() / static_cast<double>(n - p);
  return weighted_sandwich(design.x(), Vector::Ones(n), Vector::Constant(n, s2));
}

Matrix huber_sandwich_cov(const Design& design, const Vector& residuals, const HuberParams& params) {
  if (residuals.size() != design.rows()) throw Error(ErrorKind::DimensionMismatch, "residual length mismatch");
  const double k = params.k;
  const Vector inside = residuals.unaryExpr([k](double v) { return std::fabs(v) < k ? 1.0 : 0.0; });
  const Vector psi2 = residuals.unaryExpr([k](double v) { return std::min(v * v, k * k); });
  return bread_meat(design.x(), inside, psi2);
}

}  // namespace subsced
