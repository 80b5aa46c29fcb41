#pragma once

#include "subsced/grm.hpp"
#include "subsced/linmodel.hpp"

#include <optional>
#include <string>
#include <vector>

namespace subsced {

// y_i | w_i ~ N(x_i' beta, w_i), w_i ~ InvGamma(nu/2, nu omega0/2): t errors
// with scale omega0 and nu degrees of freedom.
struct TModelParams {
  Vector beta;
  double omega0 = 1.0;
  double nu = 7.0;
};

struct HuberParams {
  double k = 1.345;
};

struct EMTrace {
  std::vector<double> loglik;
  std::vector<TModelParams> snapshots;
  bool converged = false;
};

struct TEMOptions {
  std::optional<double> fix_nu;
  std::optional<double> fix_omega0;
  double tol = 1e-8;
  int max_iter = 500;
  bool keep_snapshots = false;
};

struct TEMResult {
  RegressionFit fit;
  TModelParams params;
  EMTrace trace;
};

constexpr double kNuMin = 0.1;
constexpr double kNuMax = 1000.0;

// Lower end of the nu search, max(kNuMin, 2p / (n - p)). Below p / (n - p) an
// exact fit through p points makes the likelihood unbounded as omega0 -> 0.
double t_nu_lower_bound(Index n, Index p);

// OLS coefficients, median squared residual as scale, nu = 7.
TModelParams t_em_init(const Design& design, const Vector& y);

double t_loglik(const Design& design, const Vector& y, const TModelParams& params);

TEMResult t_em_fit(const Design& design, const Vector& y, const TModelParams& init, const TEMOptions& opts = {});

// Sum of per-observation scores of the t log-likelihood in beta.
Vector t_score(const Design& design, const Vector& y, const TModelParams& params);

struct HuberOptions {
  double tol = 1e-10;
  int max_iter = 5000;
};

RegressionFit huber_fit(const Design& design, const Vector& y, const HuberParams& params,
                        const HuberOptions& opts = {});

// Per-observation factors of the asymptotic covariance V^{-1} B V^{-1},
// V = sum x x' / g(omega_i), B = sum x x' / f(omega_i).
struct AsymFG {
  double f;
  double g;
};

AsymFG t_asym_fg(double omega, double omega0, double nu);
AsymFG huber_asym_fg(double omega, double k);

ScedasticFunction t_scedastic(double omega0, double nu);
ScedasticFunction huber_scedastic(double k);

enum class WorstCaseKind { T, HUBER };

// g(w)^2 / (w f(w)) at w = ratio * nu * omega0 (T) or w = ratio * k^2 (HUBER).
double worst_case_constant(WorstCaseKind kind, double ratio);

// Large-sample limit of the scale estimate when nu is held fixed and the errors
// are N(0, omega_i): the root of omega0 = n / ((nu + 1) sum E[1 / (eps_i^2 + nu omega0)]).
double t_limit_omega0(const Vector& omegas, double nu);

Matrix t_asym_cov(const Matrix& rows, const Vector& omegas, const TModelParams& params);
Matrix huber_asym_cov(const Matrix& rows, const Vector& omegas, const HuberParams& params);

struct IntervalSet {
  Vector estimate;
  Vector lower;
  Vector upper;
  Matrix cov;
  std::string estimator;
};

IntervalSet wald_intervals(const Vector& estimate, const Matrix& cov, double alpha, std::string label);

IntervalSet t_sandwich_ci(const Design& design, const Vector& y, const TModelParams& fit, double alpha);

enum class HCVariant { HC0, HC1, HC2, HC3 };
const char* to_string(HCVariant v);

Matrix hc_cov(const Design& design, const Vector& residuals, HCVariant variant);
Matrix homoscedastic_cov(const Design& design, const Vector& residuals);

// Empirical sandwich (sum psi' x x')^{-1} (sum psi^2 x x') (sum psi' x x')^{-1}.
Matrix huber_sandwich_cov(const Design& design, const Vector& residuals, const HuberParams& params);

}  // namespace subsced
