#include "oracles.hpp"

#include "subsced/robust.hpp"

#include <doctest.h>

using namespace subsced;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (const double x : v) out[i++] = x;
  return out;
}

Matrix intercept_design(std::mt19937_64& rng, Index n, Index p) {
  std::normal_distribution<double> z;
  Matrix x(n, p);
  x.col(0).setOnes();
  for (Index j = 1; j < p; ++j)
    for (Index i = 0; i < n; ++i) x(i, j) = z(rng);
  return x;
}

// y = X beta + sqrt(omega0) t_nu.
Vector t_response(std::mt19937_64& rng, const Matrix& x, const Vector& beta, double nu, double omega0) {
  std::student_t_distribution<double> t(nu);
  Vector y = x * beta;
  for (Index i = 0; i < y.size(); ++i) y[i] += std::sqrt(omega0) * t(rng);
  return y;
}

}  // namespace

TEST_CASE("t EM on exact data") {
  std::mt19937_64 rng(1);
  const Matrix x = intercept_design(rng, 20, 3);
  const Vector c = vec({0.5, -1, 2});
  TModelParams init{Vector::Zero(3), 1.0, 7.0};
  TEMOptions opts;
  opts.fix_omega0 = 1.0;
  opts.fix_nu = 7.0;
  opts.max_iter = 1;
  const TEMResult first = t_em_fit(Design(x), x * c, init, opts);
  CHECK((first.params.beta - c).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(first.trace.loglik.size() == 2);
  // From the second iteration on every residual is zero and the weights are equal.
  opts.max_iter = 2;
  const TEMResult r = t_em_fit(Design(x), x * c, init, opts);
  REQUIRE(r.fit.weights_used.has_value());
  CHECK(r.fit.weights_used->values().maxCoeff() - r.fit.weights_used->values().minCoeff() < 1e-20);
  init.beta = c;

  // With a free scale the exact fit drives omega0 to zero.
  TEMOptions free;
  free.fix_nu = 7.0;
  try {
    t_em_fit(Design(x), x * c, init, free);
    FAIL("collapsing scale accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateScale);
  }
}

TEST_CASE("t EM monotonicity and stationarity") {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 10; ++rep) {
    const Index n = 60 + 40 * rep;
    const Matrix x = intercept_design(rng, n, 3);
    const Vector y = t_response(rng, x, vec({1, 2, -1}), 3.0 + rep, 0.5 + 0.2 * rep);
    const Design d(x);

    // The nu update converges linearly; some of these fits need a few thousand steps.
    TEMOptions opts;
    opts.keep_snapshots = true;
    opts.max_iter = 20000;
    const TEMResult adaptive = t_em_fit(d, y, t_em_init(d, y), opts);
    CHECK(adaptive.trace.converged);
    CHECK(adaptive.trace.snapshots.size() == adaptive.trace.loglik.size());
    for (std::size_t k = 1; k < adaptive.trace.loglik.size(); ++k)
      CHECK(adaptive.trace.loglik[k] >= adaptive.trace.loglik[k - 1] - 1e-8);

    TEMOptions fixed;
    fixed.fix_nu = 4.0;
    fixed.fix_omega0 = 0.8;
    fixed.tol = 1e-12;
    fixed.max_iter = 5000;
    const TEMResult f = t_em_fit(d, y, t_em_init(d, y), fixed);
    CHECK(f.trace.converged);
    for (std::size_t k = 1; k < f.trace.loglik.size(); ++k) CHECK(f.trace.loglik[k] >= f.trace.loglik[k - 1] - 1e-8);
    CHECK(t_score(d, y, f.params).cwiseAbs().maxCoeff() <= 1e-6 * static_cast<double>(n));
  }
}

TEST_CASE("t EM approaches OLS as nu grows") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z;
  const Index n = 500;
  const Matrix x = intercept_design(rng, n, 3);
  Vector y = x * vec({1, 1, 1});
  for (Index i = 0; i < n; ++i) y[i] += z(rng);
  const Design d(x);
  TEMOptions opts;
  opts.fix_nu = 1e4;
  const TEMResult r = t_em_fit(d, y, t_em_init(d, y), opts);
  CHECK((r.params.beta - ols_fit(d, y).beta).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("t EM recovers nu and omega0") {
  std::mt19937_64 rng(4);
  double nu_sum = 0.0, w_sum = 0.0;
  const int reps = 5;
  for (int rep = 0; rep < reps; ++rep) {
    const Matrix x = intercept_design(rng, 5000, 2);
    const Vector y = t_response(rng, x, vec({1, -1}), 5.0, 1.0);
    const Design d(x);
    const TEMResult r = t_em_fit(d, y, t_em_init(d, y));
    CHECK(r.trace.converged);
    nu_sum += r.params.nu;
    w_sum += r.params.omega0;
  }
  CHECK(std::fabs(nu_sum / reps - 5.0) <= 1.0);
  CHECK(std::fabs(w_sum / reps - 1.0) <= 0.15);
}

TEST_CASE("nu search bound") {
  CHECK(t_nu_lower_bound(100, 17) == doctest::Approx(34.0 / 83.0));
  CHECK(t_nu_lower_bound(5000, 2) == kNuMin);
  CHECK_THROWS_AS(t_nu_lower_bound(3, 3), Error);
}

TEST_CASE("Huber fits") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> small(-0.5, 0.5);
  const Matrix x = intercept_design(rng, 30, 3);
  Vector y = x * vec({1, 2, 3});
  for (Index i = 0; i < 30; ++i) y[i] += small(rng);
  const Design d(x);
  const RegressionFit h = huber_fit(d, y, HuberParams{1.345});
  CHECK((h.beta - ols_fit(d, y).beta).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(h.diagnostics.converged);
  CHECK(h.method == Method::HUBER);

  // Tiny k: the intercept-only fit is the sample median.
  const Vector obs = vec({3.1, -2, 7.5, 0.3, 11, 4.2, -6, 2.2, 9.9});
  const RegressionFit med = huber_fit(Design(Matrix::Ones(9, 1)), obs, HuberParams{1e-9});
  CHECK(std::fabs(med.beta[0] - oracle::sample_median(obs)) <= 1e-6);

  // One gross outlier in exact data: the optimum moves off c by exactly
  // k sign(r) (X_in' X_in)^{-1} x_out, the bounded influence of the outlier.
  const Vector c = vec({1, -2, 0.5});
  Vector yo = x * c;
  const Index out = 7;
  yo[out] += 50.0;
  const double k = 1.0;
  const RegressionFit ho = huber_fit(d, yo, HuberParams{k});
  Matrix xin(29, 3);
  for (Index i = 0, r = 0; i < 30; ++i)
    if (i != out) xin.row(r++) = x.row(i);
  const Vector shift = (xin.transpose() * xin).ldlt().solve(Vector(k * x.row(out).transpose()));
  CHECK((ho.beta - (c + shift)).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK((ho.beta - c).cwiseAbs().maxCoeff() <= 2.0 * shift.cwiseAbs().maxCoeff());

  CHECK_THROWS_AS(huber_fit(d, y, HuberParams{0.0}), Error);
}

TEST_CASE("t asymptotic factors") {
  const double nu = 5, w0 = 1;
  const AsymFG small = t_asym_fg(1e-8 * nu * w0, w0, nu);
  CHECK(small.g == doctest::Approx(nu * w0).epsilon(1e-4));

  for (const auto& [om, o0, n] : {std::tuple{2.0, 1.0, 5.0}, std::tuple{0.3, 2.0, 3.0}, std::tuple{40.0, 1.0, 7.0}}) {
    const AsymFG fg = t_asym_fg(om, o0, n);
    const oracle::FG q = oracle::t_fg(om, o0, n);
    CHECK(std::fabs(1.0 / fg.f - 1.0 / q.f) <= 1e-8 / q.f);
    CHECK(std::fabs(1.0 / fg.g - 1.0 / q.g) <= 1e-8 / q.g);
  }
  for (const auto& [o0, n] : {std::pair{1.0, 3.0}, std::pair{1.0, 7.0}, std::pair{2.0, 10.0}})
    CHECK(grm_check(t_scedastic(o0, n)).ok);

  // Extreme arguments stay finite and positive.
  for (const double om : {1e-12, 1e12}) {
    const AsymFG fg = t_asym_fg(om, 1.0, 7.0);
    CHECK(std::isfinite(fg.f));
    CHECK(fg.g > 0.0);
  }
}

TEST_CASE("Huber asymptotic factors") {
  const AsymFG tiny = huber_asym_fg(1e-4, 1.0);
  CHECK(tiny.g == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(tiny.f * 1e-4 == doctest::Approx(1.0).epsilon(1e-12));

  for (const auto& [om, k] : {std::pair{4.0, 1.0}, std::pair{0.5, 1.345}, std::pair{20.0, 3.0}}) {
    const AsymFG fg = huber_asym_fg(om, k);
    const oracle::FG q = oracle::huber_fg(om, k);
    CHECK(std::fabs(1.0 / fg.f - 1.0 / q.f) <= 1e-8 / q.f);
    CHECK(std::fabs(1.0 / fg.g - 1.0 / q.g) <= 1e-8 / q.g);
  }
  for (const double k : {0.5, 1.345, 3.0}) CHECK(grm_check(huber_scedastic(k)).ok);
}

TEST_CASE("worst-case constants") {
  struct Cell {
    double ratio, value;
  };
  for (const Cell c : {Cell{0.1, 1.024994}, Cell{0.2, 1.061614}, Cell{0.5, 1.16679}, Cell{1, 1.313124}})
    CHECK(std::fabs(worst_case_constant(WorstCaseKind::T, c.ratio) - c.value) <= 5e-6);
  for (const Cell c : {Cell{0.1, 1.000217}, Cell{0.2, 1.005255}, Cell{0.5, 1.045128}, Cell{1, 1.107267},
                       Cell{2, 1.184329}, Cell{5, 1.286343}})
    CHECK(std::fabs(worst_case_constant(WorstCaseKind::HUBER, c.ratio) - c.value) <= 5e-6);

  for (const double r : {0.1, 2.0, 5.0}) {
    CHECK(worst_case_constant(WorstCaseKind::T, r) ==
          doctest::Approx(oracle::worst_case(oracle::t_fg(r, 1, 1), r)).epsilon(1e-8));
    CHECK(worst_case_constant(WorstCaseKind::HUBER, r) ==
          doctest::Approx(oracle::worst_case(oracle::huber_fg(r, 1), r)).epsilon(1e-8));
  }
  double prev_t = 1.0, prev_h = 1.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = 0.1 * std::pow(50.0, k / 100.0);
    const double ct = worst_case_constant(WorstCaseKind::T, r);
    const double ch = worst_case_constant(WorstCaseKind::HUBER, r);
    CHECK(ct > prev_t);
    CHECK(ch > prev_h);
    prev_t = ct;
    prev_h = ch;
  }
}

TEST_CASE("asymptotic covariances") {
  const double om = 2.0, nu = 5.0, w0 = 1.0;
  const Index n = 12;
  const AsymFG fg = t_asym_fg(om, w0, nu);
  const Matrix c = t_asym_cov(Matrix::Ones(n, 1), Vector::Constant(n, om), TModelParams{Vector::Zero(1), w0, nu});
  CHECK(c(0, 0) == doctest::Approx(fg.g * fg.g / (n * fg.f)).epsilon(1e-13));

  // With f replaced by omega the sandwich is the FLS covariance with weights g.
  std::mt19937_64 rng(6);
  const Matrix x = intercept_design(rng, 25, 3);
  const Vector oms = oracle::log_uniform(rng, 25, 0.1, 10.0);
  Vector g(25);
  for (Index i = 0; i < 25; ++i) g[i] = t_asym_fg(oms[i], w0, nu).g;
  const Matrix a = weighted_sandwich(x, g.cwiseInverse(), oms.cwiseProduct(g.cwiseAbs2().cwiseInverse()));
  const Matrix b = sandwich_cov(Design(x), DiagonalWeights(g), DiagonalWeights(oms));
  CHECK((a - b).norm() <= 1e-12 * b.norm());
}

TEST_CASE("asymptotic covariances stay within the worst-case bounds") {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 100; ++rep) {
    const Index n = 30, p = 1 + rep % 4;
    const Matrix x = intercept_design(rng, n, p);
    const Vector oms = oracle::log_uniform(rng, n, 0.01, 5.0);
    const Matrix ols = sandwich_cov(Design(x), DiagonalWeights::ones(n), DiagonalWeights(oms));
    const double dp = static_cast<double>(p);

    const double nu = 3.0 + rep % 5, w0 = 0.5 + 0.1 * (rep % 7);
    const Matrix tc = t_asym_cov(x, oms, TModelParams{Vector::Zero(p), w0, nu});
    const double ct = worst_case_constant(WorstCaseKind::T, oms.maxCoeff() / (nu * w0));
    CHECK(generalized_variance(tc) <= std::pow(ct, dp) * generalized_variance(ols) * (1 + 1e-9));
    CHECK(tc.trace() <= ct * ols.trace() * (1 + 1e-9));

    const double k = 0.5 + 0.25 * (rep % 5);
    const Matrix hc = huber_asym_cov(x, oms, HuberParams{k});
    const double ch = worst_case_constant(WorstCaseKind::HUBER, oms.maxCoeff() / (k * k));
    CHECK(generalized_variance(hc) <= std::pow(ch, dp) * generalized_variance(ols) * (1 + 1e-9));
    CHECK(hc.trace() <= ch * ols.trace() * (1 + 1e-9));
  }
}

TEST_CASE("limit of the fixed-nu scale estimate") {
  // Homoscedastic N(0, omega) errors: the limit solves a scalar equation.
  const double om = 2.0, nu = 7.0;
  const double w0 = t_limit_omega0(Vector::Constant(10, om), nu);
  const double lhs = oracle::integrate_line([&](double e) { return oracle::normal_pdf(e, om) / (e * e + nu * w0); });
  CHECK(w0 == doctest::Approx(1.0 / ((nu + 1.0) * lhs)).epsilon(1e-9));
  CHECK_THROWS_AS(t_limit_omega0(Vector::Constant(3, -1.0), nu), Error);
}

TEST_CASE("HC and homoscedastic covariance examples") {
  const Design d(Matrix::Ones(4, 1));
  const Vector e = vec({1, -1, 2, -2});
  CHECK(hc_cov(d, e, HCVariant::HC0)(0, 0) == doctest::Approx(0.625).epsilon(1e-15));
  CHECK(hc_cov(d, e, HCVariant::HC1)(0, 0) == doctest::Approx(0.625 * 4.0 / 3.0).epsilon(1e-15));
  CHECK(hc_cov(d, e, HCVariant::HC2)(0, 0) == doctest::Approx(0.625 * 4.0 / 3.0).epsilon(1e-15));
  CHECK(hc_cov(d, e, HCVariant::HC3)(0, 0) == doctest::Approx(0.625 * 16.0 / 9.0).epsilon(1e-15));
  CHECK(homoscedastic_cov(d, e)(0, 0) == doctest::Approx(10.0 / 12.0).epsilon(1e-15));
  CHECK(homoscedastic_cov(d, Vector::Zero(4)).norm() == 0.0);

  std::mt19937_64 rng(8);
  const Matrix x = intercept_design(rng, 10, 2);
  const Vector r = Vector::Constant(10, 0.7).cwiseProduct(vec({1, -1, 1, -1, 1, -1, 1, -1, 1, -1}));
  const Matrix xtx_inv = (x.transpose() * x).inverse();
  CHECK((hc_cov(Design(x), r, HCVariant::HC0) - 0.49 * xtx_inv).norm() <= 1e-12);
  CHECK((hc_cov(Design(x), r, HCVariant::HC1) - hc_cov(Design(x), r, HCVariant::HC0) * 10.0 / 8.0).norm() <= 1e-12);
  CHECK((homoscedastic_cov(Design(x), r) - 0.49 * 10.0 / 8.0 * xtx_inv).norm() <= 1e-12);

  Matrix lev = Matrix::Ones(5, 2);
  lev.col(1) << 0, 0, 0, 0, 1;
  try {
    hc_cov(Design(lev), Vector::Ones(5), HCVariant::HC3);
    FAIL("leverage-one observation accepted");
  } catch (const Error& err) {
    CHECK(err.kind() == ErrorKind::LeverageOne);
  }
  CHECK_NOTHROW(hc_cov(Design(lev), Vector::Ones(5), HCVariant::HC0));
}

TEST_CASE("t sandwich intervals") {
  std::mt19937_64 rng(9);
  const Matrix x = intercept_design(rng, 200, 2);
  const Vector y = t_response(rng, x, vec({1, 1}), 5.0, 1.0);
  const Design d(x);
  const TEMResult fit = t_em_fit(d, y, t_em_init(d, y));
  const IntervalSet zero = t_sandwich_ci(d, y, fit.params, 1.0);
  CHECK(zero.lower == fit.params.beta);
  CHECK(zero.upper == fit.params.beta);
  const IntervalSet ci = t_sandwich_ci(d, y, fit.params, 0.05);
  CHECK((ci.upper - ci.lower).minCoeff() > 0.0);
  CHECK((ci.cov - ci.cov.transpose()).norm() <= 1e-10 * ci.cov.norm());
  CHECK_THROWS_AS(t_sandwich_ci(d, y, fit.params, 0.0), Error);
}

TEST_CASE("t sandwich coverage on well-specified data") {
  std::mt19937_64 rng(10);
  const Index n = 2000;
  const Matrix x = intercept_design(rng, n, 2);
  const Design d(x);
  const Vector beta = vec({1, -0.5});
  int covered = 0, total = 0;
  for (int rep = 0; rep < 500; ++rep) {
    const Vector y = t_response(rng, x, beta, 5.0, 1.0);
    const TEMResult fit = t_em_fit(d, y, t_em_init(d, y));
    const IntervalSet ci = t_sandwich_ci(d, y, fit.params, 0.05);
    for (Index j = 0; j < 2; ++j) {
      covered += (ci.lower[j] <= beta[j] && beta[j] <= ci.upper[j]);
      ++total;
    }
  }
  const double rate = static_cast<double>(covered) / total;
  CHECK(rate >= 0.93);
  CHECK(rate <= 0.97);
}
