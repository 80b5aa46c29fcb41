#pragma once

#include "subsced/linmodel.hpp"
#include "subsced/rng.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace subsced {

enum class DesignSource { GAUSSIAN, CSV };
enum class VarianceModel { CONSTANT, UNIFORM_IID, INV_GAMMA_QUANTILES, INV_GAMMA_IID, POWER_PRODUCT, MIXED_EFFECTS };
enum class Metric { SGV, MSE, COVERAGE, WIDTH, WIDTH_RATIO, DET_RATIO };
enum class ExperimentKind { SGV, COVERAGE, CONSISTENCY };

const char* to_string(Metric m);

struct ExperimentSpec {
  std::string name = "experiment";
  ExperimentKind kind = ExperimentKind::SGV;
  std::vector<Index> n_grid{50, 100, 200, 500};
  Index p = 4;
  int replicates = 1000;
  std::uint64_t seed = 1;

  // Design. Gaussian designs have design_rows rows (0 means max n_grid); the
  // first n rows are used at sample size n.
  DesignSource design_source = DesignSource::GAUSSIAN;
  std::string design_csv;
  std::vector<std::string> design_columns;  // empty means every column except `response`
  std::string response;                     // CSV response column for coverage base data
  bool intercept = true;
  bool standardize = true;
  Index design_rows = 0;

  // Variance model.
  VarianceModel variance_model = VarianceModel::INV_GAMMA_IID;
  double nu = 5.0;
  double omega0 = 1.0;
  double uniform_lo = 1.0, uniform_hi = 100.0;
  double power_scale = 1.1;
  std::vector<Index> power_columns{14, 15};
  std::vector<double> power_exponents{3.0, 2.0};
  int mixed_batches = 12;
  double mixed_theta0_sq = 1.0;
  double mixed_ig_shape = 1.0, mixed_ig_scale = 3.0;
  double mixed_gamma = 1.0;

  std::vector<std::string> estimators{"ols", "wls"};
  std::vector<Metric> metrics{Metric::SGV};

  // Estimator knobs.
  double huber_k = 1.345;
  double t_fixed_nu = 7.0;
  // Scale for the asymptotic fixed-nu estimator; unset means the large-sample
  // limit of the scale estimate (t_limit_omega0).
  std::optional<double> t_fixed_omega0;
  double em_tol = 1e-8;
  int em_max_iter = 500;

  // Coverage protocol.
  double alpha = 0.05;
  Index base_n = 200;
  double base_power = 3.0;  // synthetic base: Var(eps_i) = base_sigma^2 |x_i|^base_power
  double base_sigma = 1.0;
  double base_x_lo = 1.0, base_x_hi = 5.0;

  // Consistency protocol.
  std::string weight_rule = "noisy";  // fixed | noisy | parametric
  std::string base_rule = "sqrt";     // sqrt | identity | ones
  double noise = 1.0;

  // When non-empty, the experiment is repeated for each nu (see expand_sweep).
  std::vector<double> nu_sweep;

  int threads = 0;  // 0: hardware concurrency; SUBSCED_THREADS caps either
};

struct ResultRow {
  std::string estimator;
  Index n = 0;
  Metric metric = Metric::SGV;
  double value = 0.0;
  double mc_stderr = 0.0;
  bool closed_form = false;
  int dropped = 0;
  int not_converged = 0;
  bool valid = true;
};

struct ResultTable {
  std::string experiment;
  std::vector<ResultRow> rows;
  std::vector<std::string> notes;

  const ResultRow& find(const std::string& estimator, Index n, Metric metric) const;
  bool all_valid() const;
};

ExperimentSpec spec_from_json(const std::string& text);
std::string spec_to_json(const ExperimentSpec& spec);

// One spec per entry of nu_sweep (named <name>_nu<value>), or `spec` unchanged.
std::vector<ExperimentSpec> expand_sweep(const ExperimentSpec& spec);

// Throws InvalidArgument on inconsistent settings. Called by every run_*.
void validate_spec(const ExperimentSpec& spec);

// Worker count: `requested` if positive, else hardware concurrency, capped by SUBSCED_THREADS.
int resolve_threads(int requested);

// Runs fn(i) for i in [0, count) on `threads` workers. fn must only write to
// slot i of its outputs.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn);

// The experiment design (before any rotation), variance vector for sample size n.
Matrix experiment_design(const ExperimentSpec& spec);
struct ModelAtN {
  Matrix x;
  Vector omega;
  Vector mixed_weights;  // candidate spectrum for fls_mixed (mixed-effects model only)
};
ModelAtN model_at_n(const ExperimentSpec& spec, const Matrix& design, Index n);

ResultTable run_sgv_experiment(const ExperimentSpec& spec);
// Interval methods: hom, hc0, hc1, hc2, hc3, t, t_fixed_nu, huber.
ResultTable run_coverage_experiment(const ExperimentSpec& spec, const std::vector<std::string>& interval_methods);

struct ConsistencyReport {
  ResultTable table;
  bool trend_ok = true;  // |mc - fixed| does not grow from the smallest to the largest n
  bool limit_ok = true;  // the fixed-weight limit ratio is <= 1
};
// weight_rule: fixed, noisy or parametric.
ConsistencyReport run_consistency_experiment(const ExperimentSpec& spec, const std::string& weight_rule);

// Closed-form and Monte Carlo estimator labels understood by run_sgv_experiment.
bool is_closed_form_estimator(const std::string& label);
bool is_mc_estimator(const std::string& label);

// Sample covariance with divisor m - 1 of the rows of `est`.
Matrix sample_covariance(const Matrix& est);

// Decomposition of mean squared error around `truth`: mse = total_variance + bias_sq,
// with total variance using divisor m.
struct MseParts {
  double mse;
  double total_variance;
  double bias_sq;
};
MseParts mse_decomposition(const Matrix& est, const Vector& truth);

std::string table_to_csv(const ResultTable& table, Metric metric);
std::string fnv1a_hex(const std::string& text);

}  // namespace subsced
