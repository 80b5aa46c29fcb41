#include "subsced/simharness.hpp"

#include "subsced/io.hpp"
#include "subsced/robust.hpp"
#include "subsced/weightdesign.hpp"

#include <boost/math/distributions/inverse_gamma.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace subsced {

namespace {

using json = nlohmann::json;

// Stream indices reserved for data that is shared by all replicates. Replicate
// streams use (grid index << 32) | replicate, which never reaches these.
constexpr std::uint64_t kDesignStream = 0xFFFF'FFFF'0000'0001ULL;
constexpr std::uint64_t kVarianceStream = 0xFFFF'FFFF'0000'0002ULL;
constexpr std::uint64_t kBaseStream = 0xFFFF'FFFF'0000'0003ULL;
constexpr std::uint64_t kNoiseStreamTag = 0x8000'0000'0000'0000ULL;

constexpr double kDropLimit = 0.01;

const std::map<std::string, VarianceModel> kVarianceNames{
    {"constant", VarianceModel::CONSTANT},
    {"uniform_iid", VarianceModel::UNIFORM_IID},
    {"inv_gamma_quantiles", VarianceModel::INV_GAMMA_QUANTILES},
    {"inv_gamma_iid", VarianceModel::INV_GAMMA_IID},
    {"power_product", VarianceModel::POWER_PRODUCT},
    {"mixed_effects", VarianceModel::MIXED_EFFECTS},
};

const std::map<std::string, Metric> kMetricNames{
    {"sgv", Metric::SGV},           {"mse", Metric::MSE},
    {"coverage", Metric::COVERAGE}, {"width", Metric::WIDTH},
    {"width_ratio", Metric::WIDTH_RATIO}, {"det_ratio", Metric::DET_RATIO},
};

const std::map<std::string, ExperimentKind> kKindNames{
    {"sgv", ExperimentKind::SGV},
    {"coverage", ExperimentKind::COVERAGE},
    {"consistency", ExperimentKind::CONSISTENCY},
};

const std::set<std::string> kClosedForm{"ols", "wls", "t_oracle", "t_fixed_nu_asym", "huber_asym", "fls_sqrt",
                                        "fls_mixed"};
const std::set<std::string> kMonteCarlo{"ols_mc",  "wls_mc", "t_adaptive",    "t_fixed_nu",
                                        "huber",   "fls_log_abs_x", "fls_linear_x"};
const std::set<std::string> kIntervalMethods{"hom", "hc0", "hc1", "hc2", "hc3", "t", "t_fixed_nu", "huber"};
const std::set<std::string> kWeightRules{"fixed", "noisy", "parametric"};
const std::set<std::string> kBaseRules{"sqrt", "identity", "ones"};

template <class Map>
std::string name_of(const Map& m, typename Map::mapped_type v) {
  for (const auto& [k, val] : m)
    if (val == v) return k;
  return "?";
}

template <class Map>
typename Map::mapped_type lookup(const Map& m, const std::string& key, const char* what) {
  const auto it = m.find(key);
  if (it == m.end()) throw Error(ErrorKind::InvalidArgument, std::string("unknown ") + what + ": " + key);
  return it->second;
}

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const char* where) {
  if (!obj.is_object()) throw Error(ErrorKind::InvalidArgument, std::string(where) + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw Error(ErrorKind::InvalidArgument, std::string("unknown key in ") + where + ": " + key);
  }
}

template <class T>
void take(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

std::string format_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

// Mean of m-1-divisor covariance over valid rows.
Matrix rows_covariance(const Matrix& est) {
  const Vector mean = est.colwise().mean().transpose();
  const Matrix c = est.rowwise() - mean.transpose();
  return (c.transpose() * c) / static_cast<double>(est.rows() - 1);
}

Matrix keep_rows(const Matrix& est, const std::vector<char>& failed) {
  Index kept = 0;
  for (const char f : failed) kept += f ? 0 : 1;
  Matrix out(kept, est.cols());
  Index r = 0;
  for (Index i = 0; i < est.rows(); ++i)
    if (!failed[static_cast<std::size_t>(i)]) out.row(r++) = est.row(i);
  return out;
}

Vector standard_normals(std::mt19937_64& rng, Index n) {
  std::normal_distribution<double> z;
  Vector out(n);
  for (Index i = 0; i < n; ++i) out[i] = z(rng);
  return out;
}

// Variances of the FLS estimator with candidate weights wt under truth omega.
Matrix fls_closed_form(const Matrix& x, const Vector& wt, const Vector& omega) {
  return weighted_sandwich(x, wt.cwiseInverse(), omega.cwiseQuotient(wt.cwiseAbs2()));
}

struct McOutcome {
  Vector beta;
  bool converged = true;
};

McOutcome mc_fit(const std::string& label, const ExperimentSpec& spec, const Design& d, const Vector& y,
                 const Vector& omega) {
  if (label == "ols_mc") return {ols_fit(d, y).beta};
  if (label == "wls_mc") return {fls_fit(d, y, DiagonalWeights(omega), Method::WLS).beta};
  if (label == "t_adaptive" || label == "t_fixed_nu") {
    TEMOptions opts;
    opts.tol = spec.em_tol;
    opts.max_iter = spec.em_max_iter;
    TModelParams init = t_em_init(d, y);
    if (label == "t_fixed_nu") {
      opts.fix_nu = spec.t_fixed_nu;
      init.nu = spec.t_fixed_nu;
    }
    const TEMResult r = t_em_fit(d, y, init, opts);
    return {r.params.beta, r.trace.converged};
  }
  if (label == "huber") {
    const RegressionFit f = huber_fit(d, y, {spec.huber_k});
    return {f.beta, f.diagnostics.converged};
  }
  if (label == "fls_log_abs_x" || label == "fls_linear_x") {
    const ParametricForm form = label == "fls_log_abs_x" ? ParametricForm::LOG_ABS_X : ParametricForm::LINEAR_X;
    return {fls_fit(d, y, parametric_fls_weights(d, y, form)).beta};
  }
  throw Error(ErrorKind::InvalidArgument, "unknown Monte Carlo estimator: " + label);
}

Matrix closed_form_cov(const std::string& label, const ExperimentSpec& spec, const ModelAtN& m) {
  const Index n = m.x.rows();
  if (label == "ols") return weighted_sandwich(m.x, Vector::Ones(n), m.omega);
  if (label == "wls") return weighted_sandwich(m.x, m.omega.cwiseInverse(), m.omega.cwiseInverse());
  if (label == "t_oracle") return t_asym_cov(m.x, m.omega, {Vector(), spec.omega0, spec.nu});
  if (label == "t_fixed_nu_asym") {
    const double w0 = spec.t_fixed_omega0 ? *spec.t_fixed_omega0 : t_limit_omega0(m.omega, spec.t_fixed_nu);
    return t_asym_cov(m.x, m.omega, {Vector(), w0, spec.t_fixed_nu});
  }
  if (label == "huber_asym") return huber_asym_cov(m.x, m.omega, {spec.huber_k});
  if (label == "fls_sqrt") return fls_closed_form(m.x, m.omega.cwiseSqrt(), m.omega);
  if (label == "fls_mixed") return fls_closed_form(m.x, m.mixed_weights, m.omega);
  throw Error(ErrorKind::InvalidArgument, "unknown closed-form estimator: " + label);
}

bool has_metric(const ExperimentSpec& spec, Metric m) {
  return std::find(spec.metrics.begin(), spec.metrics.end(), m) != spec.metrics.end();
}

bool inv_gamma_model(VarianceModel v) {
  return v == VarianceModel::INV_GAMMA_IID || v == VarianceModel::INV_GAMMA_QUANTILES;
}

Index max_n(const ExperimentSpec& spec) { return *std::max_element(spec.n_grid.begin(), spec.n_grid.end()); }

}  // namespace

const char* to_string(Metric m) {
  switch (m) {
    case Metric::SGV: return "sgv";
    case Metric::MSE: return "mse";
    case Metric::COVERAGE: return "coverage";
    case Metric::WIDTH: return "width";
    case Metric::WIDTH_RATIO: return "width_ratio";
    case Metric::DET_RATIO: return "det_ratio";
  }
  return "?";
}

bool is_closed_form_estimator(const std::string& label) { return kClosedForm.count(label) > 0; }
bool is_mc_estimator(const std::string& label) { return kMonteCarlo.count(label) > 0; }

const ResultRow& ResultTable::find(const std::string& estimator, Index n, Metric metric) const {
  for (const ResultRow& r : rows)
    if (r.estimator == estimator && r.n == n && r.metric == metric) return r;
  throw Error(ErrorKind::InvalidArgument, "no result row for " + estimator + " at n = " + std::to_string(n));
}

bool ResultTable::all_valid() const {
  return std::all_of(rows.begin(), rows.end(), [](const ResultRow& r) { return r.valid; });
}

ExperimentSpec spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("spec is not valid JSON: ") + e.what());
  }
  ExperimentSpec s;
  try {
    reject_unknown(j,
                   {"name", "experiment", "n_grid", "p", "replicates", "seed", "threads", "design", "variance",
                    "estimators", "metrics", "options", "sweep"},
                   "spec");
    take(j, "name", s.name);
    if (j.contains("experiment")) s.kind = lookup(kKindNames, j.at("experiment").get<std::string>(), "experiment");
    take(j, "n_grid", s.n_grid);
    take(j, "p", s.p);
    take(j, "replicates", s.replicates);
    take(j, "seed", s.seed);
    take(j, "threads", s.threads);
    if (j.contains("design")) {
      const json& d = j.at("design");
      reject_unknown(d, {"source", "path", "columns", "response", "intercept", "standardize", "rows"}, "design");
      if (d.contains("source")) {
        const std::string src = d.at("source").get<std::string>();
        if (src == "gaussian")
          s.design_source = DesignSource::GAUSSIAN;
        else if (src == "csv")
          s.design_source = DesignSource::CSV;
        else
          throw Error(ErrorKind::InvalidArgument, "unknown design source: " + src);
      }
      take(d, "path", s.design_csv);
      take(d, "columns", s.design_columns);
      take(d, "response", s.response);
      take(d, "intercept", s.intercept);
      take(d, "standardize", s.standardize);
      take(d, "rows", s.design_rows);
    }
    if (j.contains("variance")) {
      const json& v = j.at("variance");
      reject_unknown(v,
                     {"model", "nu", "omega0", "lo", "hi", "scale", "columns", "exponents", "batches", "theta0_sq",
                      "ig_shape", "ig_scale", "gamma"},
                     "variance");
      if (v.contains("model")) s.variance_model = lookup(kVarianceNames, v.at("model").get<std::string>(), "variance model");
      take(v, "nu", s.nu);
      take(v, "omega0", s.omega0);
      take(v, "lo", s.uniform_lo);
      take(v, "hi", s.uniform_hi);
      take(v, "scale", s.power_scale);
      take(v, "columns", s.power_columns);
      take(v, "exponents", s.power_exponents);
      take(v, "batches", s.mixed_batches);
      take(v, "theta0_sq", s.mixed_theta0_sq);
      take(v, "ig_shape", s.mixed_ig_shape);
      take(v, "ig_scale", s.mixed_ig_scale);
      take(v, "gamma", s.mixed_gamma);
    }
    take(j, "estimators", s.estimators);
    if (j.contains("metrics")) {
      s.metrics.clear();
      for (const auto& m : j.at("metrics")) s.metrics.push_back(lookup(kMetricNames, m.get<std::string>(), "metric"));
    }
    if (j.contains("options")) {
      const json& o = j.at("options");
      reject_unknown(o,
                     {"huber_k", "t_fixed_nu", "t_fixed_omega0", "em_tol", "em_max_iter", "alpha", "base_n",
                      "base_power", "base_sigma", "base_x_lo", "base_x_hi", "weight_rule", "base_rule", "noise"},
                     "options");
      take(o, "huber_k", s.huber_k);
      take(o, "t_fixed_nu", s.t_fixed_nu);
      if (o.contains("t_fixed_omega0")) s.t_fixed_omega0 = o.at("t_fixed_omega0").get<double>();
      take(o, "em_tol", s.em_tol);
      take(o, "em_max_iter", s.em_max_iter);
      take(o, "alpha", s.alpha);
      take(o, "base_n", s.base_n);
      take(o, "base_power", s.base_power);
      take(o, "base_sigma", s.base_sigma);
      take(o, "base_x_lo", s.base_x_lo);
      take(o, "base_x_hi", s.base_x_hi);
      take(o, "weight_rule", s.weight_rule);
      take(o, "base_rule", s.base_rule);
      take(o, "noise", s.noise);
    }
    if (j.contains("sweep")) {
      const json& w = j.at("sweep");
      reject_unknown(w, {"nu"}, "sweep");
      take(w, "nu", s.nu_sweep);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, std::string("spec field has the wrong type: ") + e.what());
  }
  validate_spec(s);
  return s;
}

std::string spec_to_json(const ExperimentSpec& s) {
  json j;
  j["name"] = s.name;
  j["experiment"] = name_of(kKindNames, s.kind);
  j["n_grid"] = s.n_grid;
  j["p"] = s.p;
  j["replicates"] = s.replicates;
  j["seed"] = s.seed;
  j["design"] = {{"source", s.design_source == DesignSource::CSV ? "csv" : "gaussian"},
                 {"path", s.design_csv},
                 {"columns", s.design_columns},
                 {"response", s.response},
                 {"intercept", s.intercept},
                 {"standardize", s.standardize},
                 {"rows", s.design_rows}};
  j["variance"] = {{"model", name_of(kVarianceNames, s.variance_model)},
                   {"nu", s.nu},
                   {"omega0", s.omega0},
                   {"lo", s.uniform_lo},
                   {"hi", s.uniform_hi},
                   {"scale", s.power_scale},
                   {"columns", s.power_columns},
                   {"exponents", s.power_exponents},
                   {"batches", s.mixed_batches},
                   {"theta0_sq", s.mixed_theta0_sq},
                   {"ig_shape", s.mixed_ig_shape},
                   {"ig_scale", s.mixed_ig_scale},
                   {"gamma", s.mixed_gamma}};
  j["estimators"] = s.estimators;
  json metrics = json::array();
  for (const Metric m : s.metrics) metrics.push_back(to_string(m));
  j["metrics"] = metrics;
  j["options"] = {{"huber_k", s.huber_k},         {"t_fixed_nu", s.t_fixed_nu}, {"em_tol", s.em_tol},
                  {"em_max_iter", s.em_max_iter}, {"alpha", s.alpha},           {"base_n", s.base_n},
                  {"base_power", s.base_power},   {"base_sigma", s.base_sigma}, {"base_x_lo", s.base_x_lo},
                  {"base_x_hi", s.base_x_hi},     {"weight_rule", s.weight_rule}, {"base_rule", s.base_rule},
                  {"noise", s.noise}};
  if (s.t_fixed_omega0) j["options"]["t_fixed_omega0"] = *s.t_fixed_omega0;
  if (!s.nu_sweep.empty()) j["sweep"] = {{"nu", s.nu_sweep}};
  // Worker count is deliberately absent: results do not depend on it.
  return j.dump();
}

std::vector<ExperimentSpec> expand_sweep(const ExperimentSpec& spec) {
  if (spec.nu_sweep.empty()) return {spec};
  std::vector<ExperimentSpec> out;
  for (const double nu : spec.nu_sweep) {
    ExperimentSpec s = spec;
    s.nu_sweep.clear();
    s.nu = nu;
    s.name = spec.name + "_nu" + format_label(nu);
    out.push_back(std::move(s));
  }
  return out;
}

void validate_spec(const ExperimentSpec& s) {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::InvalidArgument, msg); };
  if (s.name.empty()) fail("name must be non-empty");
  if (s.replicates < 1) fail("replicates must be >= 1");
  if (s.p < 1) fail("p must be >= 1");
  if (s.kind != ExperimentKind::COVERAGE) {
    if (s.n_grid.empty()) fail("n_grid must be non-empty");
    for (const Index n : s.n_grid)
      if (n <= s.p) fail("every n in n_grid must exceed p");
  } else if (s.base_n <= s.p) {
    fail("base_n must exceed p");
  }
  if (s.design_source == DesignSource::CSV && s.design_csv.empty()) fail("csv design needs a path");
  if (s.design_source == DesignSource::GAUSSIAN && s.design_rows != 0 && s.kind != ExperimentKind::COVERAGE &&
      s.design_rows < max_n(s))
    fail("design rows must cover the largest n");
  if (!(s.nu > 0.0 && s.omega0 > 0.0)) fail("nu and omega0 must be positive");
  for (const double nu : s.nu_sweep)
    if (!(nu > 0.0)) fail("sweep values of nu must be positive");
  if (!(s.uniform_lo > 0.0 && s.uniform_hi >= s.uniform_lo)) fail("uniform variances need 0 < lo <= hi");
  if (!(s.power_scale > 0.0)) fail("power scale must be positive");
  if (s.power_columns.size() != s.power_exponents.size()) fail("power columns and exponents differ in length");
  if (s.variance_model == VarianceModel::POWER_PRODUCT)
    for (const Index c : s.power_columns)
      if (c < 0 || c >= s.p) fail("power column outside the design");
  if (s.variance_model == VarianceModel::MIXED_EFFECTS) {
    if (s.mixed_batches < 1) fail("mixed model needs at least one batch");
    if (s.kind != ExperimentKind::COVERAGE)
      for (const Index n : s.n_grid)
        if (n <= s.mixed_batches) fail("mixed model needs n > batches");
    if (!(s.mixed_theta0_sq > 0.0 && s.mixed_ig_shape > 0.0 && s.mixed_ig_scale > 0.0 && s.mixed_gamma > 0.0))
      fail("mixed model parameters must be positive");
  }
  if (!(s.huber_k > 0.0) || !(s.t_fixed_nu > 0.0)) fail("huber_k and t_fixed_nu must be positive");
  if (s.t_fixed_omega0 && !(*s.t_fixed_omega0 > 0.0)) fail("t_fixed_omega0 must be positive");
  if (!(s.em_tol > 0.0) || s.em_max_iter < 1) fail("EM tolerance and iteration cap must be positive");
  if (!(s.alpha > 0.0 && s.alpha <= 1.0)) fail("alpha must lie in (0, 1]");
  if (!(s.base_sigma >= 0.0) || !(s.base_x_hi > s.base_x_lo)) fail("synthetic base needs sigma >= 0 and lo < hi");
  if (!(s.noise >= 0.0)) fail("noise must be non-negative");
  if (!kWeightRules.count(s.weight_rule)) fail("unknown weight rule: " + s.weight_rule);
  if (!kBaseRules.count(s.base_rule)) fail("unknown base rule: " + s.base_rule);
  if (s.estimators.empty() && s.kind != ExperimentKind::CONSISTENCY) fail("estimator list is empty");
  for (const std::string& e : s.estimators) {
    const bool ok = s.kind == ExperimentKind::COVERAGE ? kIntervalMethods.count(e) > 0
                                                       : (is_closed_form_estimator(e) || is_mc_estimator(e));
    if (!ok) fail("estimator not available for this experiment: " + e);
    if (e == "t_oracle" && !inv_gamma_model(s.variance_model)) fail("t_oracle needs an inverse-gamma variance model");
    if (e == "fls_mixed" && s.variance_model != VarianceModel::MIXED_EFFECTS) fail("fls_mixed needs the mixed model");
  }
  for (const Metric m : s.metrics) {
    const bool ok = s.kind == ExperimentKind::SGV         ? (m == Metric::SGV || m == Metric::MSE)
                    : s.kind == ExperimentKind::COVERAGE ? (m == Metric::COVERAGE || m == Metric::WIDTH ||
                                                            m == Metric::WIDTH_RATIO)
                                                         : m == Metric::DET_RATIO;
    if (!ok) fail(std::string("metric not available for this experiment: ") + to_string(m));
  }
}

int resolve_threads(int requested) {
  int n = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* env = std::getenv("SUBSCED_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, cap);
  }
  return n;
}

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr first;
  std::size_t first_index = count;
  auto work = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        const std::lock_guard<std::mutex> lock(mu);
        if (i < first_index) {
          first_index = i;
          first = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

Matrix experiment_design(const ExperimentSpec& spec) {
  if (spec.design_source == DesignSource::CSV) {
    const DataFrame df = read_csv(spec.design_csv);
    std::vector<std::string> cols = spec.design_columns;
    if (cols.empty())
      for (const auto& name : df.names)
        if (name != spec.response) cols.push_back(name);
    const Index off = spec.intercept ? 1 : 0;
    Matrix x(df.data.rows(), static_cast<Index>(cols.size()) + off);
    if (spec.intercept) x.col(0).setOnes();
    for (std::size_t c = 0; c < cols.size(); ++c) x.col(static_cast<Index>(c) + off) = df.col(cols[c]);
    if (x.cols() != spec.p)
      throw Error(ErrorKind::DimensionMismatch, "csv design has " + std::to_string(x.cols()) +
                                                    " columns but the experiment sets p = " + std::to_string(spec.p));
    return x;
  }
  const Index rows = spec.design_rows > 0 ? spec.design_rows
                     : spec.kind == ExperimentKind::COVERAGE ? spec.base_n
                                                             : max_n(spec);
  auto rng = rng_stream(spec.seed, kDesignStream);
  std::normal_distribution<double> z;
  Matrix x(rows, spec.p);
  for (Index j = 0; j < spec.p; ++j)
    for (Index i = 0; i < rows; ++i) x(i, j) = z(rng);
  const Index first = spec.intercept ? 1 : 0;
  if (spec.intercept) x.col(0).setOnes();
  if (spec.standardize) {
    for (Index j = first; j < spec.p; ++j) {
      x.col(j).array() -= x.col(j).mean();
      x.col(j) /= std::sqrt(x.col(j).squaredNorm() / static_cast<double>(rows - 1));
    }
  }
  return x;
}

ModelAtN model_at_n(const ExperimentSpec& spec, const Matrix& design, Index n) {
  if (n > design.rows()) throw Error(ErrorKind::DimensionMismatch, "design has fewer rows than n");
  ModelAtN m;
  m.x = design.topRows(n);
  const Index rows = design.rows();
  switch (spec.variance_model) {
    case VarianceModel::CONSTANT:
      m.omega = Vector::Constant(n, spec.omega0);
      break;
    case VarianceModel::UNIFORM_IID: {
      auto rng = rng_stream(spec.seed, kVarianceStream);
      std::uniform_real_distribution<double> u(spec.uniform_lo, spec.uniform_hi);
      Vector all(rows);
      for (Index i = 0; i < rows; ++i) all[i] = u(rng);
      m.omega = all.head(n);
      break;
    }
    case VarianceModel::INV_GAMMA_QUANTILES: {
      const boost::math::inverse_gamma_distribution<double> ig(spec.nu / 2.0, spec.nu * spec.omega0 / 2.0);
      m.omega.resize(n);
      for (Index i = 0; i < n; ++i)
        m.omega[i] = boost::math::quantile(ig, static_cast<double>(i + 1) / static_cast<double>(n + 1));
      break;
    }
    case VarianceModel::INV_GAMMA_IID: {
      auto rng = rng_stream(spec.seed, kVarianceStream);
      std::gamma_distribution<double> g(spec.nu / 2.0, 2.0 / (spec.nu * spec.omega0));
      Vector all(rows);
      for (Index i = 0; i < rows; ++i) all[i] = 1.0 / g(rng);
      m.omega = all.head(n);
      break;
    }
    case VarianceModel::POWER_PRODUCT: {
      m.omega = Vector::Constant(n, spec.power_scale);
      for (std::size_t c = 0; c < spec.power_columns.size(); ++c)
        m.omega.array() *= m.x.col(spec.power_columns[c]).array().abs().pow(spec.power_exponents[c]);
      if (!(m.omega.minCoeff() > 0.0))
        throw Error(ErrorKind::DegenerateCovariate, "power-product variance vanishes on a zero covariate");
      break;
    }
    case VarianceModel::MIXED_EFFECTS: {
      const Index k = spec.mixed_batches;
      auto rng = rng_stream(spec.seed, kVarianceStream);
      std::gamma_distribution<double> g(spec.mixed_ig_shape, 1.0 / spec.mixed_ig_scale);
      Vector theta_sq(k);
      for (Index b = 0; b < k; ++b) theta_sq[b] = 1.0 / g(rng);
      Matrix a = Matrix::Zero(n, k);
      for (Index i = 0; i < n; ++i) a(i, i % k) = 1.0;
      const FullCovariance cand = mixed_effects_weights({a, spec.mixed_gamma});
      // The truth A diag(theta^2) A' + theta0^2 I shares the candidate's eigenbasis.
      const Matrix b = a.transpose() * cand.eigvecs;
      m.omega = (b.cwiseAbs2().transpose() * theta_sq).array() + spec.mixed_theta0_sq;
      m.mixed_weights = cand.eigvals;
      m.x = cand.eigvecs.transpose() * m.x;
      break;
    }
  }
  return m;
}

Matrix sample_covariance(const Matrix& est) {
  if (est.rows() < 2) throw Error(ErrorKind::InvalidArgument, "sample covariance needs at least two rows");
  return rows_covariance(est);
}

MseParts mse_decomposition(const Matrix& est, const Vector& truth) {
  const double m = static_cast<double>(est.rows());
  const Vector mean = est.colwise().mean().transpose();
  const Matrix c = est.rowwise() - mean.transpose();
  const double total = c.squaredNorm() / m;
  const double bias = (mean - truth).squaredNorm();
  const double mse = (est.rowwise() - truth.transpose()).rowwise().squaredNorm().mean();
  return {mse, total, bias};
}

ResultTable run_sgv_experiment(const ExperimentSpec& spec) {
  validate_spec(spec);
  if (spec.kind != ExperimentKind::SGV) throw Error(ErrorKind::InvalidArgument, "spec is not an sgv experiment");
  const Matrix design = experiment_design(spec);
  const Index p = design.cols();
  const Vector beta = Vector::Ones(p);
  const int threads = resolve_threads(spec.threads);
  const std::size_t reps = static_cast<std::size_t>(spec.replicates);

  ResultTable table;
  table.experiment = spec.name;
  std::vector<std::string> mc;
  for (const auto& e : spec.estimators)
    if (is_mc_estimator(e)) mc.push_back(e);

  for (std::size_t gi = 0; gi < spec.n_grid.size(); ++gi) {
    const Index n = spec.n_grid[gi];
    const ModelAtN model = model_at_n(spec, design, n);
    const Design d(model.x);

    for (const auto& e : spec.estimators) {
      if (!is_closed_form_estimator(e)) continue;
      const Matrix cov = closed_form_cov(e, spec, model);
      if (has_metric(spec, Metric::SGV)) table.rows.push_back({e, n, Metric::SGV, sgv(cov), 0.0, true});
      if (has_metric(spec, Metric::MSE)) table.rows.push_back({e, n, Metric::MSE, cov.trace(), 0.0, true});
    }
    if (mc.empty()) continue;

    std::vector<Matrix> est(mc.size(), Matrix(static_cast<Index>(reps), p));
    std::vector<std::vector<char>> failed(mc.size(), std::vector<char>(reps, 0));
    std::vector<std::vector<char>> stalled(mc.size(), std::vector<char>(reps, 0));
    const Vector sd = model.omega.cwiseSqrt();
    const Vector mean = model.x * beta;
    parallel_for(reps, threads, [&](std::size_t r) {
      auto rng = rng_stream(spec.seed, (static_cast<std::uint64_t>(gi) << 32) | r);
      const Vector y = mean + sd.cwiseProduct(standard_normals(rng, n));
      for (std::size_t e = 0; e < mc.size(); ++e) {
        try {
          const McOutcome out = mc_fit(mc[e], spec, d, y, model.omega);
          est[e].row(static_cast<Index>(r)) = out.beta.transpose();
          stalled[e][r] = out.converged ? 0 : 1;
        } catch (const Error&) {
          failed[e][r] = 1;
        }
      }
    });

    for (std::size_t e = 0; e < mc.size(); ++e) {
      const Matrix kept = keep_rows(est[e], failed[e]);
      const int dropped = static_cast<int>(reps) - static_cast<int>(kept.rows());
      const int nc = static_cast<int>(std::count(stalled[e].begin(), stalled[e].end(), 1));
      const bool valid = dropped <= kDropLimit * static_cast<double>(reps) && kept.rows() >= 2;
      const double m = static_cast<double>(kept.rows());
      if (has_metric(spec, Metric::SGV)) {
        ResultRow row{mc[e], n, Metric::SGV, 0.0, 0.0, false, dropped, nc, valid};
        if (kept.rows() >= 2) {
          row.value = sgv(sample_covariance(kept));
          row.mc_stderr = row.value * std::sqrt(2.0 / (static_cast<double>(p) * (m - 1.0)));
        }
        table.rows.push_back(row);
      }
      if (has_metric(spec, Metric::MSE)) {
        ResultRow row{mc[e], n, Metric::MSE, 0.0, 0.0, false, dropped, nc, valid};
        if (kept.rows() >= 2) {
          const Vector sq = (kept.rowwise() - beta.transpose()).rowwise().squaredNorm();
          row.value = sq.mean();
          row.mc_stderr = std::sqrt((sq.array() - row.value).square().sum() / (m - 1.0) / m);
        }
        table.rows.push_back(row);
      }
      if (!valid)
        table.notes.push_back(mc[e] + " at n = " + std::to_string(n) + " dropped " + std::to_string(dropped) +
                              " of " + std::to_string(reps) + " replicates");
    }
  }
  return table;
}

ResultTable run_coverage_experiment(const ExperimentSpec& spec, const std::vector<std::string>& methods) {
  validate_spec(spec);
  if (methods.empty()) throw Error(ErrorKind::InvalidArgument, "no interval methods");
  for (const auto& m : methods)
    if (!kIntervalMethods.count(m)) throw Error(ErrorKind::InvalidArgument, "unknown interval method: " + m);

  // Base data defining the bootstrap truth.
  Matrix x;
  Vector y0;
  if (spec.design_source == DesignSource::CSV) {
    if (spec.response.empty()) throw Error(ErrorKind::InvalidArgument, "csv coverage base needs a response column");
    x = experiment_design(spec);
    y0 = read_csv(spec.design_csv).col(spec.response);
  } else {
    if (spec.p != 2 || !spec.intercept)
      throw Error(ErrorKind::InvalidArgument, "the synthetic coverage base is an intercept plus one regressor (p = 2)");
    auto rng = rng_stream(spec.seed, kBaseStream);
    std::uniform_real_distribution<double> ux(spec.base_x_lo, spec.base_x_hi);
    std::normal_distribution<double> z;
    x.resize(spec.base_n, 2);
    y0.resize(spec.base_n);
    for (Index i = 0; i < spec.base_n; ++i) {
      x(i, 0) = 1.0;
      x(i, 1) = ux(rng);
      y0[i] = 1.0 + x(i, 1) + spec.base_sigma * std::pow(std::fabs(x(i, 1)), spec.base_power / 2.0) * z(rng);
    }
  }
  const Design d(x);
  const Index n = x.rows(), p = x.cols();
  const Vector truth = ols_fit(d, y0).beta;
  const Vector resid = y0 - x * truth;
  const Vector h = d.leverages();
  if (h.maxCoeff() >= 1.0 - 1e-12) throw Error(ErrorKind::LeverageOne, "base design has a point with leverage one");
  const Vector adj = resid.cwiseQuotient((1.0 - h.array()).sqrt().matrix());
  const Vector mean = x * truth;

  // HC0 is always computed: it is the width reference.
  std::vector<std::string> all = methods;
  if (std::find(all.begin(), all.end(), "hc0") == all.end()) all.push_back("hc0");
  const std::size_t reps = static_cast<std::size_t>(spec.replicates);
  const Index R = static_cast<Index>(reps);
  std::vector<Matrix> lower(all.size(), Matrix(R, p)), upper(all.size(), Matrix(R, p));
  std::vector<std::vector<char>> failed(all.size(), std::vector<char>(reps, 0));
  std::vector<std::vector<char>> stalled(all.size(), std::vector<char>(reps, 0));

  parallel_for(reps, resolve_threads(spec.threads), [&](std::size_t r) {
    auto rng = rng_stream(spec.seed, r);
    const Vector ys = mean + adj.cwiseProduct(standard_normals(rng, n));
    std::optional<RegressionFit> ols;
    for (std::size_t k = 0; k < all.size(); ++k) {
      const std::string& m = all[k];
      try {
        IntervalSet iv;
        if (m == "hom" || m.rfind("hc", 0) == 0) {
          if (!ols) ols = ols_fit(d, ys);
          const Vector e = ys - x * ols->beta;
          Matrix cov;
          if (m == "hom") cov = homoscedastic_cov(d, e);
          else if (m == "hc0") cov = hc_cov(d, e, HCVariant::HC0);
          else if (m == "hc1") cov = hc_cov(d, e, HCVariant::HC1);
          else if (m == "hc2") cov = hc_cov(d, e, HCVariant::HC2);
          else cov = hc_cov(d, e, HCVariant::HC3);
          iv = wald_intervals(ols->beta, cov, spec.alpha, m);
        } else if (m == "t" || m == "t_fixed_nu") {
          TEMOptions opts;
          opts.tol = spec.em_tol;
          opts.max_iter = spec.em_max_iter;
          TModelParams init = t_em_init(d, ys);
          if (m == "t_fixed_nu") {
            opts.fix_nu = spec.t_fixed_nu;
            init.nu = spec.t_fixed_nu;
          }
          const TEMResult fit = t_em_fit(d, ys, init, opts);
          stalled[k][r] = fit.trace.converged ? 0 : 1;
          iv = t_sandwich_ci(d, ys, fit.params, spec.alpha);
        } else {
          const RegressionFit fit = huber_fit(d, ys, {spec.huber_k});
          stalled[k][r] = fit.diagnostics.converged ? 0 : 1;
          iv = wald_intervals(fit.beta, huber_sandwich_cov(d, ys - x * fit.beta, {spec.huber_k}), spec.alpha, m);
        }
        lower[k].row(static_cast<Index>(r)) = iv.lower.transpose();
        upper[k].row(static_cast<Index>(r)) = iv.upper.transpose();
      } catch (const Error&) {
        failed[k][r] = 1;
      }
    }
  });

  // Rounding can put a zero-width interval one ulp away from the truth.
  auto covered = [&](double lo, double hi, Index j) {
    const double slack = 1e-12 * std::max(1.0, std::fabs(truth[j]));
    return lo - slack <= truth[j] && truth[j] <= hi + slack;
  };
  const std::size_t ref = static_cast<std::size_t>(std::find(all.begin(), all.end(), "hc0") - all.begin());
  const Matrix ref_width = keep_rows(upper[ref] - lower[ref], failed[ref]);

  ResultTable table;
  table.experiment = spec.name;
  for (std::size_t k = 0; k < methods.size(); ++k) {
    const Matrix lo = keep_rows(lower[k], failed[k]), hi = keep_rows(upper[k], failed[k]);
    const int dropped = static_cast<int>(R - lo.rows());
    const int nc = static_cast<int>(std::count(stalled[k].begin(), stalled[k].end(), 1));
    const bool valid = dropped <= kDropLimit * static_cast<double>(reps) && lo.rows() >= 2;
    const double m = static_cast<double>(lo.rows());
    for (Index j = 0; j < p; ++j) {
      const std::string label = methods[k] + "[" + std::to_string(j) + "]";
      double hits = 0.0;
      for (Index r = 0; r < lo.rows(); ++r) hits += covered(lo(r, j), hi(r, j), j) ? 1.0 : 0.0;
      const double cov = lo.rows() ? hits / m : 0.0;
      const Vector w = hi.col(j) - lo.col(j);
      const double wmean = lo.rows() ? w.mean() : 0.0;
      const double wse = lo.rows() >= 2 ? std::sqrt((w.array() - wmean).square().sum() / (m - 1.0) / m) : 0.0;
      if (has_metric(spec, Metric::COVERAGE))
        table.rows.push_back({label, n, Metric::COVERAGE, cov, lo.rows() ? std::sqrt(cov * (1.0 - cov) / m) : 0.0,
                              false, dropped, nc, valid});
      if (has_metric(spec, Metric::WIDTH))
        table.rows.push_back({label, n, Metric::WIDTH, wmean, wse, false, dropped, nc, valid});
      if (has_metric(spec, Metric::WIDTH_RATIO)) {
        const double base = ref_width.rows() ? ref_width.col(j).mean() : 0.0;
        const double ratio = base > 0.0 ? wmean / base : (wmean == 0.0 ? 1.0 : INFINITY);
        table.rows.push_back({label, n, Metric::WIDTH_RATIO, ratio, base > 0.0 ? wse / base : 0.0, false, dropped,
                              nc, valid});
      }
    }
    if (!valid)
      table.notes.push_back(methods[k] + " dropped " + std::to_string(dropped) + " of " + std::to_string(reps) +
                            " replicates");
  }
  return table;
}

ConsistencyReport run_consistency_experiment(const ExperimentSpec& spec, const std::string& weight_rule) {
  validate_spec(spec);
  if (!kWeightRules.count(weight_rule)) throw Error(ErrorKind::InvalidArgument, "unknown weight rule: " + weight_rule);
  const Matrix design = experiment_design(spec);
  const Index p = design.cols();
  const Vector beta = Vector::Ones(p);
  const int threads = resolve_threads(spec.threads);
  const std::size_t reps = static_cast<std::size_t>(spec.replicates);
  const Index R = static_cast<Index>(reps);

  ConsistencyReport report;
  report.table.experiment = spec.name;
  std::vector<double> gap, se;
  double last_fixed = 0.0;

  for (std::size_t gi = 0; gi < spec.n_grid.size(); ++gi) {
    const Index n = spec.n_grid[gi];
    const ModelAtN model = model_at_n(spec, design, n);
    const Vector base = spec.base_rule == "sqrt"       ? Vector(model.omega.cwiseSqrt())
                        : spec.base_rule == "identity" ? model.omega
                                                       : Vector(Vector::Ones(n));
    const double gv_ols = generalized_variance(weighted_sandwich(model.x, Vector::Ones(n), model.omega));
    const double fixed = generalized_variance(fls_closed_form(model.x, base, model.omega)) / gv_ols;

    double ratio = 0.0, stderr_ = 0.0;
    int dropped = 0;
    if (weight_rule == "parametric") {
      const Design d(model.x);
      Matrix est(R, p);
      std::vector<char> failed(reps, 0);
      const Vector sd = model.omega.cwiseSqrt();
      parallel_for(reps, threads, [&](std::size_t r) {
        auto rng = rng_stream(spec.seed, (static_cast<std::uint64_t>(gi) << 32) | r);
        const Vector y = model.x * beta + sd.cwiseProduct(standard_normals(rng, n));
        try {
          const DiagonalWeights w = parametric_fls_weights(d, y, ParametricForm::LOG_ABS_X);
          est.row(static_cast<Index>(r)) = fls_fit(d, y, w).beta.transpose();
        } catch (const Error&) {
          failed[r] = 1;
        }
      });
      const Matrix kept = keep_rows(est, failed);
      dropped = static_cast<int>(R - kept.rows());
      ratio = generalized_variance(sample_covariance(kept)) / gv_ols;
      stderr_ = ratio * std::sqrt(2.0 * static_cast<double>(p) / static_cast<double>(kept.rows() - 1));
    } else {
      // The weights do not depend on y, so Cov b(w) = E[H(w, Omega)] exactly.
      std::vector<Matrix> h(reps);
      parallel_for(reps, threads, [&](std::size_t r) {
        Vector w = base;
        if (weight_rule == "noisy") {
          auto rng = rng_stream(spec.seed, kNoiseStreamTag | (static_cast<std::uint64_t>(gi) << 32) | r);
          std::uniform_real_distribution<double> xi(-1.0, 1.0);
          for (Index i = 0; i < n; ++i) w[i] *= 1.0 + spec.noise * xi(rng) / std::sqrt(static_cast<double>(n));
        }
        h[r] = fls_closed_form(model.x, w, model.omega);
      });
      Matrix total = Matrix::Zero(p, p);
      for (const Matrix& m : h) total += m;
      ratio = generalized_variance(Matrix(total / static_cast<double>(R))) / gv_ols;
      // Batch means over ten contiguous blocks.
      const std::size_t batches = reps >= 20 ? 10 : 0;
      if (batches) {
        std::vector<double> br(batches);
        const std::size_t per = reps / batches;
        for (std::size_t b = 0; b < batches; ++b) {
          Matrix s = Matrix::Zero(p, p);
          for (std::size_t r = b * per; r < (b + 1) * per; ++r) s += h[r];
          br[b] = generalized_variance(Matrix(s / static_cast<double>(per))) / gv_ols;
        }
        double mu = 0.0;
        for (const double v : br) mu += v;
        mu /= static_cast<double>(batches);
        double ss = 0.0;
        for (const double v : br) ss += (v - mu) * (v - mu);
        stderr_ = std::sqrt(ss / static_cast<double>(batches - 1) / static_cast<double>(batches));
      }
    }
    const bool valid = dropped <= kDropLimit * static_cast<double>(reps);
    report.table.rows.push_back({"mc_ratio", n, Metric::DET_RATIO, ratio, stderr_, false, dropped, 0, valid});
    report.table.rows.push_back({"fixed_ratio", n, Metric::DET_RATIO, fixed, 0.0, true, 0, 0, true});
    gap.push_back(std::fabs(ratio - fixed));
    se.push_back(stderr_);
    last_fixed = fixed;
  }
  report.trend_ok = gap.back() <= std::max(gap.front(), 3.0 * se.back()) + 1e-12;
  report.limit_ok = last_fixed <= 1.0 + 1e-12;
  return report;
}

std::string table_to_csv(const ResultTable& table, Metric metric) {
  std::ostringstream os;
  os << "estimator,n,value,mc_stderr\n";
  for (const ResultRow& r : table.rows) {
    if (r.metric != metric) continue;
    os << r.estimator << ',' << r.n << ',' << format_double(r.value) << ',' << format_double(r.mc_stderr) << '\n';
  }
  return os.str();
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace subsced
