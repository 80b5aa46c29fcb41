// subsced: fit, certify, design-weights and simulate from the command line.
//
// Exit codes: 0 success, 2 parse or validation error (one JSON line on stderr),
// 3 non-convergence, 4 a simulation cell was flagged invalid.

#include "subsced/io.hpp"
#include "subsced/linmodel.hpp"
#include "subsced/robust.hpp"
#include "subsced/simharness.hpp"
#include "subsced/subscedastic.hpp"
#include "subsced/weightdesign.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace subsced;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 2;
constexpr int kExitNotConverged = 3;
constexpr int kExitBadCell = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int report_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << '\n';
  return kExitInvalid;
}

json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json to_json(const Matrix& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) rows.push_back(to_json(Vector(m.row(i).transpose())));
  return rows;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::InvalidArgument, "cannot write " + path.string());
  out << text;
}

struct DesignData {
  Matrix x;
  std::vector<std::string> names;
};

DesignData build_design(const DataFrame& df, const std::vector<std::string>& columns,
                        const std::vector<std::string>& exclude, bool intercept) {
  std::vector<std::string> cols = columns;
  if (cols.empty())
    for (const auto& name : df.names)
      if (std::find(exclude.begin(), exclude.end(), name) == exclude.end()) cols.push_back(name);
  DesignData out;
  const Index off = intercept ? 1 : 0;
  out.x.resize(df.data.rows(), static_cast<Index>(cols.size()) + off);
  if (intercept) {
    out.x.col(0).setOnes();
    out.names.push_back("(intercept)");
  }
  for (std::size_t c = 0; c < cols.size(); ++c) {
    out.x.col(static_cast<Index>(c) + off) = df.col(cols[c]);
    out.names.push_back(cols[c]);
  }
  if (out.x.cols() == 0) throw UsageError("design has no columns");
  return out;
}

HCVariant hc_variant(const std::string& s) {
  if (s == "hc0") return HCVariant::HC0;
  if (s == "hc1") return HCVariant::HC1;
  if (s == "hc2") return HCVariant::HC2;
  if (s == "hc3") return HCVariant::HC3;
  throw UsageError("unknown covariance estimator: " + s);
}

// ---------------------------------------------------------------- fit

struct FitArgs {
  std::string data, response, method = "ols", weights, cov = "hc3", columns;
  double nu = 7.0, k = 1.345, alpha = 0.05;
  bool adaptive_nu = false, no_intercept = false;
};

int cmd_fit(const FitArgs& a, CLI::App* sub) {
  const DataFrame df = read_csv(a.data);
  df.column(a.response);
  const DesignData dd = build_design(df, split_list(a.columns), {a.response}, !a.no_intercept);
  const Design d(dd.x);
  const Vector y = df.col(a.response);
  const Index n = d.rows();

  const bool needs_weights = a.method == "wls" || a.method == "fls";
  if (needs_weights && a.weights.empty()) throw UsageError("--method " + a.method + " requires --weights");
  if (!needs_weights && !a.weights.empty()) throw UsageError("--weights only applies to wls and fls");
  if (sub->count("--nu") && a.adaptive_nu) throw UsageError("--nu and --adaptive-nu are exclusive");
  if ((sub->count("--nu") || a.adaptive_nu) && a.method != "t") throw UsageError("--nu applies to --method t");
  if (sub->count("--k") && a.method != "huber") throw UsageError("--k applies to --method huber");

  json report;
  report["method"] = a.method;
  report["n"] = n;
  report["p"] = d.cols();
  report["names"] = dd.names;
  bool converged = true;
  IntervalSet iv;

  if (a.method == "ols" || needs_weights) {
    Vector w = Vector::Ones(n);
    if (needs_weights) {
      w = read_weights(a.weights);
      if (w.size() != n) throw Error(ErrorKind::LengthMismatch, "weights file length differs from the data");
    }
    const DiagonalWeights dw(w);
    const RegressionFit fit = a.method == "ols" ? ols_fit(d, y) : fls_fit(d, y, dw, a.method == "wls" ? Method::WLS : Method::FLS);
    // Covariances on the whitened scale diag(w)^{-1/2} X, diag(w)^{-1/2} e.
    const Vector s = w.cwiseSqrt().cwiseInverse();
    const Design ds(s.asDiagonal() * dd.x);
    const Vector e = s.cwiseProduct(y - dd.x * fit.beta);
    const Matrix cov = a.cov == "hom" ? homoscedastic_cov(ds, e) : hc_cov(ds, e, hc_variant(a.cov));
    iv = wald_intervals(fit.beta, cov, a.alpha, a.cov);
    report["diagnostics"] = {{"iterations", fit.diagnostics.iterations},
                             {"converged", true},
                             {"objective", fit.diagnostics.objective}};
  } else if (a.method == "t") {
    TEMOptions opts;
    TModelParams init = t_em_init(d, y);
    if (!a.adaptive_nu) {
      opts.fix_nu = a.nu;
      init.nu = a.nu;
    }
    const TEMResult r = t_em_fit(d, y, init, opts);
    converged = r.trace.converged;
    iv = t_sandwich_ci(d, y, r.params, a.alpha);
    report["t"] = {{"nu", r.params.nu}, {"omega0", r.params.omega0}, {"adaptive_nu", a.adaptive_nu}};
    report["diagnostics"] = {{"iterations", r.fit.diagnostics.iterations},
                             {"converged", converged},
                             {"objective", r.fit.diagnostics.objective}};
  } else if (a.method == "huber") {
    const RegressionFit fit = huber_fit(d, y, {a.k});
    converged = fit.diagnostics.converged;
    iv = wald_intervals(fit.beta, huber_sandwich_cov(d, y - dd.x * fit.beta, {a.k}), a.alpha, "huber_sandwich");
    report["huber"] = {{"k", a.k}};
    report["diagnostics"] = {{"iterations", fit.diagnostics.iterations},
                             {"converged", converged},
                             {"objective", fit.diagnostics.objective}};
  } else {
    throw UsageError("unknown method: " + a.method);
  }

  report["coefficients"] = to_json(iv.estimate);
  report["covariance"] = {{"estimator", iv.estimator}, {"matrix", to_json(iv.cov)}};
  report["intervals"] = {{"alpha", a.alpha}, {"lower", to_json(iv.lower)}, {"upper", to_json(iv.upper)}};
  std::cout << report.dump(2) << '\n';
  return converged ? kExitOk : kExitNotConverged;
}

// ---------------------------------------------------------------- certify

struct CertifyArgs {
  std::string candidate, truth;
  bool oracle = false;
};

int cmd_certify(const CertifyArgs& a) {
  const DiagonalWeights cand(read_weights(a.candidate));
  const DiagonalWeights truth(read_weights(a.truth));
  if (cand.size() != truth.size()) throw Error(ErrorKind::LengthMismatch, "candidate and truth differ in length");
  const SubscedasticCertificate c = certify(cand, truth);
  json out;
  out["n"] = cand.size();
  out["verdict"] = c.verdict;
  out["margin"] = c.margin;
  out["witness_pair"] = c.witness_pair ? json::array({c.witness_pair->first, c.witness_pair->second}) : json();
  out["witness_vector"] = c.witness_vector ? to_json(*c.witness_vector) : json();
  if (a.oracle) {
    const ExcessResult ex = brute_force_excess(cand, truth);
    const bool positive = ex.excess > 1e-10 * ex.scale;
    out["oracle"] = {{"excess", ex.excess},
                     {"scale", ex.scale},
                     {"pair", json::array({ex.pair.first, ex.pair.second})},
                     {"agreement", positive != c.verdict}};
  }
  std::cout << out.dump(2) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- design-weights

struct DesignArgs {
  std::string mode, out, data, group_column = "group", order, column, family = "abs_power", response, columns,
                           batch_sizes, form = "log_abs_x", eigvecs_out;
  double gamma = 1.0, theta = 1.0;
  bool uniform = false, no_intercept = false;
};

int cmd_design_weights(const DesignArgs& a, CLI::App* sub) {
  const std::map<std::string, std::vector<std::string>> allowed{
      {"groupwise", {"--data", "--group-column", "--order", "--gamma", "--uniform"}},
      {"covariate", {"--data", "--column", "--family", "--theta"}},
      {"mixed", {"--batch-sizes", "--gamma", "--eigvecs-out"}},
      {"parametric", {"--data", "--response", "--columns", "--form", "--no-intercept"}},
  };
  const auto it = allowed.find(a.mode);
  if (it == allowed.end()) throw UsageError("unknown mode: " + a.mode);
  for (const char* flag : {"--data", "--group-column", "--order", "--gamma", "--uniform", "--column", "--family",
                           "--theta", "--batch-sizes", "--eigvecs-out", "--response", "--columns", "--form",
                           "--no-intercept"}) {
    if (sub->count(flag) && std::find(it->second.begin(), it->second.end(), flag) == it->second.end())
      throw UsageError(std::string(flag) + " does not apply to --mode " + a.mode);
  }
  auto need = [&](const std::string& v, const char* flag) {
    if (v.empty()) throw UsageError(std::string("--mode ") + a.mode + " requires " + flag);
  };

  json sidecar{{"mode", a.mode}};
  Vector w;
  if (a.mode == "groupwise") {
    need(a.data, "--data");
    const DataFrame df = read_csv(a.data);
    const Vector g = df.col(a.group_column);
    GroupSpec spec;
    spec.gamma = a.gamma;
    int k = 0;
    for (Index i = 0; i < g.size(); ++i) {
      if (g[i] != std::round(g[i])) throw Error(ErrorKind::BadOrdering, "group labels must be integers");
      spec.group_of.push_back(static_cast<int>(g[i]));
      k = std::max(k, static_cast<int>(g[i]));
    }
    if (a.order.empty()) {
      for (int r = 1; r <= k; ++r) spec.order.push_back(r);
    } else {
      for (const auto& s : split_list(a.order)) spec.order.push_back(std::stoi(s));
    }
    w = (a.uniform ? groupwise_weights_uniform(spec) : groupwise_weights(spec)).values();
    sidecar["gamma"] = a.gamma;
    sidecar["order"] = spec.order;
    sidecar["rule"] = a.uniform ? "uniform_step" : "two_gamma_minus_one";
    sidecar["group_column"] = a.group_column;
  } else if (a.mode == "covariate") {
    need(a.data, "--data");
    need(a.column, "--column");
    const DataFrame df = read_csv(a.data);
    ScedasticFunction v;
    if (a.family == "abs_power") v = covariate::abs_power(a.theta);
    else if (a.family == "log_power") v = covariate::log_power(a.theta);
    else if (a.family == "exp_quadratic") v = covariate::exp_quadratic(a.theta);
    else throw UsageError("unknown family: " + a.family);
    w = covariate_weights(v, df.col(a.column)).values();
    sidecar["family"] = a.family;
    sidecar["theta"] = a.theta;
    sidecar["column"] = a.column;
  } else if (a.mode == "mixed") {
    need(a.batch_sizes, "--batch-sizes");
    std::vector<Index> sizes;
    for (const auto& s : split_list(a.batch_sizes)) sizes.push_back(std::stol(s));
    const FullCovariance fc = mixed_effects_weights({batch_indicator(sizes), a.gamma});
    w = fc.eigvals;
    if (!a.eigvecs_out.empty()) {
      DataFrame ev;
      for (Index c = 0; c < fc.eigvecs.cols(); ++c) ev.names.push_back("u" + std::to_string(c));
      ev.data = fc.eigvecs;
      write_csv(a.eigvecs_out, ev);
      sidecar["eigvecs"] = a.eigvecs_out;
    }
    sidecar["batch_sizes"] = sizes;
    sidecar["gamma"] = a.gamma;
    sidecar["note"] = "weights are eigenvalues along the columns of the eigenvector matrix";
  } else {
    need(a.data, "--data");
    need(a.response, "--response");
    const DataFrame df = read_csv(a.data);
    const DesignData dd = build_design(df, split_list(a.columns), {a.response}, !a.no_intercept);
    ParametricForm form;
    if (a.form == "log_abs_x") form = ParametricForm::LOG_ABS_X;
    else if (a.form == "linear_x") form = ParametricForm::LINEAR_X;
    else throw UsageError("unknown form: " + a.form);
    const ParametricVarianceFit fit = parametric_variance_fit(Design(dd.x), df.col(a.response), form);
    w = fit.weights.values();
    sidecar["form"] = a.form;
    sidecar["theta"] = to_json(fit.theta);
    sidecar["names"] = dd.names;
  }
  write_weights(a.out, w);
  write_text(a.out + ".json", sidecar.dump(2) + "\n");
  std::cout << json{{"weights", a.out}, {"sidecar", a.out + ".json"}, {"n", w.size()}}.dump() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string spec, out;
  int threads = 0;
};

json table_json(const ResultTable& t) {
  json rows = json::array();
  for (const ResultRow& r : t.rows)
    rows.push_back({{"estimator", r.estimator},
                    {"n", r.n},
                    {"metric", to_string(r.metric)},
                    {"value", r.value},
                    {"mc_stderr", r.mc_stderr},
                    {"closed_form", r.closed_form},
                    {"dropped", r.dropped},
                    {"not_converged", r.not_converged},
                    {"valid", r.valid}});
  return {{"experiment", t.experiment}, {"rows", rows}, {"notes", t.notes}};
}

int cmd_simulate(const SimulateArgs& a) {
  std::ifstream in(a.spec, std::ios::binary);
  if (!in) throw Error(ErrorKind::ParseError, "cannot read " + a.spec);
  std::stringstream buf;
  buf << in.rdbuf();
  ExperimentSpec spec = spec_from_json(buf.str());
  if (a.threads > 0) spec.threads = a.threads;
  // Relative CSV paths resolve against the directory holding --spec.
  if (spec.design_source == DesignSource::CSV && fs::path(spec.design_csv).is_relative()) {
    const fs::path local = fs::path(a.spec).parent_path() / spec.design_csv;
    if (fs::exists(local)) spec.design_csv = local.string();
  }
  fs::create_directories(a.out);

  const std::string canonical = spec_to_json(spec);
  json manifest{{"spec_hash", fnv1a_hex(canonical)},
                {"seed", spec.seed},
                {"spec", json::parse(canonical)},
                {"experiments", json::array()}};
  bool all_valid = true;
  for (const ExperimentSpec& s : expand_sweep(spec)) {
    json entry{{"name", s.name}, {"files", json::array()}};
    ResultTable table;
    if (s.kind == ExperimentKind::SGV) {
      table = run_sgv_experiment(s);
      json cf = json::array(), mc = json::array();
      for (const auto& e : s.estimators) (is_closed_form_estimator(e) ? cf : mc).push_back(e);
      entry["closed_form_estimators"] = cf;
      entry["monte_carlo_estimators"] = mc;
    } else if (s.kind == ExperimentKind::COVERAGE) {
      table = run_coverage_experiment(s, s.estimators);
      entry["interval_methods"] = s.estimators;
    } else {
      const ConsistencyReport r = run_consistency_experiment(s, s.weight_rule);
      table = r.table;
      entry["weight_rule"] = s.weight_rule;
      entry["trend_ok"] = r.trend_ok;
      entry["limit_ok"] = r.limit_ok;
    }
    for (const Metric m : s.metrics) {
      const std::string file = std::string(to_string(m)) + "_" + s.name + ".csv";
      write_text(fs::path(a.out) / file, table_to_csv(table, m));
      entry["files"].push_back(file);
    }
    const std::string jfile = s.name + ".json";
    write_text(fs::path(a.out) / jfile, table_json(table).dump(2) + "\n");
    entry["files"].push_back(jfile);
    entry["valid"] = table.all_valid();
    entry["notes"] = table.notes;
    all_valid = all_valid && table.all_valid();
    manifest["experiments"].push_back(entry);
  }
  write_text(fs::path(a.out) / "manifest.json", manifest.dump(2) + "\n");
  std::cout << json{{"out", a.out}, {"valid", all_valid}, {"spec_hash", manifest["spec_hash"]}}.dump() << '\n';
  return all_valid ? kExitOk : kExitBadCell;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Heteroscedastic regression: fits, weight certification, weight design, simulation"};
  app.require_subcommand(1);

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Fit a linear model on CSV data");
  fit->add_option("--data", fa.data, "CSV file")->required();
  fit->add_option("--response", fa.response, "Response column")->required();
  fit->add_option("--method", fa.method)->check(CLI::IsMember({"ols", "wls", "fls", "t", "huber"}));
  fit->add_option("--weights", fa.weights, "One-column variance weights file (wls, fls)");
  fit->add_option("--nu", fa.nu, "Fixed degrees of freedom for --method t");
  fit->add_flag("--adaptive-nu", fa.adaptive_nu, "Estimate nu by EM");
  fit->add_option("--k", fa.k, "Huber threshold");
  fit->add_option("--alpha", fa.alpha, "Interval level is 1 - alpha");
  fit->add_option("--cov", fa.cov, "Covariance for ols/wls/fls")
      ->check(CLI::IsMember({"hom", "hc0", "hc1", "hc2", "hc3"}));
  fit->add_option("--columns", fa.columns, "Comma-separated regressors (default: all but the response)");
  fit->add_flag("--no-intercept", fa.no_intercept);

  CertifyArgs ca;
  auto* cert = app.add_subcommand("certify", "Check candidate weights against true variances");
  cert->add_option("--candidate", ca.candidate)->required();
  cert->add_option("--truth", ca.truth)->required();
  cert->add_flag("--oracle", ca.oracle, "Also run the brute-force two-sparse search");

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "Run a Monte Carlo experiment spec");
  sim->add_option("--spec", sa.spec)->required();
  sim->add_option("--out", sa.out)->required();
  sim->add_option("--threads", sa.threads, "Worker count (SUBSCED_THREADS still caps it)");

  DesignArgs da;
  auto* des = app.add_subcommand("design-weights", "Construct subscedastic weights");
  des->add_option("--mode", da.mode)->required();
  des->add_option("--out", da.out, "Output weights CSV")->required();
  des->add_option("--data", da.data);
  des->add_option("--group-column", da.group_column);
  des->add_option("--order", da.order, "Group labels from lowest to highest variance");
  des->add_option("--gamma", da.gamma);
  des->add_flag("--uniform", da.uniform, "Common step certified for every K");
  des->add_option("--column", da.column);
  des->add_option("--family", da.family);
  des->add_option("--theta", da.theta);
  des->add_option("--batch-sizes", da.batch_sizes);
  des->add_option("--eigvecs-out", da.eigvecs_out);
  des->add_option("--response", da.response);
  des->add_option("--columns", da.columns);
  des->add_option("--form", da.form);
  des->add_flag("--no-intercept", da.no_intercept);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("ParseError", e.what());
  }

  try {
    if (*fit) return cmd_fit(fa, fit);
    if (*cert) return cmd_certify(ca);
    if (*sim) return cmd_simulate(sa);
    return cmd_design_weights(da, des);
  } catch (const UsageError& e) {
    return report_error("InvalidArgument", e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::NotConverged) {
      std::cerr << json{{"error", to_string(e.kind())}, {"message", e.what()}}.dump() << '\n';
      return kExitNotConverged;
    }
    return report_error(to_string(e.kind()), e.what());
  } catch (const std::exception& e) {
    return report_error("InvalidArgument", e.what());
  }
}
