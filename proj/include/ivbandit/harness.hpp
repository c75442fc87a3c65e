#pragma once

// Seeded replication experiments: configuration, parallel execution,
// aggregation into bias/coverage/regret tables and CSV/JSON artifacts.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "ivbandit/dgp.hpp"
#include "ivbandit/errors.hpp"
#include "ivbandit/policy.hpp"
#include "ivbandit/rng.hpp"

#ifndef IVBANDIT_VERSION
#define IVBANDIT_VERSION "0.0.0"
#endif

namespace ivbandit {

using json = nlohmann::json;

inline constexpr const char* kVersion = IVBANDIT_VERSION;

struct ExperimentConfig {
  std::string preset;  // empty or "benchmark"
  EnvSpec env = EnvSpec::benchmark();
  std::vector<PolicyConfig> algorithms;
  int replications = 200;
  std::uint64_t base_seed = 20240611;
  int record_stride = 10;
  std::string output_dir = "ivbandit_out";
  double ci_level = 0.95;

  void validate() const {
    env.validate();
    if (algorithms.empty()) throw ConfigError("experiment lists no algorithms");
    for (const auto& a : algorithms) a.validate();
    if (replications < 1) throw ConfigError("replications must be >= 1");
    if (record_stride < 1) throw ConfigError("record_stride must be >= 1");
    if (!(ci_level > 0.0 && ci_level < 1.0)) throw ConfigError("ci_level must lie in (0,1)");
    std::vector<std::string> names;
    for (const auto& a : algorithms) names.push_back(a.name());
    std::sort(names.begin(), names.end());
    if (std::adjacent_find(names.begin(), names.end()) != names.end())
      throw ConfigError("algorithm labels must be unique");
  }
};

inline std::vector<PolicyConfig> benchmark_algorithms(int horizon = 20000) {
  return {
      {PolicyKind::IvBandit, 0.0, 50, 100, horizon, "IV-Greedy"},
      {PolicyKind::IvBandit, 0.5, 50, 100, horizon, "IV-UCB"},
      {PolicyKind::NaiveIvUcb, 0.5, 50, 100, horizon, "Naive-IV-UCB"},
      {PolicyKind::OlsUcb, 0.5, 50, 100, horizon, "OLS-UCB"},
      {PolicyKind::Rtc, 0.0, 50, 100, horizon, "RTC"},
  };
}

inline ExperimentConfig benchmark_experiment() {
  ExperimentConfig config;
  config.preset = "benchmark";
  config.env = EnvSpec::benchmark();
  config.algorithms = benchmark_algorithms();
  return config;
}

/// Names for the stacked coefficient vector: beta_i_0, beta_i_1, gamma_i for
/// the built-in covariates (1, x, d), alpha_i_j otherwise. Arms are 1-based.
inline std::vector<std::string> coefficient_names(const EnvSpec& env) {
  std::vector<std::string> names;
  const int p = env.covariate_dim();
  for (int i = 1; i <= env.arms; ++i) {
    for (int j = 0; j < p; ++j) {
      if (!env.custom_draw && p == 3) {
        names.push_back(j < 2 ? "beta_" + std::to_string(i) + "_" + std::to_string(j) : "gamma_" + std::to_string(i));
      } else {
        names.push_back("alpha_" + std::to_string(i) + "_" + std::to_string(j));
      }
    }
  }
  return names;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* key : allowed) ok = ok || it.key() == key;
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

inline TruncNormSpec trunc_norm_from_json(const json& j, TruncNormSpec spec) {
  reject_unknown_keys(j, {"mean", "variance", "lower", "upper"}, "truncated normal");
  spec.mean = j.value("mean", spec.mean);
  spec.variance = j.value("variance", spec.variance);
  spec.lower = j.value("lower", spec.lower);
  spec.upper = j.value("upper", spec.upper);
  return spec;
}

inline json trunc_norm_to_json(const TruncNormSpec& s) {
  return {{"mean", s.mean}, {"variance", s.variance}, {"lower", s.lower}, {"upper", s.upper}};
}

}  // namespace detail

inline EnvSpec env_from_json(const json& j, EnvSpec env) {
  detail::reject_unknown_keys(j,
                              {"arms", "alpha", "rho_z", "rho_eta", "eta_in_noise", "idiosyncratic_variance", "x",
                               "instrument", "confounder", "x_thresholds", "instrument_thresholds"},
                              "env");
  auto& s = env.structure;
  env.arms = j.value("arms", env.arms);
  if (j.contains("alpha")) {
    const auto values = j.at("alpha").get<std::vector<double>>();
    env.alpha = Eigen::Map<const VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  }
  s.rho_z = j.value("rho_z", s.rho_z);
  s.rho_eta = j.value("rho_eta", s.rho_eta);
  s.eta_in_noise = j.value("eta_in_noise", s.eta_in_noise);
  s.idiosyncratic_variance = j.value("idiosyncratic_variance", s.idiosyncratic_variance);
  if (j.contains("x")) s.exogenous = detail::trunc_norm_from_json(j.at("x"), s.exogenous);
  if (j.contains("instrument")) s.instrument = detail::trunc_norm_from_json(j.at("instrument"), s.instrument);
  if (j.contains("confounder")) s.confounder = detail::trunc_norm_from_json(j.at("confounder"), s.confounder);
  if (j.contains("x_thresholds")) s.exogenous_thresholds = j.at("x_thresholds").get<std::vector<double>>();
  if (j.contains("instrument_thresholds"))
    s.instrument_thresholds = j.at("instrument_thresholds").get<std::vector<double>>();
  return env;
}

inline json env_to_json(const EnvSpec& env) {
  if (env.custom_draw) throw UsageError("a custom DGP cannot be serialized");
  const auto& s = env.structure;
  return {{"arms", env.arms},
          {"alpha", std::vector<double>(env.alpha.data(), env.alpha.data() + env.alpha.size())},
          {"rho_z", s.rho_z},
          {"rho_eta", s.rho_eta},
          {"eta_in_noise", s.eta_in_noise},
          {"idiosyncratic_variance", s.idiosyncratic_variance},
          {"x", detail::trunc_norm_to_json(s.exogenous)},
          {"instrument", detail::trunc_norm_to_json(s.instrument)},
          {"confounder", detail::trunc_norm_to_json(s.confounder)},
          {"x_thresholds", s.exogenous_thresholds},
          {"instrument_thresholds", s.instrument_thresholds}};
}

inline PolicyConfig policy_from_json(const json& j, int default_horizon) {
  detail::reject_unknown_keys(j, {"kind", "theta", "T1", "T2", "T", "label"}, "algorithm");
  PolicyConfig p;
  p.kind = parse_policy_kind(j.at("kind").get<std::string>());
  p.theta = j.value("theta", 0.0);
  p.t1 = j.value("T1", 50);
  p.t2 = j.value("T2", std::max(p.t1, 100));
  p.horizon = j.value("T", default_horizon);
  p.label = j.value("label", std::string());
  return p;
}

inline json policy_to_json(const PolicyConfig& p) {
  return {{"kind", to_string(p.kind)}, {"theta", p.theta}, {"T1", p.t1}, {"T2", p.t2}, {"T", p.horizon},
          {"label", p.name()}};
}

/**
 * Flat JSON config. `"preset": "benchmark"` supplies the environment and the
 * five algorithms; explicit keys override the preset.
 */
inline ExperimentConfig config_from_json(const json& j) {
  detail::reject_unknown_keys(
      j, {"preset", "env", "algorithms", "replications", "base_seed", "record_stride", "output_dir", "ci_level", "horizon"},
      "experiment config");
  ExperimentConfig config;
  config.preset = j.value("preset", std::string());
  const int horizon = j.value("horizon", 20000);
  if (!config.preset.empty()) {
    if (config.preset != "benchmark") throw ConfigError("unknown preset '" + config.preset + "'");
    config = benchmark_experiment();
    for (auto& a : config.algorithms) a.horizon = horizon;
  } else {
    config.algorithms.clear();
    if (!j.contains("env") || !j.at("env").contains("alpha"))
      throw ConfigError("config without a preset must give env.alpha");
  }
  if (j.contains("env")) config.env = env_from_json(j.at("env"), config.env);
  if (j.contains("algorithms")) {
    config.algorithms.clear();
    for (const auto& a : j.at("algorithms")) config.algorithms.push_back(policy_from_json(a, horizon));
  }
  config.replications = j.value("replications", config.replications);
  config.base_seed = j.value("base_seed", config.base_seed);
  config.record_stride = j.value("record_stride", config.record_stride);
  config.output_dir = j.value("output_dir", config.output_dir);
  config.ci_level = j.value("ci_level", config.ci_level);
  config.validate();
  return config;
}

inline json config_to_json(const ExperimentConfig& config) {
  json algorithms = json::array();
  for (const auto& a : config.algorithms) algorithms.push_back(policy_to_json(a));
  json j = {{"env", env_to_json(config.env)},
            {"algorithms", algorithms},
            {"replications", config.replications},
            {"base_seed", config.base_seed},
            {"record_stride", config.record_stride},
            {"output_dir", config.output_dir},
            {"ci_level", config.ci_level}};
  if (!config.preset.empty()) j["preset"] = config.preset;
  return j;
}

// ---------------------------------------------------------------------------
// Execution

struct CellStreams {
  RngStream contexts;
  RngStream policy;
};

/// Streams for one replication. They do not depend on the algorithm, so every
/// algorithm sees the same contexts and the same randomization-phase arms.
inline CellStreams replication_streams(std::uint64_t base_seed, int replication) {
  const auto rep = static_cast<std::uint64_t>(replication);
  return {RngStream::derive(base_seed, {rep, 0}), RngStream::derive(base_seed, {rep, 1})};
}

/// Worker count: hardware threads, capped by IVBANDIT_MAX_WORKERS if set.
inline int default_worker_count() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* cap = std::getenv("IVBANDIT_MAX_WORKERS")) {
    const int c = std::atoi(cap);
    if (c >= 1) n = std::min(n, c);
  }
  return n;
}

class ExperimentFailed : public std::runtime_error {
 public:
  ExperimentFailed(int failed, int total)
      : std::runtime_error("experiment failed: " + std::to_string(failed) + " of " + std::to_string(total) +
                           " cells failed (limit 10%)"),
        failed_(failed),
        total_(total) {}
  int failed() const noexcept { return failed_; }
  int total() const noexcept { return total_; }

 private:
  int failed_;
  int total_;
};

/// Runs every (algorithm, replication) cell. Results come back ordered by
/// algorithm index, then replication, regardless of worker scheduling.
inline std::vector<ReplicationResult> run_cells(const ExperimentConfig& config, int workers = 0) {
  config.validate();
  const int algorithms = static_cast<int>(config.algorithms.size());
  const int total = algorithms * config.replications;
  std::vector<ReplicationResult> results(static_cast<std::size_t>(total));
  if (workers <= 0) workers = default_worker_count();
  workers = std::min(workers, total);

  RunOptions options;
  options.record_stride = config.record_stride;
  options.ci_level = config.ci_level;

  std::atomic<int> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto work = [&] {
    for (int cell = next++; cell < total; cell = next++) {
      const int a = cell / config.replications;
      const int rep = cell % config.replications;
      try {
        auto streams = replication_streams(config.base_seed, rep);
        ReplicationResult r = run_replication(config.algorithms[static_cast<std::size_t>(a)], config.env,
                                              streams.contexts, streams.policy, options);
        r.replication = rep;
        results[static_cast<std::size_t>(cell)] = std::move(r);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return results;
}

// ---------------------------------------------------------------------------
// Aggregation

struct InferenceRow {
  std::string algorithm;
  int replication = 0;
  int coefficient = 0;
  double estimate = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  bool covered = false;
};

struct CoefficientSummary {
  std::string algorithm;
  int coefficient = 0;
  double mean_bias = 0.0;
  double sd = 0.0;
  double coverage = 0.0;
  int replications = 0;
};

enum class RegretModel { Log, Log2 };

struct RegretFit {
  double intercept = 0.0;
  double slope = 0.0;
  double r2 = 0.0;
  bool degenerate = false;
  int points = 0;
};

struct RegretCurve {
  std::string algorithm;
  std::vector<int> t;
  std::vector<double> mean;
  std::vector<double> lo95;
  std::vector<double> hi95;
};

struct AlgorithmSummary {
  std::string algorithm;
  int replications = 0;
  int failures = 0;
  double mean_total_regret = 0.0;
  double mean_wrong_pulls = 0.0;
  RegretFit log_fit;
  RegretFit log2_fit;
};

struct SummaryTable {
  std::vector<CoefficientSummary> coefficients;
  std::vector<AlgorithmSummary> algorithms;
  std::vector<RegretCurve> curves;
};

/**
 * Least-squares fit of regret(t) on {1, log t} or {1, log^2 t} over the
 * points with t > t_min. A constant curve has no explained variance; it is
 * reported with R^2 = 0 and the degenerate flag.
 */
inline RegretFit fit_regret_model(const std::vector<int>& t, const std::vector<double>& regret, RegretModel model,
                                  int t_min) {
  if (t.size() != regret.size()) throw UsageError("fit_regret_model: length mismatch");
  std::vector<double> xs, ys;
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (t[k] <= t_min) continue;
    const double lt = std::log(static_cast<double>(t[k]));
    xs.push_back(model == RegretModel::Log ? lt : lt * lt);
    ys.push_back(regret[k]);
  }
  RegretFit fit;
  fit.points = static_cast<int>(xs.size());
  if (xs.size() < 2) throw UsageError("fit_regret_model: curve must cover at least two periods after t_min");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    sxx += (xs[k] - mx) * (xs[k] - mx);
    sxy += (xs[k] - mx) * (ys[k] - my);
    syy += (ys[k] - my) * (ys[k] - my);
  }
  fit.slope = sxx > 0.0 ? sxy / sxx : 0.0;
  fit.intercept = my - fit.slope * mx;
  if (!(syy > 1e-12 * std::max(1.0, my * my * n)) || !(sxx > 0.0)) {
    fit.degenerate = true;
    fit.r2 = 0.0;
    return fit;
  }
  fit.r2 = sxy * sxy / (sxx * syy);
  return fit;
}

namespace detail {

// Linearly interpolated sample quantile (R type 7).
inline double quantile(std::vector<double> values, double prob) {
  if (values.empty()) return std::nan("");
  std::sort(values.begin(), values.end());
  const double h = prob * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

inline bool row_less(const InferenceRow& a, const InferenceRow& b) {
  if (a.algorithm != b.algorithm) return a.algorithm < b.algorithm;
  if (a.replication != b.replication) return a.replication < b.replication;
  return a.coefficient < b.coefficient;
}

}  // namespace detail

inline std::vector<InferenceRow> inference_rows(const std::vector<ReplicationResult>& results) {
  std::vector<InferenceRow> rows;
  for (const auto& r : results) {
    if (!r.ok || !r.inference) continue;
    const auto& inf = *r.inference;
    for (Eigen::Index j = 0; j < inf.alpha_hat.size(); ++j) {
      rows.push_back({r.algorithm, r.replication, static_cast<int>(j), inf.alpha_hat(j), inf.se(j), inf.ci_lower(j),
                      inf.ci_upper(j), !inf.covered.empty() && inf.covered[static_cast<std::size_t>(j)]});
    }
  }
  return rows;
}

/**
 * Per (algorithm, coefficient): mean bias, sample SD and CI coverage. Rows are
 * sorted first, so the result does not depend on input order. Output follows
 * `algorithm_order` when given, else alphabetical order.
 */
inline std::vector<CoefficientSummary> summarize_rows(std::vector<InferenceRow> rows, const VectorXd& alpha_true,
                                                      const std::vector<std::string>& algorithm_order = {}) {
  std::sort(rows.begin(), rows.end(), detail::row_less);
  std::map<std::pair<std::string, int>, std::vector<const InferenceRow*>> groups;
  for (const auto& row : rows) groups[{row.algorithm, row.coefficient}].push_back(&row);

  std::vector<std::string> order = algorithm_order;
  for (const auto& [key, _] : groups)
    if (std::find(order.begin(), order.end(), key.first) == order.end()) order.push_back(key.first);

  std::vector<CoefficientSummary> out;
  for (const auto& name : order) {
    for (Eigen::Index j = 0; j < alpha_true.size(); ++j) {
      auto it = groups.find({name, static_cast<int>(j)});
      if (it == groups.end()) continue;
      const auto& g = it->second;
      const double n = static_cast<double>(g.size());
      double mean = 0.0, covered = 0.0;
      for (const auto* row : g) {
        mean += row->estimate;
        covered += row->covered ? 1.0 : 0.0;
      }
      mean /= n;
      double ss = 0.0;
      for (const auto* row : g) ss += (row->estimate - mean) * (row->estimate - mean);
      CoefficientSummary s;
      s.algorithm = name;
      s.coefficient = static_cast<int>(j);
      s.mean_bias = mean - alpha_true(j);
      s.sd = g.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
      s.coverage = covered / n;
      s.replications = static_cast<int>(g.size());
      out.push_back(s);
    }
  }
  return out;
}

inline std::vector<CoefficientSummary> summarize(const std::vector<ReplicationResult>& results,
                                                 const VectorXd& alpha_true,
                                                 const std::vector<std::string>& algorithm_order = {}) {
  return summarize_rows(inference_rows(results), alpha_true, algorithm_order);
}

/// Pointwise mean and 2.5%/97.5% quantiles of cumulative regret across
/// successful replications.
inline RegretCurve regret_curve(const std::vector<ReplicationResult>& results, const std::string& algorithm) {
  RegretCurve curve;
  curve.algorithm = algorithm;
  std::vector<const ReplicationResult*> ok;
  for (const auto& r : results)
    if (r.algorithm == algorithm && r.ok) ok.push_back(&r);
  if (ok.empty()) return curve;
  curve.t = ok.front()->record_t;
  for (std::size_t k = 0; k < curve.t.size(); ++k) {
    std::vector<double> values;
    values.reserve(ok.size());
    for (const auto* r : ok) values.push_back(r->cumulative_regret[k]);
    curve.mean.push_back(std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size()));
    curve.lo95.push_back(detail::quantile(values, 0.025));
    curve.hi95.push_back(detail::quantile(values, 0.975));
  }
  return curve;
}

inline SummaryTable build_summary(const ExperimentConfig& config, const std::vector<ReplicationResult>& results) {
  SummaryTable table;
  std::vector<std::string> order;
  for (const auto& a : config.algorithms) order.push_back(a.name());
  table.coefficients = summarize(results, config.env.alpha, order);
  for (const auto& a : config.algorithms) {
    AlgorithmSummary s;
    s.algorithm = a.name();
    double regret = 0.0, wrong = 0.0;
    for (const auto& r : results) {
      if (r.algorithm != s.algorithm) continue;
      ++s.replications;
      if (!r.ok) {
        ++s.failures;
        continue;
      }
      regret += r.total_regret;
      wrong += static_cast<double>(r.wrong_pulls);
    }
    const int ok = s.replications - s.failures;
    if (ok > 0) {
      s.mean_total_regret = regret / ok;
      s.mean_wrong_pulls = wrong / ok;
    }
    RegretCurve curve = regret_curve(results, s.algorithm);
    const int t_min = a.kind == PolicyKind::IvBandit ? a.t2 : (a.kind == PolicyKind::Oracle ? 0 : a.t1);
    const auto after = std::count_if(curve.t.begin(), curve.t.end(), [&](int t) { return t > t_min; });
    if (after >= 2) {
      s.log_fit = fit_regret_model(curve.t, curve.mean, RegretModel::Log, t_min);
      s.log2_fit = fit_regret_model(curve.t, curve.mean, RegretModel::Log2, t_min);
    }
    table.algorithms.push_back(s);
    table.curves.push_back(std::move(curve));
  }
  return table;
}

// ---------------------------------------------------------------------------
// Artifacts

namespace detail {

// Shortest representation that round-trips.
inline std::string num(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace detail

inline std::string summary_csv(const SummaryTable& table, const std::vector<std::string>& names) {
  std::ostringstream out;
  out << "algorithm,coefficient_index,coefficient,mean_bias,sd,coverage,replications\n";
  for (const auto& s : table.coefficients)
    out << s.algorithm << ',' << s.coefficient << ',' << names.at(static_cast<std::size_t>(s.coefficient)) << ','
        << detail::num(s.mean_bias) << ',' << detail::num(s.sd) << ',' << detail::num(s.coverage) << ','
        << s.replications << '\n';
  return out.str();
}

inline std::string algorithms_csv(const SummaryTable& table) {
  std::ostringstream out;
  out << "algorithm,replications,failures,mean_regret,mean_wrong_pulls,r2_log,r2_log2\n";
  for (const auto& s : table.algorithms)
    out << s.algorithm << ',' << s.replications << ',' << s.failures << ',' << detail::num(s.mean_total_regret) << ','
        << detail::num(s.mean_wrong_pulls) << ',' << detail::num(s.log_fit.r2) << ',' << detail::num(s.log2_fit.r2)
        << '\n';
  return out.str();
}

inline std::string regret_curves_csv(const SummaryTable& table) {
  std::ostringstream out;
  out << "algorithm,t,mean_regret,lo95,hi95\n";
  for (const auto& c : table.curves)
    for (std::size_t k = 0; k < c.t.size(); ++k)
      out << c.algorithm << ',' << c.t[k] << ',' << detail::num(c.mean[k]) << ',' << detail::num(c.lo95[k]) << ','
          << detail::num(c.hi95[k]) << '\n';
  return out.str();
}

inline std::string terminal_estimates_csv(const std::vector<ReplicationResult>& results) {
  std::ostringstream out;
  out << "algorithm,replication,coefficient_index,estimate\n";
  for (const auto& r : results) {
    if (!r.ok || !r.terminal) continue;
    const auto& a = r.terminal->fit.alpha_hat;
    for (Eigen::Index j = 0; j < a.size(); ++j)
      out << r.algorithm << ',' << r.replication << ',' << j << ',' << detail::num(a(j)) << '\n';
  }
  return out.str();
}

inline std::string inference_csv(const std::vector<ReplicationResult>& results) {
  std::ostringstream out;
  out << "algorithm,replication,coefficient_index,estimate,se,ci_lo,ci_hi,covered\n";
  for (const auto& row : inference_rows(results))
    out << row.algorithm << ',' << row.replication << ',' << row.coefficient << ',' << detail::num(row.estimate) << ','
        << detail::num(row.se) << ',' << detail::num(row.ci_lo) << ',' << detail::num(row.ci_hi) << ','
        << (row.covered ? 1 : 0) << '\n';
  return out.str();
}

inline std::string failures_csv(const std::vector<ReplicationResult>& results) {
  std::ostringstream out;
  out << "algorithm,replication,period,message\n";
  for (const auto& r : results) {
    if (r.ok) continue;
    std::string msg = r.failure;
    std::replace(msg.begin(), msg.end(), ',', ';');
    out << r.algorithm << ',' << r.replication << ',' << r.failed_at << ',' << msg << '\n';
  }
  return out.str();
}

inline json manifest_json(const ExperimentConfig& config) {
  return {{"software", "ivbandit"},
          {"version", kVersion},
          {"config", config_to_json(config)},
          {"coefficient_names", coefficient_names(config.env)}};
}

struct ExperimentOutcome {
  std::vector<ReplicationResult> results;
  SummaryTable summary;
  int failed_cells = 0;
};

inline void write_artifacts(const ExperimentConfig& config, const ExperimentOutcome& outcome,
                            const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto names = coefficient_names(config.env);
  detail::write_text(dir / "summary.csv", summary_csv(outcome.summary, names));
  detail::write_text(dir / "algorithms.csv", algorithms_csv(outcome.summary));
  detail::write_text(dir / "regret_curves.csv", regret_curves_csv(outcome.summary));
  detail::write_text(dir / "terminal_estimates.csv", terminal_estimates_csv(outcome.results));
  detail::write_text(dir / "inference.csv", inference_csv(outcome.results));
  detail::write_text(dir / "failures.csv", failures_csv(outcome.results));
  detail::write_text(dir / "manifest.json", manifest_json(config).dump(2) + "\n");
}

/**
 * Runs all cells, aggregates, and writes the artifacts to config.output_dir
 * (when `write` is set). Throws ExperimentFailed after writing if more than
 * 10% of cells failed.
 */
inline ExperimentOutcome run_experiment(const ExperimentConfig& config, int workers = 0, bool write = true) {
  ExperimentOutcome outcome;
  outcome.results = run_cells(config, workers);
  for (const auto& r : outcome.results) outcome.failed_cells += r.ok ? 0 : 1;
  outcome.summary = build_summary(config, outcome.results);
  if (write) write_artifacts(config, outcome, config.output_dir);
  const int total = static_cast<int>(outcome.results.size());
  if (10 * outcome.failed_cells > total) throw ExperimentFailed(outcome.failed_cells, total);
  return outcome;
}

// ---------------------------------------------------------------------------
// Re-summarizing a finished run

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s) {
  double x = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc()) {
    if (s == "nan") return std::nan("");
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    throw std::runtime_error("bad number '" + s + "'");
  }
  return x;
}

}  // namespace detail

inline std::vector<InferenceRow> read_inference_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "algorithm,replication,coefficient_index,estimate,se,ci_lo,ci_hi,covered")
    throw std::runtime_error(path.string() + ": unexpected header");
  std::vector<InferenceRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 8) throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
    rows.push_back({f[0], std::stoi(f[1]), std::stoi(f[2]), detail::parse_double(f[3]), detail::parse_double(f[4]),
                    detail::parse_double(f[5]), detail::parse_double(f[6]), f[7] == "1"});
  }
  return rows;
}

/// Recomputes summary.csv content from a run directory's manifest and
/// inference.csv.
inline std::string resummarize_directory(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("cannot read " + (dir / "manifest.json").string());
  const json manifest = json::parse(in);
  const ExperimentConfig config = config_from_json(manifest.at("config"));
  std::vector<std::string> order;
  for (const auto& a : config.algorithms) order.push_back(a.name());
  SummaryTable table;
  table.coefficients = summarize_rows(read_inference_csv(dir / "inference.csv"), config.env.alpha, order);
  return summary_csv(table, coefficient_names(config.env));
}

}  // namespace ivbandit
