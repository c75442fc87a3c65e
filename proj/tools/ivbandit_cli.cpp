// Command-line front end: run experiments, solve and simulate the self-bias
// example, re-summarize finished runs.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ivbandit/ivbandit.hpp"

namespace {

using ivbandit::json;

// Errors go to stderr as a single JSON object.
int report_error(const std::string& kind, const std::string& message, int code, json extra = json::object()) {
  extra["error"] = kind;
  extra["message"] = message;
  std::cerr << extra.dump() << std::endl;
  return code;
}

struct RunArgs {
  std::string config_path;
  std::string preset;
  std::optional<int> replications;
  std::optional<std::uint64_t> base_seed;
  std::optional<int> horizon;
  std::optional<int> record_stride;
  std::optional<std::string> output_dir;
  std::optional<double> ci_level;
  int workers = 0;
  bool paper_scale = false;
};

int cmd_run(const RunArgs& args) {
  json j = json::object();
  if (!args.config_path.empty()) {
    std::ifstream in(args.config_path);
    if (!in) return report_error("config", "cannot open " + args.config_path, 2);
    j = json::parse(in);
  }
  if (!args.preset.empty()) j["preset"] = args.preset;
  if (args.paper_scale) j["replications"] = 1000;
  if (args.replications) j["replications"] = *args.replications;
  if (args.base_seed) j["base_seed"] = *args.base_seed;
  if (args.record_stride) j["record_stride"] = *args.record_stride;
  if (args.output_dir) j["output_dir"] = *args.output_dir;
  if (args.ci_level) j["ci_level"] = *args.ci_level;
  if (args.horizon) {
    j["horizon"] = *args.horizon;
    if (j.contains("algorithms"))
      for (auto& a : j["algorithms"]) a["T"] = *args.horizon;
  }
  const auto config = ivbandit::config_from_json(j);

  try {
    const auto outcome = ivbandit::run_experiment(config, args.workers);
    std::cout << "algorithm,replications,failures,mean_regret,r2_log,r2_log2\n";
    for (const auto& s : outcome.summary.algorithms)
      std::cout << s.algorithm << ',' << s.replications << ',' << s.failures << ',' << s.mean_total_regret << ','
                << s.log_fit.r2 << ',' << s.log2_fit.r2 << '\n';
    std::cout << "artifacts written to " << config.output_dir << '\n';
  } catch (const ivbandit::ExperimentFailed& e) {
    return report_error("experiment_failed", e.what(), 3,
                        {{"failed_cells", e.failed()}, {"total_cells", e.total()}, {"output_dir", config.output_dir}});
  }
  return 0;
}

std::vector<double> parse_roots(const std::string& text) {
  std::vector<double> roots;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) roots.push_back(std::stod(item));
  if (roots.size() != 3) throw ivbandit::UsageError("--roots expects three comma-separated values");
  return roots;
}

int cmd_fixed_points(const std::string& roots_text, double c, double alpha) {
  const auto r = parse_roots(roots_text);
  const auto ex = ivbandit::selfbias::betas_from_roots(r[0], r[1], r[2], c, alpha);
  const auto fp = ivbandit::selfbias::fixed_points(ex);
  std::printf("beta_0,beta_1,beta_2,beta_3\n%.12g,%.12g,%.12g,%.12g\n", ex.betas[0], ex.betas[1], ex.betas[2],
              ex.betas[3]);
  std::printf("kind,value\n");
  for (double x : fp.roots) std::printf("root,%.12g\n", x);
  for (double x : fp.inadmissible_roots) std::printf("inadmissible_root,%.12g\n", x);
  std::printf("ols_limit,%.12g\n", fp.ols_limit);
  if (fp.complex_roots > 0) std::printf("complex_roots,%d\n", fp.complex_roots);
  return 0;
}

struct BiasDemoArgs {
  std::string roots = "2,5,10";
  double c = 1.0;
  double alpha = 15.0;
  ivbandit::selfbias::GreedyPathOptions paths;
  int joint_samples = 2000;
  std::string output_dir = "bias_demo";
};

int cmd_bias_demo(const BiasDemoArgs& args) {
  namespace sb = ivbandit::selfbias;
  const auto r = parse_roots(args.roots);
  const auto ex = sb::betas_from_roots(r[0], r[1], r[2], args.c, args.alpha);
  const auto fp = sb::fixed_points(ex);
  const auto paths = sb::simulate_greedy_paths(ex, args.paths);

  std::filesystem::create_directories(args.output_dir);
  const std::filesystem::path dir(args.output_dir);
  {
    std::ofstream out(dir / "terminal_estimates.csv");
    out << "path,estimate,stalled\n";
    for (std::size_t i = 0; i < paths.terminal.size(); ++i)
      out << i << ',' << ivbandit::detail::num(paths.terminal[i]) << ',' << (paths.stalled[i] ? 1 : 0) << '\n';
  }
  if (!paths.record_t.empty()) {
    std::ofstream out(dir / "paths.csv");
    out << "path,t,estimate\n";
    for (std::size_t i = 0; i < paths.trajectories.size(); ++i)
      for (std::size_t k = 0; k < paths.record_t.size(); ++k)
        out << i << ',' << paths.record_t[k] << ',' << ivbandit::detail::num(paths.trajectories[i][k]) << '\n';
  }
  {
    std::ofstream out(dir / "fixed_points.csv");
    out << "kind,value\n";
    for (double x : fp.roots) out << "root," << ivbandit::detail::num(x) << '\n';
    out << "ols_limit," << ivbandit::detail::num(fp.ols_limit) << '\n';
  }
  {
    std::ofstream out(dir / "joint_samples.csv");
    out << "v,eps\n";
    for (const auto& s : sb::sample_joint(ex, args.joint_samples, args.paths.seed + 1))
      out << ivbandit::detail::num(s[0]) << ',' << ivbandit::detail::num(s[1]) << '\n';
  }

  std::printf("root,share_within_0.5\n");
  for (double root : fp.roots) {
    int near = 0;
    for (double x : paths.terminal) near += std::abs(x - root) <= 0.5 ? 1 : 0;
    std::printf("%.6g,%.4f\n", root, static_cast<double>(near) / static_cast<double>(paths.terminal.size()));
  }
  std::printf("ols_limit,%.6g\n", fp.ols_limit);
  return 0;
}

int cmd_summarize(const std::string& dir, const std::string& output) {
  const std::string csv = ivbandit::resummarize_directory(dir);
  if (output.empty()) {
    std::cout << csv;
  } else {
    std::ofstream out(output, std::ios::binary);
    out << csv;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Linear contextual bandits with endogenous covariates"};
  app.set_version_flag("--version", std::string(ivbandit::kVersion));
  app.require_subcommand(1);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run a replication experiment");
  run_cmd->add_option("config", run.config_path, "JSON experiment config");
  run_cmd->add_option("--preset", run.preset, "Named preset (benchmark)");
  run_cmd->add_option("--replications", run.replications);
  run_cmd->add_option("--base-seed", run.base_seed);
  run_cmd->add_option("--horizon", run.horizon, "Horizon T for every algorithm");
  run_cmd->add_option("--record-stride", run.record_stride);
  run_cmd->add_option("--output-dir", run.output_dir);
  run_cmd->add_option("--ci-level", run.ci_level);
  run_cmd->add_option("--workers", run.workers, "Worker threads (default: all cores, capped by IVBANDIT_MAX_WORKERS)");
  run_cmd->add_flag("--paper-scale", run.paper_scale, "1000 replications");

  std::string roots = "2,5,10";
  double c = 1.0, alpha = 15.0;
  auto* fp_cmd = app.add_subcommand("fixed-points", "Noise coefficients and fixed points for prescribed roots");
  fp_cmd->add_option("--roots", roots, "r1,r2,r3");
  fp_cmd->add_option("--c", c, "Safe-arm reward");
  fp_cmd->add_option("--alpha", alpha, "Risky-arm slope");

  BiasDemoArgs demo;
  auto* demo_cmd = app.add_subcommand("bias-demo", "Simulate greedy learning paths in the self-bias example");
  demo_cmd->add_option("--roots", demo.roots);
  demo_cmd->add_option("--c", demo.c);
  demo_cmd->add_option("--alpha", demo.alpha);
  demo_cmd->add_option("--paths", demo.paths.n_paths);
  demo_cmd->add_option("--horizon", demo.paths.horizon);
  demo_cmd->add_option("--warmup", demo.paths.warmup);
  demo_cmd->add_option("--record-stride", demo.paths.record_stride);
  demo_cmd->add_option("--seed", demo.paths.seed);
  demo_cmd->add_option("--joint-samples", demo.joint_samples);
  demo_cmd->add_option("--output-dir", demo.output_dir);

  std::string summarize_dir, summarize_out;
  auto* sum_cmd = app.add_subcommand("summarize", "Recompute summary.csv from a run directory");
  sum_cmd->add_option("dir", summarize_dir)->required();
  sum_cmd->add_option("-o,--output", summarize_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run_cmd) return cmd_run(run);
    if (*fp_cmd) return cmd_fixed_points(roots, c, alpha);
    if (*demo_cmd) return cmd_bias_demo(demo);
    if (*sum_cmd) return cmd_summarize(summarize_dir, summarize_out);
  } catch (const ivbandit::ConfigError& e) {
    return report_error("config", e.what(), 2);
  } catch (const ivbandit::RootOutsideBeliefRange& e) {
    return report_error("root_outside_belief_range", e.what(), 2);
  } catch (const ivbandit::UsageError& e) {
    return report_error("usage", e.what(), 2);
  } catch (const json::exception& e) {
    return report_error("config", e.what(), 2);
  } catch (const std::exception& e) {
    return report_error("runtime", e.what(), 1);
  }
  return 0;
}
