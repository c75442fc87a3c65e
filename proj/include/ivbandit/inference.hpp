#pragma once

// Large-sample inference on terminal 2SLS estimates: standard errors,
// marginal normal confidence intervals, the Wald statistic and
// identification diagnostics.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ivbandit/errors.hpp"
#include "ivbandit/estimation.hpp"
#include "ivbandit/stats.hpp"

namespace ivbandit {

struct InferenceReport {
  VectorXd alpha_hat;
  VectorXd se;
  VectorXd ci_lower;
  VectorXd ci_upper;
  double level = 0.95;
  int wald_df = 0;
  // Populated only when the true coefficients are known (simulation mode).
  std::optional<double> wald;
  std::optional<double> wald_p_value;
  std::vector<bool> covered;
  VectorXd normalized_score;
};

/**
 * Builds the report for `fit` with covariance estimate sigma_hat^2 * omega_hat.
 *
 * `omega_hat` is the raw-sum inverse Gram, so it already carries the
 * 1/n_eff scale. `n_eff` is the number of observations behind the fit; it is
 * used to express the normalized score as
 *   sqrt(n_eff) * (n_eff * sigma^2 * omega)^{-1/2} (alpha_hat - alpha),
 * which is asymptotically standard normal per coordinate.
 */
inline InferenceReport build_report(const TslsFit& fit, long n_eff, double level,
                                    const std::optional<VectorXd>& alpha_true = std::nullopt) {
  if (!(level > 0.0 && level < 1.0)) throw UsageError("confidence level must lie in (0,1)");
  if (n_eff < 1) throw UsageError("build_report: n_eff must be positive");
  const Eigen::Index d = fit.alpha_hat.size();
  if (fit.omega_hat.rows() != d || fit.omega_hat.cols() != d) throw UsageError("build_report: omega has wrong shape");

  const MatrixXd cov = fit.sigma_hat * fit.sigma_hat * fit.omega_hat;
  Eigen::LLT<MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success || !(cov.diagonal().minCoeff() > 0.0))
    throw NumericalError("build_report: estimated covariance is not positive definite");

  InferenceReport report;
  report.level = level;
  report.alpha_hat = fit.alpha_hat;
  report.se = cov.diagonal().cwiseSqrt();
  const double crit = normal_quantile(1.0 - (1.0 - level) / 2.0);
  report.ci_lower = fit.alpha_hat - crit * report.se;
  report.ci_upper = fit.alpha_hat + crit * report.se;
  report.wald_df = static_cast<int>(d);

  if (alpha_true) {
    if (alpha_true->size() != d) throw UsageError("build_report: true coefficient length mismatch");
    const VectorXd diff = fit.alpha_hat - *alpha_true;
    report.wald = diff.dot(llt.solve(diff));
    report.wald_p_value = 1.0 - chi2_cdf(report.wald_df, *report.wald);
    report.covered.resize(static_cast<std::size_t>(d));
    for (Eigen::Index j = 0; j < d; ++j)
      report.covered[static_cast<std::size_t>(j)] =
          report.ci_lower(j) <= (*alpha_true)(j) && (*alpha_true)(j) <= report.ci_upper(j);

    const double n = static_cast<double>(n_eff);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(n * cov);
    report.normalized_score = std::sqrt(n) * (eig.operatorInverseSqrt() * diff);
  }
  return report;
}

struct IdentificationDiagnostics {
  double min_singular_vz = 0.0;
  double max_singular_vz = 0.0;
  double min_eigen_zz = 0.0;
  double condition = std::numeric_limits<double>::infinity();  // of S_vz S_zz^{-1} S_vz'
};

/// Rank diagnostics on the normalized moments S_vz = A/n and S_zz = B/n.
inline IdentificationDiagnostics identification_check(const MomentState& state) {
  if (state.n < 1) throw UsageError("identification_check: no observations");
  const double n = static_cast<double>(state.n);
  const MatrixXd s_vz = state.A / n;
  const MatrixXd s_zz = state.B / n;

  IdentificationDiagnostics out;
  Eigen::JacobiSVD<MatrixXd> svd(s_vz);
  out.max_singular_vz = svd.singularValues().maxCoeff();
  out.min_singular_vz = svd.singularValues().minCoeff();
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(s_zz, Eigen::EigenvaluesOnly);
  out.min_eigen_zz = eig.eigenvalues().minCoeff();

  if (detail::spd_condition(s_zz) < 1e15) {
    Eigen::LLT<MatrixXd> llt(s_zz);
    if (llt.info() == Eigen::Success) {
      MatrixXd g = s_vz * llt.solve(s_vz.transpose());
      out.condition = detail::spd_condition(0.5 * (g + g.transpose()));
    }
  }
  return out;
}

}  // namespace ivbandit
