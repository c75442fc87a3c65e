#pragma once

// Two-stage least squares from running cross-moment sums.
//
// All estimators read raw (un-normalized) sums, so the returned `omega_hat`
// is (V' P[Z] V)^{-1} for the data accumulated so far and already carries the
// 1/n scale.

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ivbandit/errors.hpp"

namespace ivbandit {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// What to do when the IV Gram matrix Z'Z is rank deficient.
enum class IvRankPolicy {
  Strict,      // throw IvGramSingular
  ColumnSpace, // project onto col(Z) with the Moore-Penrose inverse of Z'Z
};

struct TslsOptions {
  // Ratio of extreme eigenvalues beyond which a Gram matrix counts as singular.
  double condition_threshold = 1e12;
  // Optional ridge added to the IV Gram matrix. Off by default.
  double ridge = 0.0;
  IvRankPolicy iv_rank = IvRankPolicy::Strict;
};

struct TslsFit {
  VectorXd alpha_hat;
  MatrixXd omega_hat;
  double sigma_hat = 0.0;
  double cond = 0.0;  // condition of A B^{-1} A'
};

/**
 * Running sums sufficient for 2SLS and OLS on (v_tilde, z, R) triples:
 *
 *   A = sum v z',  B = sum z z',  c = sum z R,
 *   Svv = sum v v',  Svr = sum v R,  Srr = sum R^2.
 */
class MomentState {
 public:
  MomentState() = default;

  MomentState(int regressor_dim, int iv_dim)
      : A(MatrixXd::Zero(regressor_dim, iv_dim)),
        B(MatrixXd::Zero(iv_dim, iv_dim)),
        c(VectorXd::Zero(iv_dim)),
        Svv(MatrixXd::Zero(regressor_dim, regressor_dim)),
        Svr(VectorXd::Zero(regressor_dim)) {
    if (regressor_dim < 1 || iv_dim < 1) throw UsageError("moment dimensions must be positive");
  }

  static MomentState from_batch(const MatrixXd& V, const MatrixXd& Z, const VectorXd& R) {
    if (V.rows() != Z.rows() || V.rows() != R.size()) throw UsageError("batch moments: row counts differ");
    MomentState s(static_cast<int>(V.cols()), static_cast<int>(Z.cols()));
    s.n = V.rows();
    s.A = V.transpose() * Z;
    s.B = Z.transpose() * Z;
    s.c = Z.transpose() * R;
    s.Svv = V.transpose() * V;
    s.Svr = V.transpose() * R;
    s.Srr = R.squaredNorm();
    return s;
  }

  int regressor_dim() const { return static_cast<int>(A.rows()); }
  int iv_dim() const { return static_cast<int>(A.cols()); }

  void update(const VectorXd& v_tilde, const VectorXd& z, double r) {
    if (v_tilde.size() != A.rows() || z.size() != A.cols())
      throw UsageError("moment update: expected regressor/IV lengths " + std::to_string(A.rows()) + "/" +
                       std::to_string(A.cols()) + ", got " + std::to_string(v_tilde.size()) + "/" +
                       std::to_string(z.size()));
    ++n;
    A.noalias() += v_tilde * z.transpose();
    B.noalias() += z * z.transpose();
    c.noalias() += r * z;
    Svv.noalias() += v_tilde * v_tilde.transpose();
    Svr.noalias() += r * v_tilde;
    Srr += r * r;
  }

  long n = 0;
  MatrixXd A;
  MatrixXd B;
  VectorXd c;
  MatrixXd Svv;
  VectorXd Svr;
  double Srr = 0.0;
};

inline MomentState update_moments(MomentState state, const VectorXd& v_tilde, const VectorXd& z, double r) {
  state.update(v_tilde, z, r);
  return state;
}

/// Stacked regressor (1(arm=0) v', ..., 1(arm=M-1) v')'.
inline VectorXd stacked_regressor(const VectorXd& v, int arm, int arms) {
  if (arm < 0 || arm >= arms) throw UsageError("stacked_regressor: arm out of range");
  VectorXd out = VectorXd::Zero(v.size() * arms);
  out.segment(static_cast<Eigen::Index>(arm) * v.size(), v.size()) = v;
  return out;
}

namespace detail {

// Ratio of extreme eigenvalues of a symmetric PSD matrix; +inf when singular.
inline double spd_condition(const MatrixXd& m) {
  if (m.size() == 0) return std::numeric_limits<double>::infinity();
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(m, Eigen::EigenvaluesOnly);
  const double hi = eig.eigenvalues().maxCoeff();
  const double lo = eig.eigenvalues().minCoeff();
  if (!(hi > 0.0) || !(lo > 0.0)) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

}  // namespace detail

/// sqrt((Srr - 2 a'Svr + a'Svv a) / n): the RMS residual of R on v_tilde at `alpha_hat`.
inline double residual_sd(const MomentState& state, const VectorXd& alpha_hat) {
  if (state.n < 1) throw UsageError("residual_sd: no observations");
  if (alpha_hat.size() != state.Svr.size()) throw UsageError("residual_sd: coefficient length mismatch");
  const double ssr = state.Srr - 2.0 * alpha_hat.dot(state.Svr) + alpha_hat.dot(state.Svv * alpha_hat);
  const double radicand = ssr / static_cast<double>(state.n);
  if (radicand < -1e-9) throw NumericalError("residual_sd: negative mean squared residual " + std::to_string(radicand));
  return std::sqrt(std::max(radicand, 0.0));
}

/**
 * alpha_hat = (A B^{-1} A')^{-1} A B^{-1} c and omega_hat = (A B^{-1} A')^{-1}.
 *
 * Both Gram matrices are factorized by Cholesky; B is never inverted
 * explicitly. Throws IdentificationFailure when A B^{-1} A' exceeds the
 * condition threshold. An ill-conditioned B throws IvGramSingular under
 * IvRankPolicy::Strict; under ColumnSpace the redundant instrument directions
 * are dropped, which leaves P[Z] (the projection onto col(Z)) unchanged.
 */
inline TslsFit tsls(const MomentState& state, const TslsOptions& options = {}) {
  MatrixXd gram_z = state.B;
  if (options.ridge > 0.0) gram_z.diagonal().array() += options.ridge;
  const double cond_z = detail::spd_condition(gram_z);

  MatrixXd w;  // B^{-1} A', or B^+ A' on a rank-deficient instrument set
  if (cond_z <= options.condition_threshold) {
    Eigen::LLT<MatrixXd> llt_z(gram_z);
    if (llt_z.info() != Eigen::Success) throw IvGramSingular(cond_z);
    w = llt_z.solve(state.A.transpose());
  } else if (options.iv_rank == IvRankPolicy::ColumnSpace) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(gram_z);
    const VectorXd& lambda = eig.eigenvalues();
    const double cutoff = std::max(lambda.maxCoeff(), 0.0) / options.condition_threshold;
    if (!(lambda.maxCoeff() > 0.0)) throw IvGramSingular(cond_z);
    VectorXd inv = VectorXd::Zero(lambda.size());
    for (Eigen::Index k = 0; k < lambda.size(); ++k)
      if (lambda(k) > cutoff) inv(k) = 1.0 / lambda(k);
    const MatrixXd& u = eig.eigenvectors();
    w = u * inv.asDiagonal() * (u.transpose() * state.A.transpose());
  } else {
    throw IvGramSingular(cond_z);
  }

  MatrixXd gram_v = state.A * w;
  gram_v = 0.5 * (gram_v + gram_v.transpose()).eval();
  const double cond_v = detail::spd_condition(gram_v);
  if (!(cond_v <= options.condition_threshold)) throw IdentificationFailure(cond_v);
  Eigen::LLT<MatrixXd> llt_v(gram_v);
  if (llt_v.info() != Eigen::Success) throw IdentificationFailure(cond_v);

  TslsFit fit;
  fit.alpha_hat = llt_v.solve(w.transpose() * state.c);
  fit.omega_hat = llt_v.solve(MatrixXd::Identity(gram_v.rows(), gram_v.cols()));
  fit.sigma_hat = residual_sd(state, fit.alpha_hat);
  fit.cond = cond_v;
  return fit;
}

/// Per-arm moments: arm i's state only sees periods in which arm i was pulled.
inline TslsFit arm_specific_tsls(std::span<const MomentState> arm_states, int arm, const TslsOptions& options = {}) {
  if (arm < 0 || arm >= static_cast<int>(arm_states.size())) throw UsageError("arm_specific_tsls: arm out of range");
  const MomentState& state = arm_states[static_cast<std::size_t>(arm)];
  if (state.n < state.iv_dim()) throw ArmUnderSampled(arm, state.n, state.iv_dim());
  return tsls(state, options);
}

inline TslsFit ols(const MomentState& state, const TslsOptions& options = {}) {
  const double cond = detail::spd_condition(state.Svv);
  if (!(cond <= options.condition_threshold)) throw SingularityError("regressor Gram singular", cond);
  Eigen::LLT<MatrixXd> llt(state.Svv);
  if (llt.info() != Eigen::Success) throw SingularityError("regressor Gram singular", cond);
  TslsFit fit;
  fit.alpha_hat = llt.solve(state.Svr);
  fit.omega_hat = llt.solve(MatrixXd::Identity(state.Svv.rows(), state.Svv.cols()));
  fit.sigma_hat = residual_sd(state, fit.alpha_hat);
  fit.cond = cond;
  return fit;
}

/// Z (Z'Z)^{-1} Z'. Intended for small n; the estimators never form it.
inline MatrixXd project(const MatrixXd& Z, double condition_threshold = 1e12) {
  const MatrixXd gram = Z.transpose() * Z;
  const double cond = detail::spd_condition(gram);
  if (!(cond <= condition_threshold)) throw SingularityError("projection: Z'Z singular", cond);
  return Z * gram.llt().solve(Z.transpose());
}

/// Pooled RMS residual over several arm-specific fits, divided by `total`
/// observations: sqrt(total^{-1} sum_i ||R_i - V_i alpha_i||^2).
inline double pooled_residual_sd(std::span<const MomentState> arm_states, std::span<const TslsFit> fits, long total) {
  if (arm_states.size() != fits.size()) throw UsageError("pooled_residual_sd: arm count mismatch");
  if (total < 1) throw UsageError("pooled_residual_sd: no observations");
  double ssr = 0.0;
  for (std::size_t i = 0; i < fits.size(); ++i) {
    if (arm_states[i].n == 0) continue;
    const double s = residual_sd(arm_states[i], fits[i].alpha_hat);
    ssr += s * s * static_cast<double>(arm_states[i].n);
  }
  return std::sqrt(ssr / static_cast<double>(total));
}

}  // namespace ivbandit
