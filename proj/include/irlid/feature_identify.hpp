#pragma once

// Identification under a linear reward class r_w(s, a) = w^T f_{s,a}.
//
// Two experts are stacked with the feature columns:
//   [ -(I - g1 T^1_a)   (I - g2 T^2_a)   0   ]  (v1)   ( l1 log pi^1 - l2 log pi^2 )
//   [ -(I - g1 T^1_a)        0          f_a  ]  (v2) = ( l1 log pi^1               )
//                                                (w )
// Full column rank 2|S| + d means exact recovery when the all-ones vector is
// not in the span of the features; with 1 in the span a constant remains free
// and the required rank drops to 2|S| + d - 1.

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>

#include "irlid/identify.hpp"

namespace irlid {

struct FeatureVerdict {
  RankReport rank_report;
  bool ones_in_span = false;
  std::size_t required_rank = 0;
  bool identifiable = false;
  bool exact = false;
};

/// Residual of the least-squares fit F w ~ 1 over the stacked features.
inline double ones_span_residual(const FeatureMap& fm) {
  const Vector ones = Vector::Ones(fm.stacked().rows());
  const Vector w = least_squares_min_norm(fm.stacked(), ones);
  return (fm.stacked() * w - ones).norm();
}

inline bool ones_in_feature_span(const FeatureMap& fm) {
  const double n = static_cast<double>(fm.n_states() * fm.n_actions());
  return ones_span_residual(fm) <= 1e-8 * std::sqrt(n);
}

inline void require_independent_features(const FeatureMap& fm, std::optional<double> rel_tol) {
  const std::size_t rank = svd_rank(fm.stacked(), rel_tol).effective_rank;
  if (rank != fm.d()) {
    throw ValidationError("feature columns are linearly dependent (rank " + std::to_string(rank) +
                          " < d = " + std::to_string(fm.d()) + ")");
  }
}

inline DenseMatrix build_feature_matrix(const SoftEnv& e1, const SoftEnv& e2, const FeatureMap& fm) {
  if (e1.n_states() != e2.n_states() || e1.n_actions() != e2.n_actions()) {
    throw ValidationError("build_feature_matrix: experts differ in |S| or |A|");
  }
  if (fm.n_states() != e1.n_states() || fm.n_actions() != e1.n_actions()) {
    throw ValidationError("build_feature_matrix: feature map does not match environment shape");
  }
  const auto n = static_cast<Eigen::Index>(e1.n_states());
  const auto half = static_cast<Eigen::Index>(e1.n_actions()) * n;
  const auto d = static_cast<Eigen::Index>(fm.d());
  DenseMatrix out = DenseMatrix::Zero(2 * half, 2 * n + d);
  detail::put_bellman_blocks(out, 0, 0, e1, -1.0);
  detail::put_bellman_blocks(out, 0, n, e2, 1.0);
  detail::put_bellman_blocks(out, half, 0, e1, -1.0);
  out.block(half, 2 * n, half, d) = fm.stacked();
  return out;
}

inline DenseMatrix build_feature_matrix(const ExpertObservation& e1, const ExpertObservation& e2,
                                        const FeatureMap& fm) {
  return build_feature_matrix(e1.env, e2.env, fm);
}

namespace detail {

inline FeatureVerdict feature_verdict(RankReport report, const FeatureMap& fm, std::size_t n_states) {
  FeatureVerdict v;
  v.ones_in_span = ones_in_feature_span(fm);
  v.required_rank = 2 * n_states + fm.d() - (v.ones_in_span ? 1 : 0);
  v.identifiable = report.effective_rank == v.required_rank;
  v.exact = v.identifiable && !v.ones_in_span;
  v.rank_report = std::move(report);
  return v;
}

}  // namespace detail

inline FeatureVerdict feature_identifiability_test(const SoftEnv& e1, const SoftEnv& e2,
                                                   const FeatureMap& fm,
                                                   std::optional<double> rel_tol = std::nullopt) {
  require_independent_features(fm, rel_tol);
  return detail::feature_verdict(svd_rank(build_feature_matrix(e1, e2, fm), rel_tol), fm,
                                 e1.n_states());
}

inline FeatureVerdict feature_identifiability_test(const ExpertObservation& e1,
                                                   const ExpertObservation& e2, const FeatureMap& fm,
                                                   std::optional<double> rel_tol = std::nullopt) {
  return feature_identifiability_test(e1.env, e2.env, fm, rel_tol);
}

struct WeightRecovery {
  Vector w;
  RewardTable reward;  // w^T f
  ValueVector v1;
  ValueVector v2;
  FeatureVerdict verdict;
  double relative_residual = 0.0;
  double consistency = 0.0;  // max |w^T f - reconstruction from expert 2|
};

inline WeightRecovery recover_weights(const ExpertObservation& e1, const ExpertObservation& e2,
                                      const FeatureMap& fm, const RecoveryOptions& options = {}) {
  require_independent_features(fm, options.rel_tol);
  const DenseMatrix a = build_feature_matrix(e1, e2, fm);
  const auto n = static_cast<Eigen::Index>(e1.env.n_states());
  const auto m = static_cast<Eigen::Index>(e1.env.n_actions());

  const DenseMatrix log1 = e1.env.lambda() * e1.policy.log_probs();
  const DenseMatrix log2 = e2.env.lambda() * e2.policy.log_probs();
  Vector b(2 * m * n);
  for (Eigen::Index act = 0; act < m; ++act) {
    b.segment(act * n, n) = log1.col(act) - log2.col(act);
    b.segment(m * n + act * n, n) = log1.col(act);
  }

  MinNormSolution sol = solve_min_norm(a, b, options.rel_tol);
  WeightRecovery out;
  out.verdict = detail::feature_verdict(std::move(sol.report), fm, e1.env.n_states());
  if (!out.verdict.identifiable && !options.allow_unidentifiable) {
    throw NotIdentifiableError("recover_weights: rank " +
                               std::to_string(out.verdict.rank_report.effective_rank) +
                               " differs from required " + std::to_string(out.verdict.required_rank));
  }
  const double b_norm = b.norm();
  const double residual = (a * sol.x - b).norm();
  out.relative_residual = b_norm > 0.0 ? residual / b_norm : residual;
  if (out.relative_residual > options.residual_guard) {
    throw InconsistentExpertsError(
        "recover_weights: experts inconsistent with a linear reward (relative residual " +
            std::to_string(out.relative_residual) + ")",
        out.relative_residual);
  }

  out.v1 = ValueVector(sol.x.head(n));
  out.v2 = ValueVector(sol.x.segment(n, n));
  out.w = sol.x.tail(static_cast<Eigen::Index>(fm.d()));
  out.reward = reward_from_features(fm, out.w);
  const RewardTable from_second = reward_from_policy_value(e2.env, e2.policy, out.v2);
  out.consistency = max_abs_distance(from_second, out.reward);
  return out;
}

}  // namespace irlid
