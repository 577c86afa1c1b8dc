#pragma once

// Transfer of rewards recovered from observed experts to an unseen
// environment (T^t, g_t). Every reward compatible with the observed experts
// yields the same soft-optimal policy in the target iff
//   rank(A_n) = rank([[A_n, 0], [-(I - g1 T^1_a), 0, ..., (I - gt T^t_a)]]) - |S|.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "irlid/identify.hpp"
#include "irlid/soft_solver.hpp"

namespace irlid {

struct GeneralizabilityVerdict {
  std::size_t rank_left = 0;
  std::size_t rank_right = 0;
  bool generalizable = false;
  std::size_t gap = 0;  // rank_right - |S| - rank_left
};

/// The observed A_n with the target block row and column appended.
inline DenseMatrix build_generalization_matrix(std::span<const SoftEnv> observed, const SoftEnv& target) {
  detail::EnvRefs refs = detail::env_refs(observed);
  refs.push_back(&target);
  return detail::multi_matrix(refs);
}

inline GeneralizabilityVerdict generalizability_test(std::span<const SoftEnv> observed,
                                                     const SoftEnv& target,
                                                     std::optional<double> rel_tol = std::nullopt) {
  const DenseMatrix right = build_generalization_matrix(observed, target);
  const auto n = static_cast<Eigen::Index>(target.n_states());
  const auto left_rows = right.rows() - static_cast<Eigen::Index>(target.n_actions()) * n;
  const auto left_cols = right.cols() - n;
  // Left-matrix tolerance is computed from its own shape, as svd_rank would.
  const std::size_t rank_left =
      svd_rank(right.topLeftCorner(left_rows, left_cols), rel_tol).effective_rank;
  const std::size_t rank_right = svd_rank(right, rel_tol).effective_rank;

  const std::size_t s = target.n_states();
  if (rank_right < rank_left + s) {
    throw NumericalError("generalizability_test: rank_right " + std::to_string(rank_right) +
                         " < rank_left + |S|; rank tolerance is inconsistent for this instance");
  }
  GeneralizabilityVerdict v;
  v.rank_left = rank_left;
  v.rank_right = rank_right;
  v.gap = rank_right - s - rank_left;
  v.generalizable = v.gap == 0;
  return v;
}

inline GeneralizabilityVerdict generalizability_test(const SoftEnv& e1, const SoftEnv& e2,
                                                     const SoftEnv& target,
                                                     std::optional<double> rel_tol = std::nullopt) {
  const std::vector<SoftEnv> observed{e1, e2};
  return generalizability_test(observed, target, rel_tol);
}

/// An index a0 whose T_a0 commutes with every T_a (max-norm 1e-10), if any.
inline std::optional<std::size_t> commuting_family_check(const TransitionModel& t, double tol = 1e-10) {
  for (std::size_t a0 = 0; a0 < t.n_actions(); ++a0) {
    bool commutes = true;
    for (std::size_t a = 0; a < t.n_actions() && commutes; ++a) {
      const DenseMatrix comm = t.action(a0) * t.action(a) - t.action(a) * t.action(a0);
      commutes = comm.cwiseAbs().maxCoeff() <= tol;
    }
    if (commutes) return a0;
  }
  return std::nullopt;
}

/// Max over states of the total-variation distance between policy rows.
inline double policy_distance(const SoftPolicy& p1, const SoftPolicy& p2) {
  if (p1.n_states() != p2.n_states() || p1.n_actions() != p2.n_actions()) {
    throw ValidationError("policy_distance: policies have different shapes");
  }
  return 0.5 * (p1.probs() - p2.probs()).cwiseAbs().rowwise().sum().maxCoeff();
}

struct TransferResult {
  SoftPolicy policy;   // soft-optimal in the target for the recovered reward
  RewardTable reward;  // recovered (best-effort) reward
  RewardRecovery recovery;
};

/// Recovers a compatible reward from the observed experts (a best-effort
/// representative when not identifiable) and solves the target with it.
inline TransferResult transfer_policy(std::span<const ExpertObservation> experts, const SoftEnv& target,
                                      const SolverOptions& solver = {},
                                      std::optional<double> rel_tol = std::nullopt) {
  RecoveryOptions options;
  options.rel_tol = rel_tol;
  options.allow_unidentifiable = true;
  RewardRecovery recovery = recover_reward(experts, options);
  SoftSolution solution = soft_value_iteration(target, recovery.reward, solver);
  return TransferResult{std::move(solution.policy), recovery.reward, std::move(recovery)};
}

/// A kernel direction of the observed system whose induced reward change
/// (I - g1 T^1_a) v1 is not of the form (I - gt T^t_a) v for any v.
struct GeneralizationWitness {
  Vector kernel_vector;        // in the recovery convention, length n|S|
  Vector reward_shift;         // (I - g1 T^1_a) v1 stacked action-major, length |A||S|
  double relative_residual = 0.0;  // distance of reward_shift from the target's range
};

/// Searches an orthonormal kernel basis of A_n; empty when every kernel
/// direction is absorbed by the target (the generalizable case).
inline std::optional<GeneralizationWitness> generalization_witness(std::span<const SoftEnv> observed,
                                                                   const SoftEnv& target,
                                                                   std::optional<double> rel_tol = std::nullopt,
                                                                   double threshold = 1e-8) {
  const DenseMatrix left = build_multi_matrix(observed);
  const DenseMatrix basis = kernel_basis(left, rel_tol);
  const SoftEnv& first = observed.front();
  const auto n = static_cast<Eigen::Index>(first.n_states());
  const auto m = static_cast<Eigen::Index>(first.n_actions());

  DenseMatrix target_stack(m * n, n);
  DenseMatrix first_stack(m * n, n);
  for (Eigen::Index a = 0; a < m; ++a) {
    target_stack.middleRows(a * n, n) = target.bellman_operator(static_cast<std::size_t>(a));
    first_stack.middleRows(a * n, n) = first.bellman_operator(static_cast<std::size_t>(a));
  }

  std::optional<GeneralizationWitness> best;
  for (Eigen::Index k = 0; k < basis.cols(); ++k) {
    const Vector shift = first_stack * basis.col(k).head(n);
    const double norm = shift.norm();
    if (norm == 0.0) continue;
    const Vector v = least_squares_min_norm(target_stack, shift, rel_tol);
    const double residual = (target_stack * v - shift).norm() / norm;
    if (residual > threshold && (!best || residual > best->relative_residual)) {
      best = GeneralizationWitness{basis.col(k), shift, residual};
    }
  }
  return best;
}

/// r + scale * reward_shift: still compatible with every observed expert.
inline RewardTable perturb_reward(const RewardTable& reward, const GeneralizationWitness& witness,
                                  double scale) {
  DenseMatrix r = reward.values();
  const auto n = r.rows();
  for (Eigen::Index a = 0; a < r.cols(); ++a) {
    r.col(a) += scale * witness.reward_shift.segment(a * n, n);
  }
  return RewardTable(std::move(r));
}

}  // namespace irlid
