#pragma once

// Identifiability of a shared reward from several soft-optimal experts.
//
// Matrices follow the recovery convention: for experts 1..n the block row of
// expert i (i >= 2) reads [-(I - g1 T^1_a), 0, ..., (I - gi T^i_a), ..., 0]
// stacked over actions, with right-hand side
//   b_i(s, a) = l1 log pi^1(a|s) - li log pi^i(a|s).
// The rank conditions are usually written with the first block column
// unnegated; negating a block column does not change the rank.

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "irlid/mdp.hpp"
#include "irlid/numkernel.hpp"
#include "irlid/soft_solver.hpp"

namespace irlid {

struct ExpertObservation {
  ExpertObservation(SoftEnv env_in, SoftPolicy policy_in)
      : env(std::move(env_in)), policy(std::move(policy_in)) {
    if (policy.n_states() != env.n_states() || policy.n_actions() != env.n_actions()) {
      throw ValidationError("ExpertObservation: policy shape does not match environment");
    }
  }

  SoftEnv env;
  SoftPolicy policy;
};

/// Solves the expert's problem exactly for the given reward.
inline ExpertObservation observe_expert(const SoftEnv& env, const RewardTable& reward,
                                        const SolverOptions& options = {}) {
  return ExpertObservation(env, soft_value_iteration(env, reward, options).policy);
}

struct IdentifiabilityVerdict {
  RankReport rank_report;
  std::size_t required_rank = 0;
  bool identifiable = false;
  std::size_t kernel_dimension_excess = 0;  // columns - rank - 1
};

inline IdentifiabilityVerdict make_verdict(RankReport report, std::size_t columns,
                                           std::size_t required_rank) {
  if (report.effective_rank >= columns) {
    throw NumericalError("rank " + std::to_string(report.effective_rank) + " of a " +
                         std::to_string(columns) +
                         "-column identifiability matrix: the constant-shift kernel was lost");
  }
  IdentifiabilityVerdict v;
  v.required_rank = required_rank;
  v.identifiable = report.effective_rank == required_rank;
  v.kernel_dimension_excess = columns - report.effective_rank - 1;
  v.rank_report = std::move(report);
  return v;
}

namespace detail {

using EnvRefs = std::vector<const SoftEnv*>;

inline EnvRefs env_refs(std::span<const SoftEnv> envs) {
  EnvRefs out;
  for (const auto& e : envs) out.push_back(&e);
  return out;
}

inline EnvRefs env_refs(std::span<const ExpertObservation> experts) {
  EnvRefs out;
  for (const auto& e : experts) out.push_back(&e.env);
  return out;
}

inline void require_common_shape(const EnvRefs& envs, const char* what) {
  for (const SoftEnv* e : envs) {
    if (e->n_states() != envs.front()->n_states() || e->n_actions() != envs.front()->n_actions()) {
      throw ValidationError(std::string(what) + ": experts differ in |S| or |A|");
    }
  }
}

/// Writes sign * (I - g T_a) for every action, rows from row0, columns from col0.
inline void put_bellman_blocks(DenseMatrix& out, Eigen::Index row0, Eigen::Index col0,
                               const SoftEnv& env, double sign) {
  const auto n = static_cast<Eigen::Index>(env.n_states());
  for (std::size_t a = 0; a < env.n_actions(); ++a) {
    auto block = out.block(row0 + static_cast<Eigen::Index>(a) * n, col0, n, n);
    block = (-sign * env.gamma()) * env.transitions().action(a);
    block.diagonal().array() += sign;
  }
}

inline DenseMatrix multi_matrix(const EnvRefs& envs) {
  if (envs.size() < 2) throw ValidationError("build_multi_matrix: need at least two experts");
  require_common_shape(envs, "build_multi_matrix");
  const auto n = static_cast<Eigen::Index>(envs.front()->n_states());
  const auto block_rows = static_cast<Eigen::Index>(envs.front()->n_actions()) * n;
  const auto count = static_cast<Eigen::Index>(envs.size());
  DenseMatrix out = DenseMatrix::Zero((count - 1) * block_rows, count * n);
  for (Eigen::Index i = 1; i < count; ++i) {
    const Eigen::Index row0 = (i - 1) * block_rows;
    put_bellman_blocks(out, row0, 0, *envs.front(), -1.0);
    put_bellman_blocks(out, row0, i * n, *envs[static_cast<std::size_t>(i)], 1.0);
  }
  return out;
}

}  // namespace detail

/// |A||S| x 2|S| matrix [-(I - g1 T^1_a), (I - g2 T^2_a)] stacked over a.
inline DenseMatrix build_pair_matrix(const SoftEnv& e1, const SoftEnv& e2) {
  return detail::multi_matrix({&e1, &e2});
}

inline DenseMatrix build_pair_matrix(const ExpertObservation& e1, const ExpertObservation& e2) {
  return build_pair_matrix(e1.env, e2.env);
}

/// A_n: ((n-1)|A||S|) x (n|S|), each later expert paired against the first.
inline DenseMatrix build_multi_matrix(std::span<const SoftEnv> envs) {
  return detail::multi_matrix(detail::env_refs(envs));
}

inline DenseMatrix build_multi_matrix(std::span<const ExpertObservation> experts) {
  return detail::multi_matrix(detail::env_refs(experts));
}

/// b_n: blocks l1 log pi^1 - li log pi^i, ordered action-major then state.
inline Vector build_log_ratio_rhs(std::span<const ExpertObservation> experts) {
  if (experts.size() < 2) throw ValidationError("build_log_ratio_rhs: need at least two experts");
  const auto n = static_cast<Eigen::Index>(experts.front().env.n_states());
  const auto m = static_cast<Eigen::Index>(experts.front().env.n_actions());
  const DenseMatrix first = experts.front().env.lambda() * experts.front().policy.log_probs();
  Vector b(static_cast<Eigen::Index>(experts.size() - 1) * m * n);
  for (std::size_t i = 1; i < experts.size(); ++i) {
    const DenseMatrix diff = first - experts[i].env.lambda() * experts[i].policy.log_probs();
    const Eigen::Index row0 = static_cast<Eigen::Index>(i - 1) * m * n;
    for (Eigen::Index a = 0; a < m; ++a) b.segment(row0 + a * n, n) = diff.col(a);
  }
  return b;
}

/// The always-present kernel direction (1/(1-g1) 1, ..., 1/(1-gn) 1). In the
/// recovery convention every block is positive; with the first block column
/// unnegated the first segment flips sign.
inline Vector constant_shift_kernel_vector(std::span<const SoftEnv> envs) {
  const auto n = static_cast<Eigen::Index>(envs.front().n_states());
  Vector k(static_cast<Eigen::Index>(envs.size()) * n);
  for (std::size_t i = 0; i < envs.size(); ++i) {
    k.segment(static_cast<Eigen::Index>(i) * n, n).setConstant(1.0 / (1.0 - envs[i].gamma()));
  }
  return k;
}

inline IdentifiabilityVerdict identifiability_test(std::span<const SoftEnv> envs,
                                                   std::optional<double> rel_tol = std::nullopt) {
  const DenseMatrix a = build_multi_matrix(envs);
  const std::size_t columns = static_cast<std::size_t>(a.cols());
  return make_verdict(svd_rank(a, rel_tol), columns, columns - 1);
}

inline IdentifiabilityVerdict identifiability_test(std::span<const ExpertObservation> experts,
                                                   std::optional<double> rel_tol = std::nullopt) {
  const DenseMatrix a = build_multi_matrix(experts);
  const std::size_t columns = static_cast<std::size_t>(a.cols());
  return make_verdict(svd_rank(a, rel_tol), columns, columns - 1);
}

/// Same dynamics, different discounts: rank of the stack (T_a1 - T_ai), i >= 2,
/// against |S| - 1.
inline IdentifiabilityVerdict same_dynamics_test(const TransitionModel& t,
                                                 std::optional<double> rel_tol = std::nullopt) {
  if (t.n_actions() < 2) {
    throw ValidationError("same_dynamics_test: need at least two actions");
  }
  const auto n = static_cast<Eigen::Index>(t.n_states());
  DenseMatrix stack(static_cast<Eigen::Index>(t.n_actions() - 1) * n, n);
  for (std::size_t a = 1; a < t.n_actions(); ++a) {
    stack.middleRows(static_cast<Eigen::Index>(a - 1) * n, n) = t.action(0) - t.action(a);
  }
  RankReport report = svd_rank(stack, rel_tol);
  // All-equal actions give the zero matrix; the relative tolerance then
  // collapses to 0 and the rank is 0 as expected.
  return make_verdict(std::move(report), static_cast<std::size_t>(n), static_cast<std::size_t>(n) - 1);
}

struct RecoveryOptions {
  std::optional<double> rel_tol;
  bool allow_unidentifiable = false;  // return a best-effort representative
  double residual_guard = 1e-6;       // on ||Ax - b|| / ||b||
  double consistency_guard = 1e-8;    // on per-expert reconstructions, scaled by max(1, |r|)
};

struct RewardRecovery {
  RewardTable reward;               // reconstructed from the first expert
  std::vector<ValueVector> values;  // v^1 .. v^n, min-norm solution
  IdentifiabilityVerdict verdict;
  double relative_residual = 0.0;
  double consistency = 0.0;  // max shift distance between per-expert reconstructions
};

/// Stacks the experts, solves for the value vectors in the minimum-norm
/// least-squares sense and reconstructs the reward from the first expert.
inline RewardRecovery recover_reward(std::span<const ExpertObservation> experts,
                                     const RecoveryOptions& options = {}) {
  const DenseMatrix a = build_multi_matrix(experts);
  const Vector b = build_log_ratio_rhs(experts);
  MinNormSolution sol = solve_min_norm(a, b, options.rel_tol);

  const std::size_t columns = static_cast<std::size_t>(a.cols());
  RewardRecovery out;
  out.verdict = make_verdict(std::move(sol.report), columns, columns - 1);
  if (!out.verdict.identifiable && !options.allow_unidentifiable) {
    throw NotIdentifiableError("recover_reward: rank " +
                               std::to_string(out.verdict.rank_report.effective_rank) +
                               " below required " + std::to_string(out.verdict.required_rank));
  }

  const double b_norm = b.norm();
  const double residual = (a * sol.x - b).norm();
  out.relative_residual = b_norm > 0.0 ? residual / b_norm : residual;
  if (out.relative_residual > options.residual_guard) {
    throw InconsistentExpertsError(
        "recover_reward: experts inconsistent with a common reward (relative residual " +
            std::to_string(out.relative_residual) + ")",
        out.relative_residual);
  }

  const auto n = static_cast<Eigen::Index>(experts.front().env.n_states());
  for (std::size_t i = 0; i < experts.size(); ++i) {
    out.values.emplace_back(sol.x.segment(static_cast<Eigen::Index>(i) * n, n));
  }
  out.reward = reward_from_policy_value(experts.front().env, experts.front().policy, out.values.front());
  const double scale = std::max(1.0, out.reward.values().cwiseAbs().maxCoeff());
  for (std::size_t i = 1; i < experts.size(); ++i) {
    const RewardTable ri = reward_from_policy_value(experts[i].env, experts[i].policy, out.values[i]);
    out.consistency = std::max(out.consistency, shift_distance(ri, out.reward));
  }
  if (out.consistency > options.consistency_guard * scale) {
    throw InconsistentExpertsError("recover_reward: per-expert reconstructions disagree by " +
                                       std::to_string(out.consistency),
                                   out.relative_residual);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Exogenous variables
//
// With a two-valued exogenous variable e in {e1, e2} that stays put with
// probability p_j^i = P(e' = e_j | e = e_j) under expert i, the vector
//   v = (0 on e1-states, 1 on e2-states | c1 on e1-states, c2 on e2-states)
// lies in the kernel of [I - g1 T^1_a, I - g2 T^2_a] once (c1, c2) solve
//   -g1 (1 - p_1^1) + c1 (1 - g2 p_1^2) - c2 g2 (1 - p_1^2) = 0
//   1 - g1 p_2^1 - c1 g2 (1 - p_2^2) + c2 (1 - g2 p_2^2) = 0.
// It is independent of the constant-shift vector, so the reward is not
// identifiable.

struct ExogenousStay {
  double first = 0.0;   // P(e' = e1 | e = e1)
  double second = 0.0;  // P(e' = e2 | e = e2)
};

struct ExogenousWitness {
  double c1 = 0.0;
  double c2 = 0.0;
  double determinant = 0.0;

  /// Witness in the unnegated convention; mask[s] is true for e2-states.
  Vector rank_condition_vector(const std::vector<bool>& mask) const {
    const auto n = static_cast<Eigen::Index>(mask.size());
    Vector v(2 * n);
    for (Eigen::Index s = 0; s < n; ++s) {
      const bool second = mask[static_cast<std::size_t>(s)];
      v(s) = second ? 1.0 : 0.0;
      v(n + s) = second ? c2 : c1;
    }
    return v;
  }

  /// Same witness for build_pair_matrix (first block negated).
  Vector pair_matrix_vector(const std::vector<bool>& mask) const {
    Vector v = rank_condition_vector(mask);
    v.head(static_cast<Eigen::Index>(mask.size())) *= -1.0;
    return v;
  }
};

inline ExogenousWitness exogenous_nullspace_witness(const std::array<ExogenousStay, 2>& stay,
                                                    double gamma1, double gamma2) {
  for (const auto& p : stay) {
    if (!(p.first >= 0.0 && p.first <= 1.0 && p.second >= 0.0 && p.second <= 1.0)) {
      throw ValidationError("exogenous_nullspace_witness: probabilities must lie in [0, 1]");
    }
  }
  if (!(gamma1 >= 0.0 && gamma1 < 1.0 && gamma2 >= 0.0 && gamma2 < 1.0)) {
    throw ValidationError("exogenous_nullspace_witness: discounts must lie in [0, 1)");
  }
  const double p11 = stay[0].first, p21 = stay[0].second;
  const double p12 = stay[1].first, p22 = stay[1].second;
  Eigen::Matrix2d m;
  m << 1.0 - gamma2 * p12, -gamma2 * (1.0 - p12),
      -gamma2 * (1.0 - p22), 1.0 - gamma2 * p22;
  const Eigen::Vector2d rhs(gamma1 * (1.0 - p11), -(1.0 - gamma1 * p21));
  ExogenousWitness w;
  // Equals (1 - g2)(1 + g2 - g2 p_1^2 - g2 p_2^2) > 0.
  w.determinant = m.determinant();
  const Eigen::Vector2d c = m.inverse() * rhs;
  w.c1 = c(0);
  w.c2 = c(1);
  return w;
}

/// Reads the stay probabilities of a two-valued partition of the states off a
/// model; empty when the partition is not exogenous (mass into the e2 block
/// varies across rows or actions by more than tol).
inline std::optional<ExogenousStay> exogenous_stay_probabilities(const TransitionModel& t,
                                                                 const std::vector<bool>& mask,
                                                                 double tol = 1e-12) {
  if (mask.size() != t.n_states()) {
    throw ValidationError("exogenous_stay_probabilities: mask length differs from |S|");
  }
  std::optional<double> stay_first, stay_second;
  for (std::size_t a = 0; a < t.n_actions(); ++a) {
    const DenseMatrix& m = t.action(a);
    for (std::size_t s = 0; s < mask.size(); ++s) {
      double mass_second = 0.0;
      for (std::size_t s2 = 0; s2 < mask.size(); ++s2) {
        if (mask[s2]) mass_second += m(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s2));
      }
      auto& slot = mask[s] ? stay_second : stay_first;
      const double stay = mask[s] ? mass_second : 1.0 - mass_second;
      if (!slot) {
        slot = stay;
      } else if (std::abs(*slot - stay) > tol) {
        return std::nullopt;
      }
    }
  }
  if (!stay_first || !stay_second) return std::nullopt;
  return ExogenousStay{*stay_first, *stay_second};
}

}  // namespace irlid
