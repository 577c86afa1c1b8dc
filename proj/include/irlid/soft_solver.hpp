#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "irlid/mdp.hpp"

namespace irlid {

struct SolverOptions {
  double tol = 1e-12;
  std::size_t max_iters = 100000;
};

struct SoftSolution {
  ValueVector value;
  SoftPolicy policy;
  std::size_t iterations = 0;
  double residual = 0.0;  // ||B(V) - V||_inf at the returned V
};

namespace detail {

inline void require_shapes(const SoftEnv& env, std::size_t n_states, std::size_t n_actions,
                           const char* what) {
  if (n_states != env.n_states() || n_actions != env.n_actions()) {
    throw ValidationError(std::string(what) + ": table is " + std::to_string(n_states) + "x" +
                          std::to_string(n_actions) + ", environment is " +
                          std::to_string(env.n_states()) + "x" + std::to_string(env.n_actions()));
  }
}

/// Q(s, a) = r(s, a) + gamma * sum_s' T(s'|s,a) V(s')
inline DenseMatrix soft_q(const SoftEnv& env, const DenseMatrix& r, const Vector& v) {
  DenseMatrix q = r;
  for (std::size_t a = 0; a < env.n_actions(); ++a) {
    q.col(static_cast<Eigen::Index>(a)).noalias() += env.gamma() * (env.transitions().action(a) * v);
  }
  return q;
}

/// lambda * log sum_a exp(Q(s, a) / lambda), row-wise, with max subtraction.
inline Vector soft_max_rows(const DenseMatrix& q, double lambda) {
  const Vector row_max = q.rowwise().maxCoeff();
  const Vector sums = ((q.colwise() - row_max) / lambda).array().exp().rowwise().sum();
  return row_max + lambda * sums.array().log().matrix();
}

}  // namespace detail

/// The soft Bellman operator B(V)(s) = lambda log sum_a exp((r + gamma T_a V)(s) / lambda).
inline Vector soft_bellman(const SoftEnv& env, const RewardTable& r, const Vector& v) {
  return detail::soft_max_rows(detail::soft_q(env, r.values(), v), env.lambda());
}

inline double bellman_residual(const SoftEnv& env, const RewardTable& r, const Vector& v) {
  return (soft_bellman(env, r, v) - v).cwiseAbs().maxCoeff();
}

/// Boltzmann policy pi(a|s) proportional to exp(Q(s,a) / lambda) for the given V.
inline SoftPolicy soft_policy(const SoftEnv& env, const RewardTable& r, const Vector& v) {
  const DenseMatrix q = detail::soft_q(env, r.values(), v);
  const Vector lse = detail::soft_max_rows(q, env.lambda());
  DenseMatrix probs = ((q.colwise() - lse) / env.lambda()).array().exp().matrix();
  probs.array().colwise() /= probs.rowwise().sum().array();
  return SoftPolicy(std::move(probs));
}

/// Fixed-point iteration of the soft Bellman operator from V0 = 0.
inline SoftSolution soft_value_iteration(const SoftEnv& env, const RewardTable& r,
                                         const SolverOptions& options = {}) {
  detail::require_shapes(env, r.n_states(), r.n_actions(), "soft_value_iteration");
  if (!(options.tol > 0.0)) throw ValidationError("soft_value_iteration: tol must be positive");

  Vector v = Vector::Zero(static_cast<Eigen::Index>(env.n_states()));
  double residual = 0.0;
  for (std::size_t it = 0; it < options.max_iters; ++it) {
    Vector next = soft_bellman(env, r, v);
    residual = (next - v).cwiseAbs().maxCoeff();
    v = std::move(next);
    if (residual <= options.tol) {
      // B is a gamma-contraction, so the new iterate has residual <= gamma * tol;
      // measure it anyway so the reported figure belongs to the returned V.
      SoftSolution out;
      out.residual = bellman_residual(env, r, v);
      out.value = ValueVector(v);
      out.policy = soft_policy(env, r, v);
      out.iterations = it + 1;
      return out;
    }
  }
  throw ConvergenceError("soft_value_iteration: no convergence after " +
                             std::to_string(options.max_iters) + " iterations (residual " +
                             std::to_string(residual) + ")",
                         residual, options.max_iters);
}

/// The unique reward for which pi is soft-optimal with value v:
/// r(s,a) = lambda log pi(a|s) - gamma sum_s' T(s'|s,a) v(s') + v(s).
inline RewardTable reward_from_policy_value(const SoftEnv& env, const SoftPolicy& pi,
                                            const ValueVector& v) {
  detail::require_shapes(env, pi.n_states(), pi.n_actions(), "reward_from_policy_value");
  if (v.size() != env.n_states()) {
    throw ValidationError("reward_from_policy_value: value vector has wrong length");
  }
  if ((pi.probs().array() <= 0.0).any()) {
    throw ValidationError("reward_from_policy_value: policy has a zero entry");
  }
  DenseMatrix r = env.lambda() * pi.log_probs();
  for (std::size_t a = 0; a < env.n_actions(); ++a) {
    r.col(static_cast<Eigen::Index>(a)).noalias() +=
        v.values() - env.gamma() * (env.transitions().action(a) * v.values());
  }
  return RewardTable(std::move(r));
}

}  // namespace irlid
