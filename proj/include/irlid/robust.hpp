#pragma once

// Identifiability from estimated dynamics. With max_a ||T_a - That_a||_2 <= eps,
// singular values of the pair matrix move by at most eps * sqrt(2|A|) * max(g1, g2),
// so sigma_2(Ahat) above that threshold certifies rank 2|S| - 1 for the true pair.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "irlid/identify.hpp"

namespace irlid {

inline constexpr double kDefaultDelta = 0.05;

/// eps(N) = |S| sqrt(log(|S||A|/delta) / (2N)) + 2(|S|+1) log(|S||A|/delta) / (3N),
/// N being the number of samples per action.
inline double bernstein_bound(std::size_t n_states, std::size_t n_actions, std::size_t total_samples,
                              double delta = kDefaultDelta) {
  if (!(delta > 0.0 && delta < 1.0)) throw ValidationError("bernstein_bound: delta must lie in (0, 1)");
  if (total_samples == 0) throw ValidationError("bernstein_bound: no samples");
  const double s = static_cast<double>(n_states);
  const double n = static_cast<double>(total_samples);
  const double log_term = std::log(s * static_cast<double>(n_actions) / delta);
  return s * std::sqrt(log_term / (2.0 * n)) + 2.0 * (s + 1.0) * log_term / (3.0 * n);
}

struct EstimationReport {
  TransitionModel estimated;
  std::size_t samples_per_state = 0;  // N(s) = floor(N / |S|)
  std::size_t samples_used = 0;       // N(s) * |S| per action
  bool rounded = false;               // N was not divisible by |S|
  double epsilon_bound = 0.0;
  double delta = kDefaultDelta;
};

/// Draws N(s) next states from T(. | s, a) for every (s, a) and returns the
/// empirical frequencies.
inline EstimationReport estimate_transitions(const TransitionModel& truth, std::size_t total_samples,
                                             std::uint64_t seed, double delta = kDefaultDelta) {
  const std::size_t n = truth.n_states();
  const std::size_t per_state = total_samples / n;
  if (per_state == 0) {
    throw ValidationError("estimate_transitions: " + std::to_string(total_samples) +
                          " samples leave N(s) = 0 for " + std::to_string(n) + " states");
  }
  std::mt19937_64 rng(seed);
  std::vector<DenseMatrix> est;
  est.reserve(truth.n_actions());
  for (std::size_t a = 0; a < truth.n_actions(); ++a) {
    const DenseMatrix& t = truth.action(a);
    DenseMatrix counts = DenseMatrix::Zero(t.rows(), t.cols());
    for (Eigen::Index s = 0; s < t.rows(); ++s) {
      // Eigen rows are strided, discrete_distribution wants a contiguous range.
      std::vector<double> weights(static_cast<std::size_t>(t.cols()));
      for (Eigen::Index j = 0; j < t.cols(); ++j) weights[static_cast<std::size_t>(j)] = t(s, j);
      std::discrete_distribution<Eigen::Index> draw(weights.begin(), weights.end());
      for (std::size_t k = 0; k < per_state; ++k) counts(s, draw(rng)) += 1.0;
    }
    est.push_back(counts / static_cast<double>(per_state));
  }
  EstimationReport out;
  out.estimated = TransitionModel(std::move(est));
  out.samples_per_state = per_state;
  out.samples_used = per_state * n;
  out.rounded = out.samples_used != total_samples;
  out.delta = delta;
  out.epsilon_bound = bernstein_bound(n, truth.n_actions(), out.samples_used, delta);
  return out;
}

/// max_a ||T_a - That_a||_2
inline double spectral_error(const TransitionModel& t, const TransitionModel& estimate) {
  if (t.n_states() != estimate.n_states() || t.n_actions() != estimate.n_actions()) {
    throw ValidationError("spectral_error: models have different shapes");
  }
  double worst = 0.0;
  for (std::size_t a = 0; a < t.n_actions(); ++a) {
    worst = std::max(worst, spectral_norm(t.action(a) - estimate.action(a)));
  }
  return worst;
}

struct PerturbedVerdict {
  double sigma2 = 0.0;     // second smallest singular value of the estimated pair matrix
  double threshold = 0.0;  // eps * sqrt(2|A|) * max(g1, g2)
  double margin = 0.0;     // sigma2 - threshold
  bool certified = false;
  RankReport rank_report;
};

inline PerturbedVerdict perturbed_identifiability_test(const SoftEnv& e1, const SoftEnv& e2, double epsilon,
                                                       std::optional<double> rel_tol = std::nullopt) {
  if (!(epsilon >= 0.0)) throw ValidationError("perturbed_identifiability_test: epsilon must be >= 0");
  PerturbedVerdict v;
  v.rank_report = svd_rank(build_pair_matrix(e1, e2), rel_tol);
  v.sigma2 = v.rank_report.sigma2;
  v.threshold = epsilon * std::sqrt(2.0 * static_cast<double>(e1.n_actions())) *
                std::max(e1.gamma(), e2.gamma());
  v.margin = v.sigma2 - v.threshold;
  // At epsilon = 0 the test is the exact rank decision on the estimates.
  v.certified = epsilon == 0.0 ? v.rank_report.effective_rank == 2 * e1.n_states() - 1
                               : v.sigma2 > v.threshold;
  return v;
}

inline PerturbedVerdict perturbed_identifiability_test(const ExpertObservation& e1,
                                                       const ExpertObservation& e2, double epsilon,
                                                       std::optional<double> rel_tol = std::nullopt) {
  return perturbed_identifiability_test(e1.env, e2.env, epsilon, rel_tol);
}

}  // namespace irlid
