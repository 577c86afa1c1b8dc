#pragma once

// Tabular MDP value types. States and actions are dense indices
// 0..n_states-1 and 0..n_actions-1; environment builders own any mapping
// from structured states to indices.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "irlid/numkernel.hpp"

namespace irlid {

inline constexpr double kRowSumTolerance = 1e-12;
inline constexpr double kPolicyFloor = 1e-300;

/// Per-action transition matrices, T_a(s, s') = T(s' | s, a).
class TransitionModel {
 public:
  TransitionModel() = default;

  explicit TransitionModel(std::vector<DenseMatrix> per_action) : matrices_(std::move(per_action)) {
    if (matrices_.empty()) throw ValidationError("TransitionModel: no actions");
    const Eigen::Index n = matrices_.front().rows();
    if (n == 0) throw ValidationError("TransitionModel: no states");
    for (std::size_t a = 0; a < matrices_.size(); ++a) {
      const auto& m = matrices_[a];
      if (m.rows() != n || m.cols() != n) {
        throw ValidationError("TransitionModel: action " + std::to_string(a) +
                              " matrix is not " + std::to_string(n) + "x" + std::to_string(n));
      }
      if (!m.allFinite()) {
        throw ValidationError("TransitionModel: action " + std::to_string(a) +
                              " has non-finite entries");
      }
    }
  }

  std::size_t n_states() const { return matrices_.empty() ? 0 : static_cast<std::size_t>(matrices_.front().rows()); }
  std::size_t n_actions() const { return matrices_.size(); }

  const DenseMatrix& action(std::size_t a) const { return matrices_.at(a); }
  const std::vector<DenseMatrix>& matrices() const { return matrices_; }

  double prob(std::size_t s, std::size_t a, std::size_t next) const {
    return matrices_.at(a)(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(next));
  }

 private:
  std::vector<DenseMatrix> matrices_;
};

/// Every row whose sum deviates from 1 by more than 1e-12, and every entry
/// outside [0, 1]. Empty result means the model is valid.
inline std::vector<std::string> validate(const TransitionModel& model) {
  std::vector<std::string> violations;
  for (std::size_t a = 0; a < model.n_actions(); ++a) {
    const DenseMatrix& m = model.action(a);
    for (Eigen::Index s = 0; s < m.rows(); ++s) {
      const double sum = m.row(s).sum();
      if (std::abs(sum - 1.0) > kRowSumTolerance) {
        std::ostringstream msg;
        msg << "action " << a << " state " << s << ": row sum " << sum;
        violations.push_back(msg.str());
      }
      for (Eigen::Index t = 0; t < m.cols(); ++t) {
        const double p = m(s, t);
        if (p < 0.0 || p > 1.0) {
          std::ostringstream msg;
          msg << "action " << a << " state " << s << " next " << t << ": probability " << p;
          violations.push_back(msg.str());
        }
      }
    }
  }
  return violations;
}

/// One expert's decision problem: dynamics, discount and entropy temperature.
class SoftEnv {
 public:
  SoftEnv(TransitionModel transitions, double gamma, double lambda)
      : transitions_(std::move(transitions)), gamma_(gamma), lambda_(lambda) {
    if (!(gamma_ >= 0.0 && gamma_ < 1.0)) {
      throw ValidationError("SoftEnv: gamma must lie in [0, 1), got " + std::to_string(gamma_));
    }
    if (!(lambda_ > 0.0) || !std::isfinite(lambda_)) {
      throw ValidationError("SoftEnv: lambda must be positive, got " + std::to_string(lambda_));
    }
    auto violations = validate(transitions_);
    if (!violations.empty()) {
      throw ValidationError("SoftEnv: invalid transition model (" + violations.front() + ", " +
                            std::to_string(violations.size()) + " violation(s))");
    }
  }

  const TransitionModel& transitions() const { return transitions_; }
  double gamma() const { return gamma_; }
  double lambda() const { return lambda_; }
  std::size_t n_states() const { return transitions_.n_states(); }
  std::size_t n_actions() const { return transitions_.n_actions(); }

  /// I - gamma * T_a
  DenseMatrix bellman_operator(std::size_t a) const {
    const auto n = static_cast<Eigen::Index>(n_states());
    return DenseMatrix::Identity(n, n) - gamma_ * transitions_.action(a);
  }

 private:
  TransitionModel transitions_;
  double gamma_;
  double lambda_;
};

/// r(s, a) stored as an |S| x |A| table.
class RewardTable {
 public:
  RewardTable() = default;
  explicit RewardTable(DenseMatrix values) : values_(std::move(values)) {
    if (!values_.allFinite()) throw ValidationError("RewardTable: non-finite entries");
  }
  static RewardTable zeros(std::size_t n_states, std::size_t n_actions) {
    return RewardTable(DenseMatrix::Zero(static_cast<Eigen::Index>(n_states),
                                         static_cast<Eigen::Index>(n_actions)));
  }

  const DenseMatrix& values() const { return values_; }
  double operator()(std::size_t s, std::size_t a) const {
    return values_(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
  }
  std::size_t n_states() const { return static_cast<std::size_t>(values_.rows()); }
  std::size_t n_actions() const { return static_cast<std::size_t>(values_.cols()); }

 private:
  DenseMatrix values_;
};

/// Strictly positive stochastic policy pi(a | s), stored |S| x |A|.
/// Entries below the floor are clamped up to it and the policy is flagged.
class SoftPolicy {
 public:
  SoftPolicy() = default;
  explicit SoftPolicy(DenseMatrix probs) : probs_(std::move(probs)) {
    if (probs_.size() == 0) throw ValidationError("SoftPolicy: empty table");
    if (!probs_.allFinite()) throw ValidationError("SoftPolicy: non-finite entries");
    for (Eigen::Index s = 0; s < probs_.rows(); ++s) {
      const double sum = probs_.row(s).sum();
      if (std::abs(sum - 1.0) > kRowSumTolerance) {
        throw ValidationError("SoftPolicy: row " + std::to_string(s) + " sums to " +
                              std::to_string(sum));
      }
      for (Eigen::Index a = 0; a < probs_.cols(); ++a) {
        if (probs_(s, a) < 0.0) {
          throw ValidationError("SoftPolicy: negative probability in row " + std::to_string(s));
        }
        if (probs_(s, a) < kPolicyFloor) {
          probs_(s, a) = kPolicyFloor;
          clamped_ = true;
        }
      }
    }
  }

  const DenseMatrix& probs() const { return probs_; }
  double operator()(std::size_t s, std::size_t a) const {
    return probs_(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
  }
  std::size_t n_states() const { return static_cast<std::size_t>(probs_.rows()); }
  std::size_t n_actions() const { return static_cast<std::size_t>(probs_.cols()); }
  bool clamped() const { return clamped_; }

  DenseMatrix log_probs() const { return probs_.array().log().matrix(); }

 private:
  DenseMatrix probs_;
  bool clamped_ = false;
};

class ValueVector {
 public:
  ValueVector() = default;
  explicit ValueVector(Vector values) : values_(std::move(values)) {
    if (!values_.allFinite()) throw ValidationError("ValueVector: non-finite entries");
  }
  const Vector& values() const { return values_; }
  double operator()(std::size_t s) const { return values_(static_cast<Eigen::Index>(s)); }
  std::size_t size() const { return static_cast<std::size_t>(values_.size()); }

 private:
  Vector values_;
};

/// Feature vectors f_{s,a} in R^d, stored as the (|A||S|) x d stack of the
/// per-action blocks f_a (row a * |S| + s).
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(std::size_t n_states, std::size_t n_actions, DenseMatrix stacked)
      : n_states_(n_states), n_actions_(n_actions), stacked_(std::move(stacked)) {
    if (stacked_.cols() < 1) throw ValidationError("FeatureMap: d must be at least 1");
    if (static_cast<std::size_t>(stacked_.rows()) != n_states_ * n_actions_) {
      throw ValidationError("FeatureMap: expected " + std::to_string(n_states_ * n_actions_) +
                            " rows, got " + std::to_string(stacked_.rows()));
    }
    if (!stacked_.allFinite()) throw ValidationError("FeatureMap: non-finite entries");
  }

  std::size_t d() const { return static_cast<std::size_t>(stacked_.cols()); }
  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions() const { return n_actions_; }
  const DenseMatrix& stacked() const { return stacked_; }

  /// f_a, the |S| x d block of action a.
  DenseMatrix block(std::size_t a) const {
    return stacked_.middleRows(static_cast<Eigen::Index>(a * n_states_),
                               static_cast<Eigen::Index>(n_states_));
  }
  Vector at(std::size_t s, std::size_t a) const {
    return stacked_.row(static_cast<Eigen::Index>(a * n_states_ + s)).transpose();
  }

  FeatureMap scaled(double factor) const { return FeatureMap(n_states_, n_actions_, stacked_ * factor); }

 private:
  std::size_t n_states_ = 0;
  std::size_t n_actions_ = 0;
  DenseMatrix stacked_;
};

inline RewardTable reward_from_features(const FeatureMap& fm, const Vector& w) {
  if (static_cast<std::size_t>(w.size()) != fm.d()) {
    throw ValidationError("reward_from_features: w has length " + std::to_string(w.size()) +
                          ", features have d = " + std::to_string(fm.d()));
  }
  const Vector flat = fm.stacked() * w;
  DenseMatrix r(static_cast<Eigen::Index>(fm.n_states()), static_cast<Eigen::Index>(fm.n_actions()));
  for (std::size_t a = 0; a < fm.n_actions(); ++a) {
    r.col(static_cast<Eigen::Index>(a)) =
        flat.segment(static_cast<Eigen::Index>(a * fm.n_states()), static_cast<Eigen::Index>(fm.n_states()));
  }
  return RewardTable(std::move(r));
}

/// min_c max_{s,a} |r1 - r2 - c|, attained at the midpoint of the range of r1 - r2.
inline double shift_distance(const RewardTable& r1, const RewardTable& r2) {
  if (r1.n_states() != r2.n_states() || r1.n_actions() != r2.n_actions()) {
    throw ValidationError("shift_distance: reward tables have different shapes");
  }
  const DenseMatrix diff = r1.values() - r2.values();
  return 0.5 * (diff.maxCoeff() - diff.minCoeff());
}

/// Reward minus its mean, the canonical representative used in reports.
inline RewardTable normalize_shift(const RewardTable& r) {
  return RewardTable((r.values().array() - r.values().mean()).matrix());
}

inline double max_abs_distance(const RewardTable& r1, const RewardTable& r2) {
  if (r1.n_states() != r2.n_states() || r1.n_actions() != r2.n_actions()) {
    throw ValidationError("max_abs_distance: reward tables have different shapes");
  }
  return (r1.values() - r2.values()).cwiseAbs().maxCoeff();
}

}  // namespace irlid
