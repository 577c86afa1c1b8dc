#pragma once

// JSON form of a built environment, as emitted by `irlid gen-env`:
//   n_states, n_actions, gamma, lambda
//   transitions: one flat row-major |S|*|S| array per action
//   reward: flat array, entry s * |A| + a
//   features (optional): {"d": d, "values": flat row-major (|A||S|) x d}

#include <string>
#include <vector>

#include <json.hpp>

#include "irlid/envs.hpp"

namespace irlid {

namespace detail {

inline nlohmann::json flat_row_major(const DenseMatrix& m) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
  return out;
}

inline DenseMatrix from_flat(const nlohmann::json& arr, Eigen::Index rows, Eigen::Index cols,
                             const std::string& where) {
  if (!arr.is_array() || arr.size() != static_cast<std::size_t>(rows * cols)) {
    throw ValidationError(where + ": expected an array of " + std::to_string(rows * cols) + " numbers");
  }
  DenseMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      const auto& x = arr[static_cast<std::size_t>(i * cols + j)];
      if (!x.is_number()) throw ValidationError(where + ": non-numeric entry");
      m(i, j) = x.get<double>();
    }
  }
  return m;
}

inline std::size_t count_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number_unsigned() || j.at(key).get<std::size_t>() == 0) {
    throw ValidationError(std::string("environment json: '") + key + "' must be a positive integer");
  }
  return j.at(key).get<std::size_t>();
}

inline double real_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number()) {
    throw ValidationError(std::string("environment json: '") + key + "' must be a number");
  }
  return j.at(key).get<double>();
}

}  // namespace detail

inline nlohmann::json to_json(const BuiltEnv& built) {
  const SoftEnv& env = built.env;
  nlohmann::json j;
  j["n_states"] = env.n_states();
  j["n_actions"] = env.n_actions();
  j["gamma"] = env.gamma();
  j["lambda"] = env.lambda();
  nlohmann::json t = nlohmann::json::array();
  for (const auto& m : env.transitions().matrices()) t.push_back(detail::flat_row_major(m));
  j["transitions"] = std::move(t);
  j["reward"] = detail::flat_row_major(built.reward.values());
  if (built.features) {
    j["features"] = {{"d", built.features->d()}, {"values", detail::flat_row_major(built.features->stacked())}};
  }
  return j;
}

inline BuiltEnv built_env_from_json(const nlohmann::json& j) {
  const std::size_t n = detail::count_field(j, "n_states");
  const std::size_t m = detail::count_field(j, "n_actions");
  const auto ni = static_cast<Eigen::Index>(n);
  const auto mi = static_cast<Eigen::Index>(m);
  if (!j.contains("transitions") || !j.at("transitions").is_array() || j.at("transitions").size() != m) {
    throw ValidationError("environment json: 'transitions' must hold one array per action");
  }
  std::vector<DenseMatrix> t;
  for (std::size_t a = 0; a < m; ++a) {
    t.push_back(detail::from_flat(j.at("transitions")[a], ni, ni, "transitions[" + std::to_string(a) + "]"));
  }
  SoftEnv env(TransitionModel(std::move(t)), detail::real_field(j, "gamma"), detail::real_field(j, "lambda"));
  if (!j.contains("reward")) throw ValidationError("environment json: missing 'reward'");
  RewardTable reward(detail::from_flat(j.at("reward"), ni, mi, "reward"));
  std::optional<FeatureMap> features;
  if (j.contains("features")) {
    const auto& f = j.at("features");
    const std::size_t d = detail::count_field(f, "d");
    features = FeatureMap(n, m, detail::from_flat(f.at("values"), ni * mi, static_cast<Eigen::Index>(d), "features.values"));
  }
  return BuiltEnv{std::move(env), std::move(reward), std::move(features)};
}

}  // namespace irlid
