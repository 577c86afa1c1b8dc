#pragma once

// Config-driven experiment runner behind the `irlid` CLI.
//
// A run is a pure function of (config, seed): run() returns the JSON report
// and the CSV plot files in memory, emit_plot_data() persists them. Wall time
// goes to a separate timing.json so report.json stays byte-identical.

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "irlid/envs.hpp"
#include "irlid/feature_identify.hpp"
#include "irlid/generalize.hpp"
#include "irlid/identify.hpp"
#include "irlid/robust.hpp"
#include "irlid/serialization.hpp"
#include "irlid/soft_solver.hpp"

namespace irlid::experiment {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

/// Invalid configuration; path is a JSON pointer to the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& path, const std::string& message)
      : std::runtime_error((path.empty() ? std::string("/") : path) + ": " + message), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

// ---------------------------------------------------------------------------
// Config access with path tracking

namespace detail {

inline std::string join(const std::string& path, const std::string& key) { return path + "/" + key; }

inline const json* find(const json& obj, const std::string& key) {
  auto it = obj.find(key);
  return it == obj.end() || it->is_null() ? nullptr : &*it;
}

inline double get_real(const json& obj, const std::string& key, const std::string& path, double fallback) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_number()) throw ConfigError(join(path, key), "expected a number");
  return v->get<double>();
}

inline std::optional<double> get_opt_real(const json& obj, const std::string& key, const std::string& path) {
  const json* v = find(obj, key);
  if (!v) return std::nullopt;
  if (!v->is_number()) throw ConfigError(join(path, key), "expected a number");
  return v->get<double>();
}

inline std::uint64_t get_count(const json& obj, const std::string& key, const std::string& path,
                               std::uint64_t fallback) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  const bool ok = v->is_number_unsigned() || (v->is_number_integer() && v->get<std::int64_t>() >= 0);
  if (!ok) throw ConfigError(join(path, key), "expected a non-negative integer");
  return v->get<std::uint64_t>();
}

inline std::string get_string(const json& obj, const std::string& key, const std::string& path,
                              const std::string& fallback) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_string()) throw ConfigError(join(path, key), "expected a string");
  return v->get<std::string>();
}

inline bool get_flag(const json& obj, const std::string& key, const std::string& path, bool fallback) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_boolean()) throw ConfigError(join(path, key), "expected true or false");
  return v->get<bool>();
}

template <std::size_t N>
std::array<double, N> get_reals(const json& obj, const std::string& key, const std::string& path,
                                std::array<double, N> fallback) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_array() || v->size() != N) {
    throw ConfigError(join(path, key), "expected an array of " + std::to_string(N) + " numbers");
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    if (!(*v)[i].is_number()) throw ConfigError(join(path, key) + "/" + std::to_string(i), "expected a number");
    out[i] = (*v)[i].get<double>();
  }
  return out;
}

inline void require_object(const json& obj, const std::string& path) {
  if (!obj.is_object()) throw ConfigError(path, "expected an object");
}

/// Rejects keys outside the allowed set so typos do not silently fall back.
inline void allow_keys(const json& obj, const std::string& path, std::initializer_list<const char*> keys) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return it.key() == k; })) {
      throw ConfigError(join(path, it.key()), "unknown key");
    }
  }
}

/// SplitMix64 finalizer; derives independent seeds from (run seed, repeat, slot).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t repeat, std::uint64_t slot) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (1 + repeat * 0x10001ULL + slot);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Configuration

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> kinds{"identify", "identify-linear", "generalize", "robust", "sweep"};
  return kinds;
}

struct ExperimentConfig {
  json raw;  // echo after overrides
  std::string kind;
  std::uint64_t seed = 0;
  std::optional<double> rank_tol;
  SolverOptions solver;
  json environment;           // base spec, also the source of the true reward
  std::vector<json> experts;  // base merged with each override
  std::optional<json> target;
  std::size_t repeats = 1;
  std::size_t trials = 100;      // robust
  std::size_t samples = 10000;   // robust, per action
  double delta = kDefaultDelta;  // robust
  std::size_t n_min = 2;         // sweep
  std::size_t n_max = 0;         // sweep; 0 means all experts
  std::filesystem::path base_dir;
};

/// Sets a dotted path ("experts.0.alpha") in a JSON document. The value is
/// parsed as JSON when possible and kept as a string otherwise.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("", "override '" + assignment + "' is not KEY=VALUE");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::string path;
  std::stringstream parts(key);
  std::string part;
  std::vector<std::string> segments;
  while (std::getline(parts, part, '.')) segments.push_back(part);
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const std::string& seg = segments[i];
    path += "/" + seg;
    if (seg.empty()) throw ConfigError(path, "empty path segment in override");
    json* next = nullptr;
    if (node->is_array()) {
      const bool numeric = std::all_of(seg.begin(), seg.end(), [](char c) { return c >= '0' && c <= '9'; });
      if (!numeric) throw ConfigError(path, "array index expected");
      const std::size_t idx = std::stoul(seg);
      if (idx >= node->size()) throw ConfigError(path, "array index out of range");
      next = &(*node)[idx];
    } else {
      if (node->is_null()) *node = json::object();
      if (!node->is_object()) throw ConfigError(path, "cannot descend into a scalar");
      next = &(*node)[seg];
    }
    node = next;
  }
  *node = std::move(value);
}

namespace detail {

inline void validate_env_spec(const json& spec, const std::string& path) {
  require_object(spec, path);
  const std::string type = get_string(spec, "type", path, "");
  if (type.empty()) throw ConfigError(join(path, "type"), "missing environment type");
  static const std::map<std::string, std::vector<const char*>> allowed{
      {"random", {"type", "n_states", "n_actions", "seed", "gamma", "lambda"}},
      {"gridworld",
       {"type", "side", "alpha", "gamma", "lambda", "action_penalties", "goal_reward", "state_reward",
        "state_reward_file"}},
      {"windy",
       {"type", "side", "alpha", "gamma", "lambda", "action_penalties", "goal_reward", "state_reward",
        "state_reward_file", "wind_dist", "wind_seed"}},
      {"strebulaev",
       {"type", "K", "delta", "rho", "sigma_eps", "grid_sigma_eps", "theta", "width_m", "gamma", "lambda", "w"}},
      {"two_value_exogenous",
       {"type", "n_endo", "n_actions", "stay_first", "stay_second", "seed", "gamma", "lambda"}},
      {"file", {"type", "path", "gamma", "lambda"}},
  };
  const auto it = allowed.find(type);
  if (it == allowed.end()) throw ConfigError(join(path, "type"), "unknown environment type '" + type + "'");
  static const std::vector<std::string> non_scalar{"type", "path", "state_reward", "state_reward_file",
                                                   "action_penalties", "wind_dist", "w"};
  for (auto kv = spec.begin(); kv != spec.end(); ++kv) {
    const auto& keys = it->second;
    if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return kv.key() == k; })) {
      throw ConfigError(join(path, kv.key()), "unknown key for environment type '" + type + "'");
    }
    // Scalar fields are type-checked here so bad expert overrides fail before any work starts.
    const bool scalar = std::find(non_scalar.begin(), non_scalar.end(), kv.key()) == non_scalar.end();
    if (scalar && !kv.value().is_number()) throw ConfigError(join(path, kv.key()), "expected a number");
  }
}

}  // namespace detail

/// Validates a parsed document and resolves expert and target specs.
inline ExperimentConfig parse_config(const json& doc, const std::filesystem::path& base_dir = {}) {
  using namespace detail;
  require_object(doc, "");
  allow_keys(doc, "",
             {"schema_version", "kind", "description", "seed", "rank_tol", "solver", "environment", "experts",
              "target", "repeats", "trials", "samples", "delta", "n_min", "n_max", "output_dir"});
  ExperimentConfig c;
  c.raw = doc;
  c.base_dir = base_dir;

  if (find(doc, "schema_version") && get_count(doc, "schema_version", "", 0) != kSchemaVersion) {
    throw ConfigError("/schema_version", "unsupported schema version");
  }
  c.kind = get_string(doc, "kind", "", "");
  const auto& kinds = experiment_kinds();
  if (std::find(kinds.begin(), kinds.end(), c.kind) == kinds.end()) {
    throw ConfigError("/kind", "expected one of identify, identify-linear, generalize, robust, sweep");
  }
  c.seed = get_count(doc, "seed", "", 0);
  c.rank_tol = get_opt_real(doc, "rank_tol", "");
  if (c.rank_tol && !(*c.rank_tol > 0.0 && *c.rank_tol < 1.0)) {
    throw ConfigError("/rank_tol", "must lie in (0, 1)");
  }
  if (const json* s = find(doc, "solver")) {
    require_object(*s, "/solver");
    allow_keys(*s, "/solver", {"tol", "max_iters"});
    c.solver.tol = get_real(*s, "tol", "/solver", c.solver.tol);
    c.solver.max_iters = get_count(*s, "max_iters", "/solver", c.solver.max_iters);
    if (!(c.solver.tol > 0.0)) throw ConfigError("/solver/tol", "must be positive");
  }

  const json* env = find(doc, "environment");
  if (!env) throw ConfigError("/environment", "missing environment");
  validate_env_spec(*env, "/environment");
  c.environment = *env;

  const json* experts = find(doc, "experts");
  if (!experts || !experts->is_array()) throw ConfigError("/experts", "expected an array of expert overrides");
  for (std::size_t i = 0; i < experts->size(); ++i) {
    const std::string path = "/experts/" + std::to_string(i);
    require_object((*experts)[i], path);
    if ((*experts)[i].contains("type")) throw ConfigError(path + "/type", "experts may not change the environment type");
    json merged = c.environment;
    merged.merge_patch((*experts)[i]);
    validate_env_spec(merged, path);
    c.experts.push_back(std::move(merged));
  }
  const std::size_t min_experts = 2;
  if (c.experts.size() < min_experts) {
    throw ConfigError("/experts", "need at least 2 experts, got " + std::to_string(c.experts.size()));
  }

  if (const json* t = find(doc, "target")) {
    require_object(*t, "/target");
    if (t->contains("type")) throw ConfigError("/target/type", "the target may not change the environment type");
    json merged = c.environment;
    merged.merge_patch(*t);
    validate_env_spec(merged, "/target");
    c.target = std::move(merged);
  }
  if ((c.kind == "generalize" || c.kind == "sweep") && !c.target) {
    throw ConfigError("/target", "required for kind '" + c.kind + "'");
  }
  if (c.kind == "identify-linear" && c.experts.size() != 2) {
    throw ConfigError("/experts", "identify-linear takes exactly 2 experts");
  }
  if (c.kind == "robust" && c.experts.size() != 2) {
    throw ConfigError("/experts", "robust takes exactly 2 experts");
  }

  c.repeats = get_count(doc, "repeats", "", 1);
  if (c.repeats == 0) throw ConfigError("/repeats", "must be at least 1");
  c.trials = get_count(doc, "trials", "", c.trials);
  if (c.trials == 0) throw ConfigError("/trials", "must be at least 1");
  c.samples = get_count(doc, "samples", "", c.samples);
  c.delta = get_real(doc, "delta", "", c.delta);
  if (!(c.delta > 0.0 && c.delta < 1.0)) throw ConfigError("/delta", "must lie in (0, 1)");
  c.n_min = get_count(doc, "n_min", "", 2);
  c.n_max = get_count(doc, "n_max", "", c.experts.size());
  if (c.kind == "sweep" && (c.n_min < 2 || c.n_max < c.n_min || c.n_max > c.experts.size())) {
    throw ConfigError("/n_max", "sweep needs 2 <= n_min <= n_max <= number of experts");
  }

  // Investment models share one z grid, scaled to the widest observed shock.
  if (get_string(c.environment, "type", "", "") == "strebulaev" && !find(c.environment, "grid_sigma_eps")) {
    double widest = 0.0;
    for (std::size_t i = 0; i < c.experts.size(); ++i) {
      widest = std::max(widest, get_real(c.experts[i], "sigma_eps", "/experts/" + std::to_string(i), 0.02));
    }
    for (auto& e : c.experts) e["grid_sigma_eps"] = widest;
    if (c.target) (*c.target)["grid_sigma_eps"] = widest;
    c.environment["grid_sigma_eps"] = widest;
  }
  return c;
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file '" + path.string() + "'");
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("", "'" + path.string() + "' is not valid JSON");
  return doc;
}

// ---------------------------------------------------------------------------
// Environment construction from specs

namespace detail {

/// side x side grid from CSV, '#' lines ignored.
inline DenseMatrix read_grid_csv(const std::filesystem::path& file, std::size_t side, const std::string& path) {
  std::ifstream in(file);
  if (!in) throw ConfigError(path, "cannot open '" + file.string() + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ConfigError(path, "non-numeric cell '" + cell + "' in '" + file.string() + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  const auto n = static_cast<Eigen::Index>(side);
  if (rows.size() != side) throw ConfigError(path, "reward grid must have " + std::to_string(side) + " rows");
  DenseMatrix g(n, n);
  for (std::size_t i = 0; i < side; ++i) {
    if (rows[i].size() != side) throw ConfigError(path, "reward grid row " + std::to_string(i) + " has wrong length");
    for (std::size_t j = 0; j < side; ++j) g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return g;
}

inline GridworldSpec grid_spec(const json& s, const std::string& path, const std::filesystem::path& base_dir) {
  GridworldSpec g;
  g.side = get_count(s, "side", path, g.side);
  g.alpha = get_real(s, "alpha", path, g.alpha);
  g.gamma = get_real(s, "gamma", path, g.gamma);
  g.lambda = get_real(s, "lambda", path, g.lambda);
  g.action_penalties = get_reals<kGridActions>(s, "action_penalties", path, g.action_penalties);
  if (g.side < 2) throw ConfigError(join(path, "side"), "must be at least 2");
  if (const json* sr = find(s, "state_reward")) {
    const auto n = static_cast<Eigen::Index>(g.side);
    if (!sr->is_array() || sr->size() != g.side) throw ConfigError(join(path, "state_reward"), "expected side rows");
    g.state_reward.resize(n, n);
    for (std::size_t i = 0; i < g.side; ++i) {
      const json& row = (*sr)[i];
      const std::string rp = join(path, "state_reward") + "/" + std::to_string(i);
      if (!row.is_array() || row.size() != g.side) throw ConfigError(rp, "expected side numbers");
      for (std::size_t j = 0; j < g.side; ++j) {
        if (!row[j].is_number()) throw ConfigError(rp + "/" + std::to_string(j), "expected a number");
        g.state_reward(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j].get<double>();
      }
    }
  } else if (const json* f = find(s, "state_reward_file")) {
    if (!f->is_string()) throw ConfigError(join(path, "state_reward_file"), "expected a path");
    std::filesystem::path file = f->get<std::string>();
    if (file.is_relative()) file = base_dir / file;
    g.state_reward = read_grid_csv(file, g.side, join(path, "state_reward_file"));
  } else {
    g.state_reward = default_state_reward(g.side, get_real(s, "goal_reward", path, 100.0));
  }
  return g;
}

inline StrebulaevSpec strebulaev_spec(const json& s, const std::string& path) {
  StrebulaevSpec p;
  p.K = get_count(s, "K", path, p.K);
  p.delta = get_real(s, "delta", path, p.delta);
  p.rho = get_real(s, "rho", path, p.rho);
  p.sigma_eps = get_real(s, "sigma_eps", path, p.sigma_eps);
  p.grid_sigma_eps = get_opt_real(s, "grid_sigma_eps", path);
  p.theta = get_real(s, "theta", path, p.theta);
  p.width_m = get_real(s, "width_m", path, p.width_m);
  p.gamma = get_real(s, "gamma", path, p.gamma);
  p.lambda = get_real(s, "lambda", path, p.lambda);
  p.w = get_reals<3>(s, "w", path, p.w);
  return p;
}

}  // namespace detail

/// Builds one environment. Unset seeds are derived from (seed, repeat, slot),
/// slot 0 being the base environment and slot i + 1 expert i.
inline BuiltEnv build_env(const json& spec, const std::string& path, std::uint64_t seed, std::uint64_t repeat,
                          std::uint64_t slot, const std::filesystem::path& base_dir = {}) {
  using namespace detail;
  const std::string type = get_string(spec, "type", path, "");
  try {
    if (type == "random") {
      RandomMDPSpec r;
      r.n_states = get_count(spec, "n_states", path, r.n_states);
      r.n_actions = get_count(spec, "n_actions", path, r.n_actions);
      r.seed = get_count(spec, "seed", path, mix_seed(seed, repeat, slot));
      r.gamma = get_real(spec, "gamma", path, r.gamma);
      r.lambda = get_real(spec, "lambda", path, r.lambda);
      return build_random_mdp(r);
    }
    if (type == "gridworld") return build_gridworld(grid_spec(spec, path, base_dir));
    if (type == "windy") {
      WindySpec w;
      w.base = grid_spec(spec, path, base_dir);
      if (find(spec, "wind_dist")) {
        w.wind_dist = get_reals<kGridActions>(spec, "wind_dist", path, w.wind_dist);
      } else {
        w.wind_dist = random_wind_distribution(get_count(spec, "wind_seed", path, mix_seed(seed, repeat, slot)));
      }
      return build_windy_gridworld(w);
    }
    if (type == "strebulaev") return build_strebulaev(strebulaev_spec(spec, path));
    if (type == "two_value_exogenous") {
      TwoValueExogenousSpec t;
      t.n_endo = get_count(spec, "n_endo", path, t.n_endo);
      t.n_actions = get_count(spec, "n_actions", path, t.n_actions);
      t.stay_first = get_real(spec, "stay_first", path, t.stay_first);
      t.stay_second = get_real(spec, "stay_second", path, t.stay_second);
      t.seed = get_count(spec, "seed", path, mix_seed(seed, repeat, slot));
      t.gamma = get_real(spec, "gamma", path, t.gamma);
      t.lambda = get_real(spec, "lambda", path, t.lambda);
      return build_two_value_exogenous(t);
    }
    if (type == "file") {
      std::filesystem::path file = get_string(spec, "path", path, "");
      if (file.empty()) throw ConfigError(join(path, "path"), "missing environment file");
      if (file.is_relative()) file = base_dir / file;
      json doc = read_json_file(file);
      if (find(spec, "gamma")) doc["gamma"] = get_real(spec, "gamma", path, 0.0);
      if (find(spec, "lambda")) doc["lambda"] = get_real(spec, "lambda", path, 0.0);
      return built_env_from_json(doc);
    }
  } catch (const ValidationError& e) {
    throw ConfigError(path, e.what());
  }
  throw ConfigError(join(path, "type"), "unknown environment type '" + type + "'");
}

// ---------------------------------------------------------------------------
// Reports and plot data

struct RunResult {
  json report;
  std::map<std::string, std::string> files;  // file name -> contents
};

inline std::string format_real(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// "# schema_version: 1", a header line, then one line per matrix row.
inline std::string matrix_csv(const DenseMatrix& m, const std::string& column_prefix) {
  std::string out = "# schema_version: " + std::to_string(kSchemaVersion) + "\n";
  for (Eigen::Index j = 0; j < m.cols(); ++j) out += (j ? "," : "") + column_prefix + std::to_string(j);
  out += "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out += (j ? "," : "") + format_real(m(i, j));
    out += "\n";
  }
  return out;
}

/// Action-mean reward projected onto the side x side grid; for windy layouts
/// (|S| = 4 side^2) the wind component is averaged out as well.
inline std::optional<DenseMatrix> grid_projection(const RewardTable& r, std::size_t side) {
  const auto cells = static_cast<Eigen::Index>(side * side);
  const Vector mean = r.values().rowwise().mean();
  if (mean.size() % cells != 0) return std::nullopt;
  const Eigen::Index layers = mean.size() / cells;
  const auto n = static_cast<Eigen::Index>(side);
  DenseMatrix g = DenseMatrix::Zero(n, n);
  for (Eigen::Index l = 0; l < layers; ++l)
    for (Eigen::Index p = 0; p < cells; ++p) g(p / n, p % n) += mean(l * cells + p) / static_cast<double>(layers);
  return g;
}

namespace detail {

inline json rank_json(const RankReport& r) {
  return {{"effective_rank", r.effective_rank}, {"tolerance_used", r.tolerance_used}, {"sigma2", r.sigma2},
          {"sigma_max", r.singular_values.empty() ? 0.0 : r.singular_values.front()},
          {"sigma_min", r.singular_values.empty() ? 0.0 : r.singular_values.back()}};
}

inline json verdict_json(const IdentifiabilityVerdict& v) {
  return {{"rank", v.rank_report.effective_rank}, {"required_rank", v.required_rank},
          {"identifiable", v.identifiable}, {"kernel_dimension_excess", v.kernel_dimension_excess},
          {"spectrum", rank_json(v.rank_report)}};
}

inline json verdict_json(const GeneralizabilityVerdict& v) {
  return {{"rank_left", v.rank_left}, {"rank_right", v.rank_right}, {"gap", v.gap},
          {"generalizable", v.generalizable}};
}

inline json verdict_json(const FeatureVerdict& v) {
  return {{"rank", v.rank_report.effective_rank}, {"required_rank", v.required_rank},
          {"ones_in_span", v.ones_in_span}, {"identifiable", v.identifiable}, {"exact", v.exact},
          {"spectrum", rank_json(v.rank_report)}};
}

inline json vector_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline std::optional<std::size_t> grid_side(const json& spec) {
  const std::string type = get_string(spec, "type", "", "");
  if (type != "gridworld" && type != "windy") return std::nullopt;
  return get_count(spec, "side", "", 10);
}

inline void add_reward_files(RunResult& out, const RewardTable& truth, const RewardTable& recovered,
                             const json& env_spec) {
  const RewardTable t = normalize_shift(truth);
  const RewardTable r = normalize_shift(recovered);
  out.files["reward_true.csv"] = matrix_csv(t.values(), "a");
  out.files["reward_recovered.csv"] = matrix_csv(r.values(), "a");
  out.files["reward_difference.csv"] = matrix_csv(r.values() - t.values(), "a");
  if (auto side = grid_side(env_spec)) {
    out.files["reward_grid_true.csv"] = matrix_csv(*grid_projection(t, *side), "c");
    out.files["reward_grid_recovered.csv"] = matrix_csv(*grid_projection(r, *side), "c");
  }
}

struct Experts {
  BuiltEnv base;
  std::vector<ExpertObservation> observed;
};

inline Experts build_experts(const ExperimentConfig& c, std::uint64_t repeat) {
  Experts out{build_env(c.environment, "/environment", c.seed, repeat, 0, c.base_dir), {}};
  for (std::size_t i = 0; i < c.experts.size(); ++i) {
    const std::string path = "/experts/" + std::to_string(i);
    BuiltEnv e = build_env(c.experts[i], path, c.seed, repeat, i + 1, c.base_dir);
    if (e.env.n_states() != out.base.env.n_states() || e.env.n_actions() != out.base.env.n_actions()) {
      throw ConfigError(path, "expert environment shape differs from the base environment");
    }
    out.observed.push_back(observe_expert(e.env, out.base.reward, c.solver));
  }
  return out;
}

inline bool shared_dynamics(const std::vector<ExpertObservation>& experts) {
  const auto& first = experts.front().env.transitions();
  for (const auto& e : experts) {
    for (std::size_t a = 0; a < first.n_actions(); ++a) {
      if (e.env.transitions().action(a) != first.action(a)) return false;
    }
  }
  return true;
}

inline std::size_t thread_cap() {
  std::size_t cap = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("IRLID_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) cap = static_cast<std::size_t>(v);
  }
  return cap;
}

/// Runs body(i) for i in [0, n) on up to thread_cap() threads; results are
/// stored by index, so the outcome does not depend on scheduling.
template <class Body>
void parallel_for(std::size_t n, Body body) {
  const std::size_t workers = std::min(thread_cap(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline json header(const ExperimentConfig& c) {
  return {{"schema_version", kSchemaVersion}, {"kind", c.kind}, {"seed", c.seed}, {"config", c.raw}};
}

}  // namespace detail

inline RunResult run_identify(const ExperimentConfig& c) {
  RunResult out;
  out.report = detail::header(c);
  json runs = json::array();
  std::size_t identifiable = 0;
  double worst_shift = 0.0;
  for (std::size_t rep = 0; rep < c.repeats; ++rep) {
    detail::Experts ex = detail::build_experts(c, rep);
    RecoveryOptions opts;
    opts.rel_tol = c.rank_tol;
    opts.allow_unidentifiable = true;
    const RewardRecovery rec = recover_reward(ex.observed, opts);
    const double shift = shift_distance(rec.reward, ex.base.reward);
    json r = detail::verdict_json(rec.verdict);
    r["repeat"] = rep;
    r["shift_distance"] = shift;
    r["relative_residual"] = rec.relative_residual;
    r["consistency"] = rec.consistency;
    if (detail::shared_dynamics(ex.observed)) {
      r["same_dynamics"] = detail::verdict_json(same_dynamics_test(ex.observed.front().env.transitions(), c.rank_tol));
    }
    if (rec.verdict.identifiable) ++identifiable;
    worst_shift = std::max(worst_shift, shift);
    runs.push_back(std::move(r));
    if (rep == 0) detail::add_reward_files(out, ex.base.reward, rec.reward, c.environment);
  }
  out.report["runs"] = std::move(runs);
  out.report["summary"] = {{"repeats", c.repeats},
                           {"identifiable_count", identifiable},
                           {"all_identifiable", identifiable == c.repeats},
                           {"max_shift_distance", worst_shift}};
  return out;
}

inline RunResult run_identify_linear(const ExperimentConfig& c) {
  RunResult out;
  out.report = detail::header(c);
  detail::Experts ex = detail::build_experts(c, 0);
  if (!ex.base.features) throw ConfigError("/environment/type", "identify-linear needs an environment with features");
  RecoveryOptions opts;
  opts.rel_tol = c.rank_tol;
  opts.allow_unidentifiable = true;
  const WeightRecovery wr = recover_weights(ex.observed[0], ex.observed[1], *ex.base.features, opts);
  const IdentifiabilityVerdict pair = identifiability_test(std::span<const ExpertObservation>(ex.observed), c.rank_tol);
  const Vector w_true = least_squares_min_norm(ex.base.features->stacked(), [&] {
    Vector flat(ex.base.reward.values().size());
    const auto n = ex.base.reward.values().rows();
    for (Eigen::Index a = 0; a < ex.base.reward.values().cols(); ++a) flat.segment(a * n, n) = ex.base.reward.values().col(a);
    return flat;
  }());
  out.report["feature_verdict"] = detail::verdict_json(wr.verdict);
  out.report["pair_verdict"] = detail::verdict_json(pair);
  out.report["w"] = detail::vector_json(wr.w);
  out.report["w_true"] = detail::vector_json(w_true);
  out.report["max_abs_w_error"] = (wr.w - w_true).cwiseAbs().maxCoeff();
  out.report["max_abs_reward_error"] = max_abs_distance(wr.reward, ex.base.reward);
  out.report["shift_distance"] = shift_distance(wr.reward, ex.base.reward);
  out.report["relative_residual"] = wr.relative_residual;
  out.report["consistency"] = wr.consistency;
  detail::add_reward_files(out, ex.base.reward, wr.reward, c.environment);
  return out;
}

inline RunResult run_generalize(const ExperimentConfig& c) {
  RunResult out;
  out.report = detail::header(c);
  detail::Experts ex = detail::build_experts(c, 0);
  const BuiltEnv target = build_env(*c.target, "/target", c.seed, 0, c.experts.size() + 1, c.base_dir);
  std::vector<SoftEnv> observed;
  for (const auto& e : ex.observed) observed.push_back(e.env);

  const IdentifiabilityVerdict id = identifiability_test(std::span<const SoftEnv>(observed), c.rank_tol);
  const GeneralizabilityVerdict gv = generalizability_test(observed, target.env, c.rank_tol);
  const TransferResult tr = transfer_policy(ex.observed, target.env, c.solver, c.rank_tol);
  const SoftSolution truth = soft_value_iteration(target.env, ex.base.reward, c.solver);
  const auto commuting = commuting_family_check(ex.observed.front().env.transitions());

  out.report["identifiability"] = detail::verdict_json(id);
  out.report["generalizability"] = detail::verdict_json(gv);
  out.report["policy_distance"] = policy_distance(tr.policy, truth.policy);
  out.report["shift_distance"] = shift_distance(tr.reward, ex.base.reward);
  out.report["commuting_action"] = commuting ? json(*commuting) : json(nullptr);
  detail::add_reward_files(out, ex.base.reward, tr.reward, c.environment);
  out.files["policy_target_true.csv"] = matrix_csv(truth.policy.probs(), "a");
  out.files["policy_target_recovered.csv"] = matrix_csv(tr.policy.probs(), "a");
  out.files["policy_difference.csv"] = matrix_csv(truth.policy.probs() - tr.policy.probs(), "a");
  return out;
}

inline RunResult run_robust(const ExperimentConfig& c) {
  RunResult out;
  out.report = detail::header(c);
  std::size_t violations = 0, covered = 0, certified_realized = 0, certified_bound = 0, true_identifiable = 0;
  std::string csv = "# schema_version: " + std::to_string(kSchemaVersion) +
                    "\ntrial,sigma2_true,sigma2_estimated,realized_epsilon,bernstein_epsilon,"
                    "certified_realized,certified_bernstein,true_identifiable\n";
  double eps_bound = 0.0;
  for (std::size_t t = 0; t < c.trials; ++t) {
    const BuiltEnv e1 = build_env(c.experts[0], "/experts/0", c.seed, t, 1, c.base_dir);
    const BuiltEnv e2 = build_env(c.experts[1], "/experts/1", c.seed, t, 2, c.base_dir);
    const EstimationReport r1 = estimate_transitions(e1.env.transitions(), c.samples, detail::mix_seed(c.seed, t, 101), c.delta);
    const EstimationReport r2 = estimate_transitions(e2.env.transitions(), c.samples, detail::mix_seed(c.seed, t, 102), c.delta);
    const SoftEnv h1(r1.estimated, e1.env.gamma(), e1.env.lambda());
    const SoftEnv h2(r2.estimated, e2.env.gamma(), e2.env.lambda());
    const double err1 = spectral_error(e1.env.transitions(), r1.estimated);
    const double err2 = spectral_error(e2.env.transitions(), r2.estimated);
    const double realized = std::max(err1, err2);
    eps_bound = r1.epsilon_bound;
    covered += (err1 <= r1.epsilon_bound) + (err2 <= r2.epsilon_bound);

    const std::vector<SoftEnv> truth{e1.env, e2.env};
    const IdentifiabilityVerdict exact = identifiability_test(std::span<const SoftEnv>(truth), c.rank_tol);
    const PerturbedVerdict with_realized = perturbed_identifiability_test(h1, h2, realized, c.rank_tol);
    const PerturbedVerdict with_bound = perturbed_identifiability_test(h1, h2, eps_bound, c.rank_tol);
    if (with_realized.certified && !exact.identifiable) ++violations;
    certified_realized += with_realized.certified;
    certified_bound += with_bound.certified;
    true_identifiable += exact.identifiable;
    csv += std::to_string(t) + "," + format_real(exact.rank_report.sigma2) + "," + format_real(with_realized.sigma2) +
           "," + format_real(realized) + "," + format_real(eps_bound) + "," +
           std::to_string(with_realized.certified) + "," + std::to_string(with_bound.certified) + "," +
           std::to_string(exact.identifiable) + "\n";
  }
  out.report["trials"] = c.trials;
  out.report["samples_per_action"] = c.samples;
  out.report["delta"] = c.delta;
  out.report["bernstein_epsilon"] = eps_bound;
  out.report["soundness_violations"] = violations;
  out.report["coverage"] = static_cast<double>(covered) / static_cast<double>(2 * c.trials);
  out.report["certified_with_realized_epsilon"] = certified_realized;
  out.report["certified_with_bernstein_epsilon"] = certified_bound;
  out.report["true_identifiable"] = true_identifiable;
  out.files["robust_trials.csv"] = std::move(csv);
  return out;
}

inline RunResult run_sweep(const ExperimentConfig& c) {
  RunResult out;
  out.report = detail::header(c);
  detail::Experts ex = detail::build_experts(c, 0);
  const BuiltEnv target = build_env(*c.target, "/target", c.seed, 0, c.experts.size() + 1, c.base_dir);
  const SoftSolution truth = soft_value_iteration(target.env, ex.base.reward, c.solver);

  const std::size_t count = c.n_max - c.n_min + 1;
  std::vector<json> rows(count);
  detail::parallel_for(count, [&](std::size_t k) {
    const std::size_t n = c.n_min + k;
    std::vector<SoftEnv> observed;
    for (std::size_t i = 0; i < n; ++i) observed.push_back(ex.observed[i].env);
    const IdentifiabilityVerdict id = identifiability_test(std::span<const SoftEnv>(observed), c.rank_tol);
    const GeneralizabilityVerdict gv = generalizability_test(observed, target.env, c.rank_tol);
    const TransferResult tr =
        transfer_policy(std::span<const ExpertObservation>(ex.observed.data(), n), target.env, c.solver, c.rank_tol);
    rows[k] = {{"n_experts", n},
               {"identifiability", detail::verdict_json(id)},
               {"generalizability", detail::verdict_json(gv)},
               {"policy_distance", policy_distance(tr.policy, truth.policy)}};
  });

  std::string csv = "# schema_version: " + std::to_string(kSchemaVersion) +
                    "\nn_experts,rank,kernel_dimension_excess,rank_left,rank_right,gap,generalizable,policy_distance\n";
  for (const auto& r : rows) {
    csv += std::to_string(r["n_experts"].get<std::size_t>()) + "," +
           std::to_string(r["identifiability"]["rank"].get<std::size_t>()) + "," +
           std::to_string(r["identifiability"]["kernel_dimension_excess"].get<std::size_t>()) + "," +
           std::to_string(r["generalizability"]["rank_left"].get<std::size_t>()) + "," +
           std::to_string(r["generalizability"]["rank_right"].get<std::size_t>()) + "," +
           std::to_string(r["generalizability"]["gap"].get<std::size_t>()) + "," +
           (r["generalizability"]["generalizable"].get<bool>() ? "1" : "0") + "," +
           format_real(r["policy_distance"].get<double>()) + "\n";
  }
  out.report["sweep"] = rows;
  out.files["sweep.csv"] = std::move(csv);
  return out;
}

inline RunResult run(const ExperimentConfig& c) {
  if (c.kind == "identify") return run_identify(c);
  if (c.kind == "identify-linear") return run_identify_linear(c);
  if (c.kind == "generalize") return run_generalize(c);
  if (c.kind == "robust") return run_robust(c);
  if (c.kind == "sweep") return run_sweep(c);
  throw ConfigError("/kind", "unknown experiment kind '" + c.kind + "'");
}

/// Writes via a temporary file in the same directory, then renames.
inline void write_atomic(const std::filesystem::path& path, const std::string& contents) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    f << contents;
    f.flush();
    if (!f) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline std::string report_text(const RunResult& r) { return r.report.dump(2) + "\n"; }

/// report.json plus every plot file under dir.
inline void emit_plot_data(const RunResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_atomic(dir / "report.json", report_text(r));
  for (const auto& [name, contents] : r.files) write_atomic(dir / name, contents);
}

}  // namespace irlid::experiment
