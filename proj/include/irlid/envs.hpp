#pragma once

// Environment builders. All of them are pure functions of their spec (and
// seed, where random) and emit models that pass validate().

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "irlid/mdp.hpp"

namespace irlid {

/// A built environment: dynamics with discount and temperature, the true
/// reward, and features when the reward class is linear.
struct BuiltEnv {
  SoftEnv env;
  RewardTable reward;
  std::optional<FeatureMap> features;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

/// Rescales each row to sum to 1 without letting any entry exceed 1.
inline void normalize_rows(DenseMatrix& m) {
  for (Eigen::Index s = 0; s < m.rows(); ++s) {
    m.row(s) /= m.row(s).sum();
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(s, j) = std::min(m(s, j), 1.0);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Random MDPs

struct RandomMDPSpec {
  std::size_t n_states = 18;
  std::size_t n_actions = 5;
  std::uint64_t seed = 0;
  double gamma = 0.9;
  double lambda = 1.0;
};

/// Rows i.i.d. Uniform(0, 1) then normalized; rewards i.i.d. Uniform(0, 1).
inline BuiltEnv build_random_mdp(const RandomMDPSpec& spec) {
  detail::require(spec.n_states >= 1 && spec.n_actions >= 1, "random mdp: counts must be >= 1");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const auto n = static_cast<Eigen::Index>(spec.n_states);
  const auto m = static_cast<Eigen::Index>(spec.n_actions);
  std::vector<DenseMatrix> t;
  for (Eigen::Index a = 0; a < m; ++a) {
    DenseMatrix ta(n, n);
    // Row-major fill order keeps the draw sequence independent of storage.
    for (Eigen::Index s = 0; s < n; ++s)
      for (Eigen::Index j = 0; j < n; ++j) ta(s, j) = unif(rng);
    detail::normalize_rows(ta);
    t.push_back(std::move(ta));
  }
  DenseMatrix r(n, m);
  for (Eigen::Index s = 0; s < n; ++s)
    for (Eigen::Index a = 0; a < m; ++a) r(s, a) = unif(rng);
  return BuiltEnv{SoftEnv(TransitionModel(std::move(t)), spec.gamma, spec.lambda), RewardTable(std::move(r)),
                  std::nullopt};
}

// ---------------------------------------------------------------------------
// Gridworld
//
// Actions are up, down, left, right; state index is row * side + col, row 0
// at the top. The deterministic kernel keeps the agent in place when a move
// would leave the grid; U is uniform over the in-grid 4-neighbours.

inline constexpr std::size_t kGridActions = 4;
enum GridAction : std::size_t { kUp = 0, kDown = 1, kLeft = 2, kRight = 3 };

struct GridworldSpec {
  std::size_t side = 10;
  double alpha = 0.0;
  DenseMatrix state_reward;  // side x side; empty means goal corner +100
  std::array<double, kGridActions> action_penalties{0.0, -20.0, -10.0, -30.0};
  double gamma = 0.9;
  double lambda = 1.0;
};

inline DenseMatrix default_state_reward(std::size_t side, double goal = 100.0) {
  const auto n = static_cast<Eigen::Index>(side);
  DenseMatrix g = DenseMatrix::Zero(n, n);
  g(n - 1, n - 1) = goal;
  return g;
}

/// Destination of a deterministic move, staying put at the boundary.
inline std::size_t grid_step(std::size_t side, std::size_t pos, std::size_t action) {
  const std::size_t row = pos / side, col = pos % side;
  switch (action) {
    case kUp: return row > 0 ? pos - side : pos;
    case kDown: return row + 1 < side ? pos + side : pos;
    case kLeft: return col > 0 ? pos - 1 : pos;
    case kRight: return col + 1 < side ? pos + 1 : pos;
    default: throw ValidationError("grid_step: action out of range");
  }
}

inline DenseMatrix grid_deterministic(std::size_t side, std::size_t action) {
  const auto n = static_cast<Eigen::Index>(side * side);
  DenseMatrix t = DenseMatrix::Zero(n, n);
  for (std::size_t p = 0; p < side * side; ++p) {
    t(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(grid_step(side, p, action))) = 1.0;
  }
  return t;
}

inline DenseMatrix grid_uniform_neighbours(std::size_t side) {
  const auto n = static_cast<Eigen::Index>(side * side);
  DenseMatrix u = DenseMatrix::Zero(n, n);
  for (std::size_t p = 0; p < side * side; ++p) {
    std::vector<std::size_t> nb;
    for (std::size_t a = 0; a < kGridActions; ++a) {
      const std::size_t q = grid_step(side, p, a);
      if (q != p) nb.push_back(q);
    }
    for (std::size_t q : nb) {
      u(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q)) = 1.0 / static_cast<double>(nb.size());
    }
  }
  return u;
}

/// T_alpha = (1 - alpha) T_det + alpha U for every action.
inline std::vector<DenseMatrix> grid_transitions(std::size_t side, double alpha) {
  const DenseMatrix u = grid_uniform_neighbours(side);
  std::vector<DenseMatrix> t;
  for (std::size_t a = 0; a < kGridActions; ++a) {
    DenseMatrix ta = (1.0 - alpha) * grid_deterministic(side, a) + alpha * u;
    detail::normalize_rows(ta);
    t.push_back(std::move(ta));
  }
  return t;
}

inline DenseMatrix grid_reward(const GridworldSpec& spec) {
  const DenseMatrix state =
      spec.state_reward.size() == 0 ? default_state_reward(spec.side) : spec.state_reward;
  const auto n = static_cast<Eigen::Index>(spec.side * spec.side);
  DenseMatrix r(n, static_cast<Eigen::Index>(kGridActions));
  for (Eigen::Index p = 0; p < n; ++p) {
    const double base = state(p / static_cast<Eigen::Index>(spec.side), p % static_cast<Eigen::Index>(spec.side));
    for (std::size_t a = 0; a < kGridActions; ++a) r(p, static_cast<Eigen::Index>(a)) = base + spec.action_penalties[a];
  }
  return r;
}

inline void validate_grid_spec(const GridworldSpec& spec) {
  detail::require(spec.side >= 2, "gridworld: side must be >= 2");
  detail::require(spec.alpha >= 0.0 && spec.alpha <= 1.0, "gridworld: alpha must lie in [0, 1]");
  if (spec.state_reward.size() != 0) {
    detail::require(spec.state_reward.rows() == static_cast<Eigen::Index>(spec.side) &&
                        spec.state_reward.cols() == static_cast<Eigen::Index>(spec.side),
                    "gridworld: state_reward must be side x side");
  }
}

inline BuiltEnv build_gridworld(const GridworldSpec& spec) {
  validate_grid_spec(spec);
  return BuiltEnv{SoftEnv(TransitionModel(grid_transitions(spec.side, spec.alpha)), spec.gamma, spec.lambda),
                  RewardTable(grid_reward(spec)), std::nullopt};
}

// ---------------------------------------------------------------------------
// Windy gridworld
//
// State index w * side^2 + pos. From (w, p) under action a the agent moves by
// T_alpha, is then pushed one deterministic step in direction w, and the next
// wind is drawn from P_wind independently of everything else.

struct WindySpec {
  GridworldSpec base;
  std::array<double, kGridActions> wind_dist{0.25, 0.25, 0.25, 0.25};
};

/// |N(0, 1)| entries normalized to a distribution.
inline std::array<double, kGridActions> random_wind_distribution(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::array<double, kGridActions> w{};
  double total = 0.0;
  for (double& x : w) {
    x = std::abs(normal(rng));
    total += x;
  }
  for (double& x : w) x /= total;
  return w;
}

inline BuiltEnv build_windy_gridworld(const WindySpec& spec) {
  validate_grid_spec(spec.base);
  double total = 0.0;
  for (double p : spec.wind_dist) {
    detail::require(p >= 0.0, "windy gridworld: wind_dist entries must be >= 0");
    total += p;
  }
  detail::require(std::abs(total - 1.0) <= 1e-12, "windy gridworld: wind_dist must sum to 1");

  const std::size_t side = spec.base.side;
  const auto cells = static_cast<Eigen::Index>(side * side);
  const auto n = static_cast<Eigen::Index>(kGridActions) * cells;
  const std::vector<DenseMatrix> step = grid_transitions(side, spec.base.alpha);

  std::vector<DenseMatrix> t;
  for (std::size_t a = 0; a < kGridActions; ++a) {
    DenseMatrix ta = DenseMatrix::Zero(n, n);
    for (std::size_t w = 0; w < kGridActions; ++w) {
      const DenseMatrix moved = step[a] * grid_deterministic(side, w);  // positions after wind
      for (std::size_t w_next = 0; w_next < kGridActions; ++w_next) {
        ta.block(static_cast<Eigen::Index>(w) * cells, static_cast<Eigen::Index>(w_next) * cells, cells, cells) =
            spec.wind_dist[w_next] * moved;
      }
    }
    detail::normalize_rows(ta);
    t.push_back(std::move(ta));
  }

  const DenseMatrix base_r = grid_reward(spec.base);
  DenseMatrix r(n, static_cast<Eigen::Index>(kGridActions));
  for (std::size_t w = 0; w < kGridActions; ++w) r.middleRows(static_cast<Eigen::Index>(w) * cells, cells) = base_r;
  return BuiltEnv{SoftEnv(TransitionModel(std::move(t)), spec.base.gamma, spec.base.lambda),
                  RewardTable(std::move(r)), std::nullopt};
}

/// True for states whose current wind differs from wind value `w0`.
inline std::vector<bool> windy_mask(std::size_t side, std::size_t w0) {
  std::vector<bool> mask(kGridActions * side * side);
  for (std::size_t s = 0; s < mask.size(); ++s) mask[s] = s / (side * side) != w0;
  return mask;
}

// ---------------------------------------------------------------------------
// Tauchen discretization of ln z' = rho ln z + eps, eps ~ N(0, sigma_eps^2)

struct TauchenChain {
  std::vector<double> grid;  // equally spaced, ascending
  DenseMatrix p;             // K x K, row-stochastic
};

namespace detail {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline void check_tauchen(double rho, double sigma, std::size_t k, double width_m) {
  require(k >= 2, "tauchen: K must be >= 2");
  require(sigma > 0.0 && std::isfinite(sigma), "tauchen: sigma_eps must be positive");
  require(rho >= 0.0 && rho < 1.0, "tauchen: rho must lie in [0, 1)");
  require(width_m > 0.0, "tauchen: width_m must be positive");
}

}  // namespace detail

inline std::vector<double> tauchen_grid(double rho, double sigma_eps, std::size_t k, double width_m = 3.0) {
  detail::check_tauchen(rho, sigma_eps, k, width_m);
  const double sigma_z = sigma_eps / std::sqrt(1.0 - rho * rho);
  const double lo = -width_m * sigma_z;
  const double step = 2.0 * width_m * sigma_z / static_cast<double>(k - 1);
  std::vector<double> grid(k);
  for (std::size_t i = 0; i < k; ++i) grid[i] = lo + step * static_cast<double>(i);
  return grid;
}

/// Transition rows on a given equally spaced grid; the end cells absorb the tails.
inline DenseMatrix tauchen_transition(const std::vector<double>& grid, double rho, double sigma_eps) {
  detail::check_tauchen(rho, sigma_eps, grid.size(), 1.0);
  const std::size_t k = grid.size();
  const double half = 0.5 * (grid[1] - grid[0]);
  DenseMatrix p(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) {
    const double mean = rho * grid[i];
    for (std::size_t j = 0; j < k; ++j) {
      const double hi = (grid[j] + half - mean) / sigma_eps;
      const double lo = (grid[j] - half - mean) / sigma_eps;
      double mass;
      if (j == 0) {
        mass = detail::normal_cdf(hi);
      } else if (j + 1 == k) {
        mass = detail::normal_cdf(-lo);
      } else if (lo > 0.0) {
        mass = detail::normal_cdf(-lo) - detail::normal_cdf(-hi);  // upper tail, no cancellation
      } else {
        mass = detail::normal_cdf(hi) - detail::normal_cdf(lo);
      }
      p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = mass;
    }
  }
  detail::normalize_rows(p);
  return p;
}

inline TauchenChain tauchen_discretize(double rho, double sigma_eps, std::size_t k, double width_m = 3.0) {
  TauchenChain c;
  c.grid = tauchen_grid(rho, sigma_eps, k, width_m);
  c.p = tauchen_transition(c.grid, rho, sigma_eps);
  return c;
}

// ---------------------------------------------------------------------------
// Neoclassical investment model
//
// State (k, z) with index k_index * K + z_index, action a = investment rate.
// k' = (1 - delta) k + a k snapped to the nearest capital grid point, ln z
// follows the Tauchen chain. Features f = [z k'^theta, (1 - delta) k, a k]
// use the unsnapped k'.

struct StrebulaevSpec {
  std::size_t K = 20;
  double delta = 0.15;
  double rho = 0.7;
  double sigma_eps = 0.02;
  std::optional<double> grid_sigma_eps;  // z grid scale; defaults to sigma_eps
  double theta = 0.55;
  double width_m = 3.0;
  double gamma = 0.9;
  double lambda = 1.0;
  std::array<double, 3> w{1.0, 1.0, -1.0};
};

inline double steady_state_capital(const StrebulaevSpec& spec) {
  return std::pow(spec.theta / (1.0 / spec.gamma - 1.0 + spec.delta), 1.0 / (1.0 - spec.theta));
}

inline std::vector<double> capital_grid(const StrebulaevSpec& spec) {
  const double kss = steady_state_capital(spec);
  std::vector<double> g(spec.K);
  for (std::size_t i = 0; i < spec.K; ++i) {
    g[i] = kss * (0.5 + static_cast<double>(i) / static_cast<double>(spec.K - 1));
  }
  return g;
}

/// K investment rates equally spaced over [0, 2 delta].
inline std::vector<double> investment_grid(const StrebulaevSpec& spec) {
  std::vector<double> g(spec.K);
  for (std::size_t i = 0; i < spec.K; ++i) {
    g[i] = 2.0 * spec.delta * static_cast<double>(i) / static_cast<double>(spec.K - 1);
  }
  return g;
}

inline BuiltEnv build_strebulaev(const StrebulaevSpec& spec) {
  detail::require(spec.K >= 2, "strebulaev: K must be >= 2");
  detail::require(spec.delta > 0.0 && spec.delta < 1.0, "strebulaev: delta must lie in (0, 1)");
  detail::require(spec.rho > 0.0 && spec.rho < 1.0, "strebulaev: rho must lie in (0, 1)");
  detail::require(spec.theta > 0.0 && spec.theta < 1.0, "strebulaev: theta must lie in (0, 1)");
  detail::require(spec.gamma > 0.0 && spec.gamma < 1.0, "strebulaev: gamma must lie in (0, 1)");

  const std::size_t kk = spec.K;
  const std::vector<double> zgrid = tauchen_grid(spec.rho, spec.grid_sigma_eps.value_or(spec.sigma_eps), kk, spec.width_m);
  const DenseMatrix pz = tauchen_transition(zgrid, spec.rho, spec.sigma_eps);
  const std::vector<double> kgrid = capital_grid(spec);
  const std::vector<double> agrid = investment_grid(spec);

  const auto n = static_cast<Eigen::Index>(kk * kk);
  const auto zn = static_cast<Eigen::Index>(kk);
  std::vector<DenseMatrix> t;
  DenseMatrix feats(static_cast<Eigen::Index>(kk) * n, 3);
  for (std::size_t a = 0; a < kk; ++a) {
    DenseMatrix ta = DenseMatrix::Zero(n, n);
    for (std::size_t ki = 0; ki < kk; ++ki) {
      const double k = kgrid[ki];
      const double knext = (1.0 - spec.delta) * k + agrid[a] * k;
      std::size_t nearest = 0;
      for (std::size_t j = 1; j < kk; ++j) {
        if (std::abs(kgrid[j] - knext) < std::abs(kgrid[nearest] - knext)) nearest = j;
      }
      for (std::size_t zi = 0; zi < kk; ++zi) {
        const auto s = static_cast<Eigen::Index>(ki * kk + zi);
        ta.block(s, static_cast<Eigen::Index>(nearest) * zn, 1, zn) = pz.row(static_cast<Eigen::Index>(zi));
        const double z = std::exp(zgrid[zi]);
        const Eigen::Index row = static_cast<Eigen::Index>(a) * n + s;
        feats(row, 0) = z * std::pow(knext, spec.theta);
        feats(row, 1) = (1.0 - spec.delta) * k;
        feats(row, 2) = agrid[a] * k;
      }
    }
    t.push_back(std::move(ta));
  }
  FeatureMap fm(static_cast<std::size_t>(n), kk, std::move(feats));
  const Vector w = Eigen::Map<const Vector>(spec.w.data(), 3);
  RewardTable reward = reward_from_features(fm, w);
  return BuiltEnv{SoftEnv(TransitionModel(std::move(t)), spec.gamma, spec.lambda), std::move(reward),
                  std::move(fm)};
}

/// True for states in the upper half of the z grid.
inline std::vector<bool> strebulaev_mask(std::size_t k) {
  std::vector<bool> mask(k * k);
  for (std::size_t s = 0; s < mask.size(); ++s) mask[s] = s % k >= k / 2;
  return mask;
}

// ---------------------------------------------------------------------------
// Two-valued exogenous MDPs
//
// State index e * n_endo + x with e in {0, 1}; mask[s] is true when e = 1.
// The endogenous part may depend on (x, e, a); e' depends only on e.

struct TwoValueExogenousSpec {
  std::size_t n_endo = 4;
  std::size_t n_actions = 3;
  double stay_first = 0.7;   // P(e' = 0 | e = 0)
  double stay_second = 0.6;  // P(e' = 1 | e = 1)
  std::uint64_t seed = 0;
  double gamma = 0.9;
  double lambda = 1.0;
};

inline BuiltEnv build_two_value_exogenous(const TwoValueExogenousSpec& spec) {
  detail::require(spec.n_endo >= 1 && spec.n_actions >= 1, "two-value exogenous: counts must be >= 1");
  detail::require(spec.stay_first >= 0.0 && spec.stay_first <= 1.0 && spec.stay_second >= 0.0 &&
                      spec.stay_second <= 1.0,
                  "two-value exogenous: stay probabilities must lie in [0, 1]");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const auto nx = static_cast<Eigen::Index>(spec.n_endo);
  const auto n = 2 * nx;
  const std::array<std::array<double, 2>, 2> pe{{{spec.stay_first, 1.0 - spec.stay_first},
                                                  {1.0 - spec.stay_second, spec.stay_second}}};
  std::vector<DenseMatrix> t;
  for (std::size_t a = 0; a < spec.n_actions; ++a) {
    DenseMatrix ta(n, n);
    for (Eigen::Index e = 0; e < 2; ++e) {
      DenseMatrix endo(nx, nx);
      for (Eigen::Index x = 0; x < nx; ++x)
        for (Eigen::Index y = 0; y < nx; ++y) endo(x, y) = unif(rng);
      detail::normalize_rows(endo);
      for (Eigen::Index e2 = 0; e2 < 2; ++e2) {
        ta.block(e * nx, e2 * nx, nx, nx) = pe[static_cast<std::size_t>(e)][static_cast<std::size_t>(e2)] * endo;
      }
    }
    t.push_back(std::move(ta));
  }
  DenseMatrix r(n, static_cast<Eigen::Index>(spec.n_actions));
  for (Eigen::Index s = 0; s < n; ++s)
    for (Eigen::Index a = 0; a < r.cols(); ++a) r(s, a) = unif(rng);
  return BuiltEnv{SoftEnv(TransitionModel(std::move(t)), spec.gamma, spec.lambda), RewardTable(std::move(r)),
                  std::nullopt};
}

inline std::vector<bool> two_value_mask(std::size_t n_endo) {
  std::vector<bool> mask(2 * n_endo);
  for (std::size_t s = 0; s < mask.size(); ++s) mask[s] = s >= n_endo;
  return mask;
}

}  // namespace irlid
