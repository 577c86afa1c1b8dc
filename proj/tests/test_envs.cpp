#include <gtest/gtest.h>

#include <cmath>

#include "irlid/envs.hpp"
#include "irlid/identify.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using namespace irlid;

namespace {

void expect_stochastic(const TransitionModel& t) {
  EXPECT_TRUE(validate(t).empty());
  for (const auto& m : t.matrices()) {
    EXPECT_LE(m.maxCoeff(), 1.0);
    EXPECT_LE((m.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
  }
}

}  // namespace

TEST(RandomMdp, StochasticAndDeterministicPerSeed) {
  const auto a = build_random_mdp({18, 5, 3, 0.9, 1.0});
  const auto b = build_random_mdp({18, 5, 3, 0.9, 1.0});
  expect_stochastic(a.env.transitions());
  for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(a.env.transitions().action(k), b.env.transitions().action(k));
  EXPECT_EQ(a.reward.values(), b.reward.values());
  EXPECT_NE(build_random_mdp({18, 5, 4, 0.9, 1.0}).reward.values(), a.reward.values());
}

TEST(Gridworld, DeterministicMoves) {
  GridworldSpec s;
  s.side = 4;
  const auto g = build_gridworld(s);
  const auto& t = g.env.transitions();
  EXPECT_DOUBLE_EQ(t.prob(5, kRight, 6), 1.0);
  EXPECT_DOUBLE_EQ(t.prob(5, kUp, 1), 1.0);
  EXPECT_DOUBLE_EQ(t.prob(0, kLeft, 0), 1.0);  // blocked by the wall
  EXPECT_DOUBLE_EQ(t.prob(15, kDown, 15), 1.0);
}

TEST(Gridworld, FullNoiseIsUniformOverNeighbours) {
  GridworldSpec s;
  s.side = 3;
  s.alpha = 1.0;
  const auto g = build_gridworld(s);
  for (std::size_t a = 0; a < kGridActions; ++a) {
    EXPECT_DOUBLE_EQ(g.env.transitions().prob(0, a, 1), 0.5);
    EXPECT_DOUBLE_EQ(g.env.transitions().prob(0, a, 3), 0.5);
    EXPECT_DOUBLE_EQ(g.env.transitions().prob(4, a, 1), 0.25);
  }
}

TEST(Gridworld, AffineInAlpha) {
  GridworldSpec s;
  s.side = 5;
  s.alpha = 0.0;
  const auto g0 = build_gridworld(s);
  s.alpha = 1.0;
  const auto g1 = build_gridworld(s);
  s.alpha = 0.5;
  const auto gm = build_gridworld(s);
  for (std::size_t a = 0; a < kGridActions; ++a) {
    const DenseMatrix mid = 0.5 * (g0.env.transitions().action(a) + g1.env.transitions().action(a));
    EXPECT_LE((gm.env.transitions().action(a) - mid).cwiseAbs().maxCoeff(), 1e-15);
  }
  expect_stochastic(gm.env.transitions());
}

TEST(Gridworld, RewardLayout) {
  GridworldSpec s;
  s.side = 3;
  const auto g = build_gridworld(s);
  EXPECT_DOUBLE_EQ(g.reward(8, kUp), 100.0);
  EXPECT_DOUBLE_EQ(g.reward(8, kRight), 70.0);
  EXPECT_DOUBLE_EQ(g.reward(0, kDown), -20.0);
  EXPECT_DOUBLE_EQ(g.reward(0, kLeft), -10.0);
  s.side = 1;
  EXPECT_THROW(build_gridworld(s), ValidationError);
}

TEST(Windy, OneHotWindComposesActionThenWind) {
  WindySpec w;
  w.base.side = 4;
  w.wind_dist = {1.0, 0.0, 0.0, 0.0};
  const auto env = build_windy_gridworld(w);
  const std::size_t cells = 16;
  // Current wind up (layer 0), position 9 = (2, 1); right to (2, 2) then up to (1, 2) = 6.
  EXPECT_DOUBLE_EQ(env.env.transitions().prob(9, kRight, 6), 1.0);
  // Current wind left (layer 2), position 9; right then left returns to 9, next wind is up.
  EXPECT_DOUBLE_EQ(env.env.transitions().prob(2 * cells + 9, kRight, 9), 1.0);
  EXPECT_DOUBLE_EQ(env.reward(9, kRight), env.reward(3 * cells + 9, kRight));
}

TEST(Windy, WindMarginalIsExogenous) {
  WindySpec w;
  w.base.side = 4;
  w.base.alpha = 0.3;
  w.wind_dist = random_wind_distribution(3);
  const auto env = build_windy_gridworld(w);
  expect_stochastic(env.env.transitions());
  const std::size_t cells = 16;
  for (std::size_t a = 0; a < kGridActions; ++a) {
    const DenseMatrix& t = env.env.transitions().action(a);
    for (std::size_t wn = 0; wn < kGridActions; ++wn) {
      const Vector mass = t.middleCols(static_cast<Eigen::Index>(wn * cells), static_cast<Eigen::Index>(cells)).rowwise().sum();
      EXPECT_LE((mass.array() - w.wind_dist[wn]).abs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Windy, TwoExpertsAreNeverIdentifiable) {
  WindySpec w;
  w.base.side = 3;
  w.base.alpha = 0.2;
  w.wind_dist = random_wind_distribution(1);
  const auto a = build_windy_gridworld(w);
  w.wind_dist = random_wind_distribution(2);
  const auto b = build_windy_gridworld(w);
  const auto v = identifiability_test(std::span<const SoftEnv>(std::vector<SoftEnv>{a.env, b.env}));
  EXPECT_FALSE(v.identifiable);
  EXPECT_GE(v.kernel_dimension_excess, 3u);
}

TEST(Windy, RejectsBadWind) {
  WindySpec w;
  w.wind_dist = {0.5, 0.5, 0.5, -0.5};
  EXPECT_THROW(build_windy_gridworld(w), ValidationError);
  w.wind_dist = {0.5, 0.6, 0.0, 0.0};
  EXPECT_THROW(build_windy_gridworld(w), ValidationError);
}

TEST(Tauchen, MatchesQuadratureOracle) {
  const auto chain = tauchen_discretize(0.9, 0.02, 3, 3.0);
  const auto want = oracle::tauchen_by_quadrature(0.9, 0.02, 3, 3.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      EXPECT_NEAR(chain.p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)), want[i][j], 1e-10);
  // Frozen from an independent adaptive-quadrature evaluation.
  EXPECT_NEAR(chain.p(0, 0), 0.9970473042337039, 1e-12);
  EXPECT_NEAR(chain.p(1, 0), 0.00028953160860963864, 1e-12);
  EXPECT_NEAR(chain.grid[2], 0.13764944032233709, 1e-15);
}

TEST(Tauchen, RowsSumToOne) {
  const auto chain = tauchen_discretize(0.7, 0.02, 20);
  EXPECT_LE((chain.p.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
}

TEST(Tauchen, NoPersistenceGivesIdenticalRows) {
  const auto chain = tauchen_discretize(0.0, 0.1, 7);
  for (Eigen::Index i = 1; i < 7; ++i) EXPECT_LE((chain.p.row(i) - chain.p.row(0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Tauchen, RejectsBadArguments) {
  EXPECT_THROW(tauchen_discretize(0.5, 0.0, 5), ValidationError);
  EXPECT_THROW(tauchen_discretize(1.0, 0.1, 5), ValidationError);
  EXPECT_THROW(tauchen_discretize(0.5, 0.1, 1), ValidationError);
}

TEST(Strebulaev, ShapesFeaturesAndExogeneity) {
  StrebulaevSpec s;
  s.K = 6;
  const auto env = build_strebulaev(s);
  expect_stochastic(env.env.transitions());
  ASSERT_TRUE(env.features.has_value());
  EXPECT_EQ(env.env.n_states(), 36u);
  EXPECT_EQ(env.env.n_actions(), 6u);
  EXPECT_EQ(env.features->d(), 3u);
  const auto chain = tauchen_discretize(s.rho, s.sigma_eps, s.K, s.width_m);
  for (std::size_t a = 0; a < 6; ++a) {
    const DenseMatrix& t = env.env.transitions().action(a);
    for (Eigen::Index st = 0; st < 36; ++st) {
      Vector zmarg = Vector::Zero(6);
      for (Eigen::Index nxt = 0; nxt < 36; ++nxt) zmarg(nxt % 6) += t(st, nxt);
      EXPECT_LE((zmarg.transpose() - chain.p.row(st % 6)).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
  // Reward is w^T f with w = (1, 1, -1).
  const Vector f = env.features->at(7, 3);
  EXPECT_NEAR(env.reward(7, 3), f(0) + f(1) - f(2), 1e-12);
  const auto kgrid = capital_grid(s);
  const auto agrid = investment_grid(s);
  const double k = kgrid[1];
  EXPECT_NEAR(f(1), (1.0 - s.delta) * k, 1e-12);
  EXPECT_NEAR(f(2), agrid[3] * k, 1e-12);
  EXPECT_NEAR(f(0), std::exp(chain.grid[1]) * std::pow((1.0 - s.delta + agrid[3]) * k, s.theta), 1e-12);
}

TEST(Strebulaev, SmallPairIsNotIdentifiableButFeaturesAre) {
  StrebulaevSpec s;
  s.K = 6;
  s.grid_sigma_eps = 0.04;
  const auto a = build_strebulaev(s);
  s.sigma_eps = 0.04;
  const auto b = build_strebulaev(s);
  const auto v = identifiability_test(std::span<const SoftEnv>(std::vector<SoftEnv>{a.env, b.env}));
  EXPECT_FALSE(v.identifiable);
  EXPECT_GE(v.kernel_dimension_excess, s.K - 1);
}

TEST(TwoValueExogenous, StayProbabilitiesRecovered) {
  TwoValueExogenousSpec s;
  s.stay_first = 0.3;
  s.stay_second = 0.8;
  const auto e = build_two_value_exogenous(s);
  expect_stochastic(e.env.transitions());
  const auto p = exogenous_stay_probabilities(e.env.transitions(), two_value_mask(s.n_endo));
  ASSERT_TRUE(p.has_value());
  EXPECT_NEAR(p->first, 0.3, 1e-12);
  EXPECT_NEAR(p->second, 0.8, 1e-12);
}
