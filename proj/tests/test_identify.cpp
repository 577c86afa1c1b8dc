#include <gtest/gtest.h>

#include <array>
#include <random>

#include "irlid/identify.hpp"
#include "test_util.hpp"

using namespace irlid;

TEST(PairMatrix, BlockLayout) {
  const auto a = testutil::random_env(3, 2, 1, 0.9);
  const auto b = testutil::random_env(3, 2, 2, 0.7);
  const DenseMatrix m = build_pair_matrix(a.env, b.env);
  ASSERT_EQ(m.rows(), 6);
  ASSERT_EQ(m.cols(), 6);
  EXPECT_TRUE(m.block(3, 0, 3, 3).isApprox(-a.env.bellman_operator(1)));
  EXPECT_TRUE(m.block(0, 3, 3, 3).isApprox(b.env.bellman_operator(0)));
}

TEST(PairMatrix, ConstantShiftVectorIsInKernel) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = testutil::random_env(8, 3, seed, 0.3 + 0.05 * seed);
    const auto b = testutil::random_env(8, 3, seed + 100, 0.95 - 0.04 * seed);
    const std::vector<SoftEnv> envs{a.env, b.env};
    const Vector k = constant_shift_kernel_vector(envs);
    EXPECT_LE((build_multi_matrix(envs) * k).norm(), 1e-12 * k.norm());
  }
}

TEST(PairMatrix, RejectsMismatchedShapes) {
  const auto a = testutil::random_env(3, 2, 1);
  const auto b = testutil::random_env(4, 2, 2);
  EXPECT_THROW(build_pair_matrix(a.env, b.env), ValidationError);
}

TEST(Identifiability, RandomPairIsIdentifiable) {
  const auto ex = testutil::random_pair(18, 5, 0);
  const auto v = identifiability_test(std::span<const ExpertObservation>(ex));
  EXPECT_EQ(v.rank_report.effective_rank, 35u);
  EXPECT_TRUE(v.identifiable);
  EXPECT_EQ(v.kernel_dimension_excess, 0u);
}

TEST(Identifiability, SameExpertTwiceIsNotIdentifiable) {
  const auto a = testutil::random_env(6, 3, 4);
  const std::vector<SoftEnv> envs{a.env, a.env};
  const auto v = identifiability_test(std::span<const SoftEnv>(envs));
  EXPECT_FALSE(v.identifiable);
  EXPECT_EQ(v.rank_report.effective_rank, 6u);
  EXPECT_EQ(v.kernel_dimension_excess, 5u);
}

TEST(Identifiability, ExpertOrderDoesNotChangeRank) {
  const auto a = testutil::random_env(6, 2, 5, 0.9);
  const auto b = testutil::random_env(6, 2, 6, 0.6);
  const auto c = testutil::random_env(6, 2, 7, 0.8);
  const std::vector<SoftEnv> abc{a.env, b.env, c.env}, cab{c.env, a.env, b.env};
  EXPECT_EQ(identifiability_test(std::span<const SoftEnv>(abc)).rank_report.effective_rank,
            identifiability_test(std::span<const SoftEnv>(cab)).rank_report.effective_rank);
}

TEST(SameDynamics, DistinctActionsGiveFullStackRank) {
  const auto a = testutil::random_env(7, 3, 8);
  const auto v = same_dynamics_test(a.env.transitions());
  EXPECT_EQ(v.rank_report.effective_rank, 6u);
  EXPECT_TRUE(v.identifiable);
}

TEST(SameDynamics, IdenticalActionsFail) {
  const auto a = testutil::random_env(4, 1, 9);
  const TransitionModel t({a.env.transitions().action(0), a.env.transitions().action(0)});
  const auto v = same_dynamics_test(t);
  EXPECT_EQ(v.rank_report.effective_rank, 0u);
  EXPECT_FALSE(v.identifiable);
  EXPECT_EQ(v.kernel_dimension_excess, 3u);
}

TEST(RecoverReward, RecoversTrueRewardUpToConstant) {
  const auto ex = testutil::random_pair(10, 4, 3, 0.9, 0.7);
  const auto truth = testutil::random_env(10, 4, 7);  // seed 2*3+1: the reward used by random_pair
  const auto rec = recover_reward(ex);
  EXPECT_TRUE(rec.verdict.identifiable);
  EXPECT_LE(shift_distance(rec.reward, truth.reward), 1e-8);
  EXPECT_LE(rec.relative_residual, 1e-10);
  EXPECT_EQ(rec.values.size(), 2u);
}

TEST(RecoverReward, ThreeExpertsWork) {
  const auto a = testutil::random_env(6, 3, 11, 0.9);
  const auto b = testutil::random_env(6, 3, 12, 0.8);
  const auto c = testutil::random_env(6, 3, 13, 0.7);
  const std::vector<ExpertObservation> ex{observe_expert(a.env, a.reward), observe_expert(b.env, a.reward),
                                          observe_expert(c.env, a.reward)};
  const auto rec = recover_reward(ex);
  EXPECT_EQ(rec.verdict.rank_report.effective_rank, 17u);
  EXPECT_LE(shift_distance(rec.reward, a.reward), 1e-8);
}

TEST(RecoverReward, NotIdentifiableThrowsUnlessAllowed) {
  const auto a = testutil::random_env(5, 2, 14);
  const std::vector<ExpertObservation> ex{observe_expert(a.env, a.reward), observe_expert(a.env, a.reward)};
  EXPECT_THROW(recover_reward(ex), NotIdentifiableError);
  RecoveryOptions opts;
  opts.allow_unidentifiable = true;
  const auto rec = recover_reward(ex, opts);
  EXPECT_FALSE(rec.verdict.identifiable);
  // Any representative still reproduces the expert's policy.
  const auto sol = soft_value_iteration(a.env, rec.reward);
  EXPECT_LE((sol.policy.probs() - ex[0].policy.probs()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(RecoverReward, InconsistentExpertsAreRejected) {
  const auto a = testutil::random_env(6, 3, 15, 0.9);
  const auto b = testutil::random_env(6, 3, 16, 0.7);
  const auto other = testutil::random_env(6, 3, 99);
  const std::vector<ExpertObservation> ex{observe_expert(a.env, a.reward), observe_expert(b.env, other.reward)};
  EXPECT_THROW(recover_reward(ex), InconsistentExpertsError);
}

// Two-valued exogenous component: the closed-form witness lies in the kernel.
TEST(ExogenousWitness, AnnihilatedByPairMatrix) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int trial = 0; trial < 10; ++trial) {
    TwoValueExogenousSpec s1, s2;
    s1.stay_first = u(rng);
    s1.stay_second = u(rng);
    s2.stay_first = u(rng);
    s2.stay_second = u(rng);
    s1.seed = 2 * trial;
    s2.seed = 2 * trial + 1;
    s1.gamma = 0.9;
    s2.gamma = 0.6;
    const auto e1 = build_two_value_exogenous(s1);
    const auto e2 = build_two_value_exogenous(s2);
    const auto mask = two_value_mask(s1.n_endo);
    const auto p1 = exogenous_stay_probabilities(e1.env.transitions(), mask);
    const auto p2 = exogenous_stay_probabilities(e2.env.transitions(), mask);
    ASSERT_TRUE(p1 && p2);
    EXPECT_NEAR(p1->first, s1.stay_first, 1e-12);
    const auto w = exogenous_nullspace_witness({*p1, *p2}, 0.9, 0.6);
    const Vector v = w.pair_matrix_vector(mask);
    EXPECT_LE((build_pair_matrix(e1.env, e2.env) * v).norm(), 1e-10);
    EXPECT_FALSE(identifiability_test(std::span<const SoftEnv>(std::vector<SoftEnv>{e1.env, e2.env})).identifiable);
  }
}

TEST(ExogenousWitness, ClosedFormAtZeroSecondDiscount) {
  // With g2 = 0 the system is diagonal: c1 = g1 (1 - p_1^1), c2 = -(1 - g1 p_2^1).
  const auto w = exogenous_nullspace_witness({ExogenousStay{0.7, 0.4}, ExogenousStay{0.2, 0.9}}, 0.8, 0.0);
  EXPECT_NEAR(w.c1, 0.8 * 0.3, 1e-15);
  EXPECT_NEAR(w.c2, -(1.0 - 0.8 * 0.4), 1e-15);
  EXPECT_NEAR(w.determinant, 1.0, 1e-15);
}

TEST(ExogenousWitness, NotExogenousPartitionIsDetected) {
  const auto a = testutil::random_env(4, 2, 3);
  EXPECT_FALSE(exogenous_stay_probabilities(a.env.transitions(), {false, false, true, true}).has_value());
}
