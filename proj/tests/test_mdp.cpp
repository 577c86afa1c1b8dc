#include <gtest/gtest.h>

#include "irlid/mdp.hpp"

using namespace irlid;

namespace {

TransitionModel two_state() {
  DenseMatrix t0(2, 2), t1(2, 2);
  t0 << 0.5, 0.5, 0.2, 0.8;
  t1 << 1.0, 0.0, 0.0, 1.0;
  return TransitionModel({t0, t1});
}

}  // namespace

TEST(TransitionModel, ShapeChecks) {
  EXPECT_THROW(TransitionModel(std::vector<DenseMatrix>{}), ValidationError);
  EXPECT_THROW(TransitionModel({DenseMatrix::Identity(2, 2), DenseMatrix::Identity(3, 3)}), ValidationError);
  const auto t = two_state();
  EXPECT_EQ(t.n_states(), 2u);
  EXPECT_EQ(t.n_actions(), 2u);
  EXPECT_DOUBLE_EQ(t.prob(1, 0, 1), 0.8);
}

TEST(Validate, ReportsEveryBadRow) {
  DenseMatrix bad(2, 2);
  bad << 0.5, 0.6, -0.1, 1.1;
  const auto v = validate(TransitionModel({bad}));
  EXPECT_EQ(v.size(), 3u);  // row 0 sum, entry (1,0), entry (1,1)
  EXPECT_TRUE(validate(two_state()).empty());
}

TEST(SoftEnv, RejectsOutOfRangeParameters) {
  EXPECT_THROW(SoftEnv(two_state(), 1.0, 1.0), ValidationError);
  EXPECT_THROW(SoftEnv(two_state(), -0.1, 1.0), ValidationError);
  EXPECT_THROW(SoftEnv(two_state(), 0.5, 0.0), ValidationError);
  DenseMatrix bad = DenseMatrix::Constant(2, 2, 0.6);
  EXPECT_THROW(SoftEnv(TransitionModel({bad}), 0.5, 1.0), ValidationError);
}

TEST(SoftEnv, BellmanOperator) {
  const SoftEnv env(two_state(), 0.5, 1.0);
  DenseMatrix expect(2, 2);
  expect << 0.75, -0.25, -0.1, 0.6;
  EXPECT_TRUE(env.bellman_operator(0).isApprox(expect));
}

TEST(SoftPolicy, ClampsAndFlags) {
  DenseMatrix p(1, 2);
  p << 1.0, 0.0;
  const SoftPolicy pol(p);
  EXPECT_TRUE(pol.clamped());
  EXPECT_DOUBLE_EQ(pol(0, 1), kPolicyFloor);
  DenseMatrix q(1, 2);
  q << 0.3, 0.6;
  EXPECT_THROW(SoftPolicy{q}, ValidationError);
}

TEST(FeatureMap, BlocksAndReward) {
  DenseMatrix f(4, 2);  // |S| = 2, |A| = 2
  f << 1, 0, 0, 1, 1, 1, 2, 0;
  const FeatureMap fm(2, 2, f);
  EXPECT_EQ(fm.block(1), f.bottomRows(2));
  EXPECT_EQ(fm.at(1, 0), Vector((Vector(2) << 0, 1).finished()));
  const RewardTable r = reward_from_features(fm, (Vector(2) << 2.0, -1.0).finished());
  EXPECT_DOUBLE_EQ(r(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(r(1, 0), -1.0);
  EXPECT_DOUBLE_EQ(r(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(r(1, 1), 4.0);
  EXPECT_THROW(FeatureMap(2, 2, DenseMatrix::Ones(3, 2)), ValidationError);
  EXPECT_THROW(reward_from_features(fm, Vector::Ones(3)), ValidationError);
}

TEST(ShiftDistance, IgnoresConstantShift) {
  const RewardTable a(DenseMatrix::Random(3, 2));
  const RewardTable b((a.values().array() + 7.5).matrix());
  EXPECT_LE(shift_distance(a, b), 1e-14);
  DenseMatrix d = a.values();
  d(0, 0) += 2.0;
  EXPECT_NEAR(shift_distance(RewardTable(d), a), 1.0, 1e-14);
  EXPECT_NEAR(normalize_shift(b).values().mean(), 0.0, 1e-14);
}
