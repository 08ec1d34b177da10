#include <gtest/gtest.h>

#include <complex>
#include <numbers>

#include "revmap/arm.hpp"

using namespace revmap;

namespace {

// End effector as a sum of unit phasors.
Point phasor_fk(const ArmModel& arm, const Vec& q) {
  std::complex<double> p = 0.0, dir = 1.0;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    dir *= std::polar(1.0, q(i));
    p += arm.lengths[static_cast<std::size_t>(i)] * dir;
  }
  return {p.real(), p.imag()};
}

ArmModel unit_arm() {
  ArmModel a;
  a.lengths.assign(5, 1.0);
  a.lower = Vec::Constant(5, -std::numbers::pi);
  a.upper = Vec::Constant(5, std::numbers::pi);
  a.home = Vec::Zero(5);
  a.validate();
  return a;
}

}  // namespace

TEST(ForwardKinematics, StraightAndBent) {
  const ArmModel arm = unit_arm();
  const Pose p = forward_kinematics(arm, Vec::Zero(5));
  EXPECT_NEAR(p.end_effector.x(), 5.0, 1e-15);
  EXPECT_NEAR(p.end_effector.y(), 0.0, 1e-15);
  ASSERT_EQ(p.joints.size(), 6u);
  Vec q = Vec::Zero(5);
  q(0) = std::numbers::pi / 2;
  const Point up = forward_kinematics(arm, q).end_effector;
  EXPECT_NEAR(up.x(), 0.0, 1e-12);
  EXPECT_NEAR(up.y(), 5.0, 1e-12);
  EXPECT_THROW(forward_kinematics(arm, Vec::Zero(4)), ShapeError);
}

TEST(ForwardKinematics, MatchesPhasorSum) {
  const ArmModel arm = ArmModel::planar(5, 0.2);
  Rng rng(1);
  std::uniform_real_distribution<double> u(-std::numbers::pi, std::numbers::pi);
  double worst = 0.0;
  for (int k = 0; k < 10000; ++k) {
    Vec q(5);
    for (Eigen::Index i = 0; i < 5; ++i) q(i) = u(rng);
    worst = std::max(worst, (forward_kinematics(arm, q).end_effector - phasor_fk(arm, q)).norm());
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(ForwardKinematics, JacobianMatchesFiniteDifferences) {
  const ArmModel arm = ArmModel::planar();
  const Vec q = (Vec(5) << 0.1, 0.5, -0.3, 0.8, 0.2).finished();
  const Mat jac = planar_jacobian(arm, q);
  for (Eigen::Index i = 0; i < 5; ++i) {
    Vec p = q, m = q;
    p(i) += 1e-6;
    m(i) -= 1e-6;
    const Point fd = (phasor_fk(arm, p) - phasor_fk(arm, m)) / 2e-6;
    EXPECT_NEAR((jac.col(i) - fd).norm(), 0.0, 1e-8);
  }
}

TEST(ArmModel, Validation) {
  ArmModel a = ArmModel::planar();
  a.home(1) = 3.0;
  EXPECT_THROW(a.validate(), ConfigError);
  EXPECT_THROW(ArmModel::planar(1), ConfigError);
  const ArmModel b = arm_from_json(arm_to_json(ArmModel::planar(4, 0.3)));
  EXPECT_EQ(b.lengths, std::vector<double>(4, 0.3));
  EXPECT_EQ(b.home, ArmModel::planar(4, 0.3).home);
}

TEST(GenerateDemo, TargetAtStartStaysPut) {
  const ArmModel arm = ArmModel::planar();
  const Point here = forward_kinematics(arm, arm.home).end_effector;
  const Demonstration d = generate_demo(arm, arm.home, here, 50);
  ASSERT_EQ(d.states.size(), 50u);
  for (const Vec& q : d.states) EXPECT_LE((q - arm.home).norm(), 1e-12);
}

TEST(GenerateDemo, FollowsStraightLineWithinLimits) {
  const ArmModel arm = ArmModel::planar();
  const Point from = forward_kinematics(arm, arm.home).end_effector;
  const Point target(0.2, 0.55);
  const Demonstration d = generate_demo(arm, arm.home, target, 1000);
  double worst = 0.0;
  for (const Vec& q : d.states) {
    EXPECT_TRUE(arm.within_limits(q));
    const Point p = forward_kinematics(arm, q).end_effector;
    const Point dir = (target - from).normalized();
    const Point off = (p - from) - dir * dir.dot(p - from);
    worst = std::max(worst, off.norm());
  }
  EXPECT_LE(worst, 1e-2);
  EXPECT_LE((forward_kinematics(arm, d.states.back()).end_effector - target).norm(), 1e-6);
}

TEST(GenerateDemo, Errors) {
  const ArmModel arm = ArmModel::planar();
  EXPECT_THROW(generate_demo(arm, arm.home, Point(2.0, 0.0), 10), InputError);
  EXPECT_THROW(generate_demo(arm, arm.home, Point(0.3, 0.3), 0), InputError);
  EXPECT_THROW(generate_demo(arm, Vec::Constant(5, 3.0), Point(0.3, 0.3), 10), InputError);
}

TEST(Preprocess, SmoothingAndStride) {
  const std::vector<Vec> xs{Vec::Zero(1), Vec::Ones(1), Vec::Ones(1), Vec::Ones(1)};
  const auto ys = ema_filter(xs, 0.2);
  EXPECT_DOUBLE_EQ(ys[1](0), 0.2);
  EXPECT_DOUBLE_EQ(ys[2](0), 0.2 + 0.8 * 0.2);
  const Dataset ds = preprocess(xs, {0.2, 3});
  ASSERT_EQ(ds.size(), 1);
  EXPECT_DOUBLE_EQ(ds.states(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(ds.velocities(0, 0), ys[3](0));
  EXPECT_THROW(preprocess(xs, {0.0, 3}), ConfigError);
  EXPECT_THROW(preprocess(xs, {0.2, 4}), InputError);
}

TEST(Preprocess, LinearRampKeepsDifferences) {
  std::vector<Vec> xs;
  for (int t = 0; t < 1000; ++t) xs.push_back(Vec::Constant(2, 0.001 * t));
  const Dataset ds = preprocess(xs, {0.2, 3});
  EXPECT_EQ(ds.size(), 333);
  // Once the filter has settled it lags a ramp by a constant, so differences equal the raw ones.
  EXPECT_NEAR(ds.velocities(ds.size() - 1, 0), 0.003, 1e-12);
}

TEST(BuildDataset, SizeAndDeterminism) {
  const ArmModel arm = ArmModel::planar();
  DemoSetConfig cfg;
  cfg.count = 3;
  cfg.seed = 4;
  const auto demos = generate_demos(arm, cfg);
  ASSERT_EQ(demos.size(), 3u);
  const Dataset a = build_dataset(arm, demos, {}, cfg);
  EXPECT_EQ(a.size(), 3 * 333);
  const Dataset b = build_dataset(arm, generate_demos(arm, cfg), {}, cfg);
  EXPECT_EQ(a.states, b.states);
  EXPECT_EQ(a.velocities, b.velocities);
  for (const auto& d : demos) EXPECT_TRUE(demo_is_clean(arm, d));
}
