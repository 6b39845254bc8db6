#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "physord/baselines.hpp"
#include "physord/datagen.hpp"

namespace physord {
namespace {

StateD moving_state() {
  StateD s;
  s.x = {1.0, -2.0, 0.3};
  s.R = lie::exp_so3(Vec3d{0.1, -0.05, 0.7});
  s.v = {1.5, 0.4, -0.1};
  s.w = {0.05, -0.02, 0.3};
  return s;
}

KfnsModel random_kf(std::uint64_t seed) {
  KfnsModel m;
  std::mt19937_64 rng(seed);
  m.net.init(rng);
  return m;
}

TEST(ConstantVelocity, AdvancesPosition) {
  StateD s;
  s.v = {1.0, 0.0, 0.0};
  const StateD n = constant_velocity_step(s, 0.1);
  EXPECT_DOUBLE_EQ(n.x[0], 0.1);
  EXPECT_EQ(n.v.c, s.v.c);
}

TEST(ConstantVelocity, QuarterTurn) {
  StateD s;
  s.w = {0.0, 0.0, std::numbers::pi};
  const StateD n = constant_velocity_step(s, 0.5);
  const Mat3d want{{0, -1, 0, 1, 0, 0, 0, 0, 1}};
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(n.R.a[i], want.a[i], 1e-15);
}

TEST(ConstantVelocity, StepsComposeWithoutRotation) {
  StateD s = moving_state();
  s.w = {};
  const auto seq = cv_rollout(s, 0.1, 20);
  const StateD one = constant_velocity_step(s, 2.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(seq.back().x[i], one.x[i], 1e-13);
  EXPECT_EQ(seq.back().R.a, s.R.a);
}

TEST(ConstantVelocity, KeepsRotationValid) {
  StateD s = moving_state();
  for (int k = 0; k < 1000; ++k) {
    s = constant_velocity_step(s, 0.1);
    ASSERT_LE(lie::orthogonality_error(s.R), 1e-9);
  }
}

TEST(KalmanNs, ZeroProcessNoiseIsConstantVelocity) {
  KfnsModel m = random_kf(3);
  m.noise = KfNoise::uniform(0.0, 0.0, 0.0, 1e-2, 1e-2);
  const std::vector<Action> acts(20, Action{0.6, -0.3, 0.0});
  const Observation b0{{0.1, 0.2, 0.1, 0.0}};
  const StateD s0 = moving_state();
  const auto kf = kfns_rollout(m, s0, acts, b0, 0.1, 20);
  const auto cv = cv_rollout(s0, 0.1, 20);
  for (std::size_t k = 0; k < kf.size(); ++k) {
    EXPECT_EQ(kf[k].x.c, cv[k].x.c);
    EXPECT_EQ(kf[k].v.c, cv[k].v.c);
    EXPECT_EQ(kf[k].R.a, cv[k].R.a);
  }
}

TEST(KalmanNs, ZeroMeasurementNoiseFollowsMeasurement) {
  KfnsModel m = random_kf(4);
  m.noise = KfNoise::uniform(1e-4, 1e-2, 1e-2, 0.0, 0.0);
  const Action a{0.6, -0.3, 0.0};
  const Observation b0{{0.1, 0.2, 0.1, 0.0}};
  KfState k{moving_state(), Mat12::Zero()};
  for (int t = 0; t < 10; ++t) {
    const Vec6 z = kf_measurement(m, k.mean, a, b0);
    k = kf_step(m, k, a, b0, 0.1).state;
    for (int i = 0; i < 3; ++i) {
      EXPECT_NEAR(k.mean.v[static_cast<std::size_t>(i)], z(i), 1e-12);
      EXPECT_NEAR(k.mean.w[static_cast<std::size_t>(i)], z(3 + i), 1e-12);
    }
  }
}

TEST(KalmanNs, PerfectMeasurementTracksNoiselessVelocity) {
  // A measurement net that is exactly right reproduces the true velocities
  // when the measurement is trusted completely. The truth here is a free
  // body without forcing, whose exact one-step velocity change is zero.
  KfnsModel m;  // zero weights: dv = dw = 0
  for (double& p : m.net.params()) p = 0.0;
  m.noise = KfNoise::uniform(1e-4, 1e-2, 1e-2, 0.0, 0.0);
  StateD s = moving_state();
  s.w = {};
  const std::vector<Action> acts(15);
  const auto kf = kfns_rollout(m, s, acts, Observation{}, 0.1, 15);
  for (const auto& k : kf) {
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(k.v[i], s.v[i], 1e-12);
  }
}

TEST(KalmanNs, CovarianceStaysPsd) {
  KfnsModel m = random_kf(9);
  m.noise = KfNoise::uniform(1e-3, 5e-2, 2e-2, 1e-2, 3e-3);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Action> acts;
  for (int t = 0; t < 100; ++t) acts.push_back(Action{0.5 + 0.5 * u(rng), u(rng), 0.0}.clamped());
  KfRolloutStats stats;
  std::vector<Mat12> covs;
  kfns_rollout(m, moving_state(), acts, Observation{{0.1, 0.1, 0.1, 0.1}}, 0.1, 100, &stats, &covs);
  EXPECT_GE(stats.min_eigenvalue, -1e-10);
  ASSERT_EQ(covs.size(), 100u);
  for (const auto& p : covs) {
    EXPECT_LE((p - p.transpose()).norm(), 1e-12 * std::max(1.0, p.norm()));
    EXPECT_GE(min_eigenvalue(p), -1e-10);
  }
}

TEST(KalmanNs, RepairFloorsNegativeEigenvalues) {
  Mat12 p = Mat12::Identity();
  p(0, 0) = -0.5;
  p(1, 2) = 0.1;  // asymmetric
  const Mat12 r = repair_covariance(p);
  EXPECT_GE(min_eigenvalue(r), -1e-14);
  EXPECT_LE((r - r.transpose()).norm(), 1e-14);
}

TEST(KalmanNs, MeasurementNetLearnsVelocityChange) {
  WorldSpec w;
  const Dataset ds = make_dataset(w, 8, 40, 2);
  const auto train = split_indices(ds, Split::train);
  const auto samples = measurement_samples(ds, train);
  EXPECT_EQ(samples.size(), train.size() * 39u);
  KfnsModel m;
  RegressionConfig rc;
  rc.epochs = 30;
  rc.seed = 5;
  double mean_target = 0.0;
  for (const auto& s : samples)
    for (double t : s.target) mean_target += t * t;
  mean_target /= static_cast<double>(samples.size());
  const double loss = train_measurement_net(m, samples, rc);
  EXPECT_LT(loss, 0.5 * mean_target);
}

}  // namespace
}  // namespace physord
