#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "physord/integrator.hpp"

using namespace physord;

namespace {

VehicleParams box_params(double h = 0.1, double alpha = 0.5) {
  return VehicleParams::make(1.0, Mat3d::diag(0.1, 0.15, 0.2), alpha, h);
}

Vec3d random_vec(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return {u(rng), u(rng), u(rng)};
}

// Smooth conservative field: harmonic well in position and an uprighting
// potential 0.5 k |R e3 - e3|^2, plus a constant body-frame wrench.
struct SmoothTestModel {
  double k_pos = 2.0;
  double k_rot = 0.3;
  Vec3d body_force{0.5, 0.0, 0.1};
  Vec3d body_torque{0.0, 0.02, 0.05};

  template <class T>
  PotentialGrad<T> potential(const Vec3<T>& x, const Mat3<T>& R) const {
    PotentialGrad<T> g;
    g.dU_dx = k_pos * x;
    const Vec3<T> col{R(0, 2), R(1, 2), R(2, 2) - 1.0};
    for (std::size_t i = 0; i < 3; ++i) g.dU_dR(i, 2) = k_rot * col[i];
    return g;
  }
  template <class T>
  Wrench<T> force(const State<T>&, const Action&, const Observation&) const {
    return {lift<T>(body_force), lift<T>(body_torque)};
  }
};

double max_position_error(const SmoothTestModel& model, const StateD& s0, double h, double horizon) {
  const int n = static_cast<int>(std::lround(horizon / h));
  const int sub = 100;
  const VehicleParams coarse = box_params(h);
  const VehicleParams fine = box_params(h / sub);
  std::vector<Action> actions(static_cast<std::size_t>(n * sub));
  const Observation b0{};
  const auto c = rollout(s0, std::span<const Action>(actions), b0, model, coarse, n);
  const auto f = rollout(s0, std::span<const Action>(actions), b0, model, fine, n * sub);
  double worst = 0.0;
  for (int k = 0; k < n; ++k) {
    const auto& ref = f[static_cast<std::size_t>((k + 1) * sub - 1)];
    worst = std::max(worst, norm(c[static_cast<std::size_t>(k)].x - ref.x));
  }
  return worst;
}

}  // namespace

TEST(ComputeJd, Examples) {
  const Mat3d a = compute_jd(Mat3d::identity());
  for (int i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(a.a[i], (i % 4 == 0) ? 0.5 : 0.0);
  const Mat3d b = compute_jd(Mat3d::diag(1, 2, 3));
  EXPECT_DOUBLE_EQ(b(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(b(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(b(2, 2), 0.0);
  const Mat3d c = compute_jd(Mat3d{});
  for (double x : c.a) EXPECT_EQ(x, 0.0);
}

TEST(VehicleParams, Validation) {
  EXPECT_THROW(VehicleParams::make(0.0, Mat3d::identity(), 0.5, 0.1), ConfigError);
  EXPECT_THROW(VehicleParams::make(1.0, Mat3d::identity(), 1.5, 0.1), ConfigError);
  EXPECT_THROW(VehicleParams::make(1.0, Mat3d::identity(), 0.5, 0.0), ConfigError);
  Mat3d asym = Mat3d::identity();
  asym(0, 1) = 0.1;
  EXPECT_THROW(VehicleParams::make(1.0, asym, 0.5, 0.1), ConfigError);
  EXPECT_THROW(VehicleParams::make(1.0, Mat3d::diag(1, -1, 1), 0.5, 0.1), ConfigError);
  const VehicleParams p = box_params();
  const Mat3d expected = 0.5 * trace(p.J) * Mat3d::identity() - p.J;
  for (int i = 0; i < 9; ++i) EXPECT_EQ(p.Jd.a[i], expected.a[i]);
}

TEST(PotentialXi, Examples) {
  const Mat3d r = lie::exp_so3(Vec3d{0.3, -0.4, 1.1});
  const Vec3d zero = potential_xi(r, Mat3d{});
  EXPECT_EQ(norm(zero), 0.0);
  const Vec3d same = potential_xi(r, r);
  EXPECT_LE(norm(same), 1e-16);
}

TEST(PotentialXi, ArgumentIsSkew) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int i = 0; i < 100; ++i) {
    const Mat3d r = lie::exp_so3(random_vec(rng, 2.0));
    Mat3d du;
    for (double& x : du.a) x = u(rng);
    const Mat3d s = transpose(du) * r - transpose(r) * du;
    EXPECT_LE(lie::skew_defect(s), 1e-14);
    const Vec3d xi = potential_xi(r, du);
    const Mat3d back = lie::hat(xi);
    for (int k = 0; k < 9; ++k) EXPECT_NEAR(back.a[k], s.a[k], 1e-14);
  }
}

TEST(SolveZ, ZeroRightHandSideGivesIdentity) {
  const VehicleParams p = box_params();
  const auto sol = solve_Z(p, Vec3d{}, Vec3d{}, Vec3d{});
  for (int i = 0; i < 9; ++i) EXPECT_EQ(sol.Z.a[i], Mat3d::identity().a[i]);
}

TEST(SolveZ, ClosedFormForIsotropicInertia) {
  // J = I gives Z Jd - Jd Z^T = (Z - Z^T) / 2, hence sin(theta) = h w_z.
  const VehicleParams p = VehicleParams::make(1.0, Mat3d::identity(), 0.5, 0.1);
  const auto sol = solve_Z(p, Vec3d{0, 0, 1}, Vec3d{}, Vec3d{});
  const Vec3d phi = lie::log_so3(sol.Z);
  EXPECT_NEAR(phi[0], 0.0, 1e-14);
  EXPECT_NEAR(phi[1], 0.0, 1e-14);
  EXPECT_NEAR(phi[2], std::asin(0.1), 1e-10);
  EXPECT_NEAR(phi[2], 0.100167421, 1e-9);
}

TEST(SolveZ, ResidualOfRandomSolves) {
  const VehicleParams p = box_params();
  std::mt19937_64 rng(12);
  for (int i = 0; i < 1000; ++i) {
    Vec3d w = random_vec(rng, 5.0);
    if (norm(p.h * w) >= 0.5) w = (0.49 / (p.h * norm(w))) * w;
    const Vec3d f = random_vec(rng, 0.05);
    const Vec3d xi = random_vec(rng, 1.0);
    const auto sol = solve_Z(p, w, f, xi);
    const Vec3d rhs = p.h * (p.J * w) + p.h * f + ((1.0 - p.alpha) * p.h * p.h) * xi;
    const Mat3d resid = sol.Z * p.Jd - p.Jd * transpose(sol.Z) - lie::hat(rhs);
    EXPECT_LE(frobenius_norm(resid), 1e-9);
    EXPECT_LE(sol.stats.residual, 1e-9);
    EXPECT_TRUE(lie::is_rotation(sol.Z, 1e-12));
  }
}

TEST(SolveZ, AnalyticJacobianMatchesCentralDifferences) {
  const VehicleParams p = box_params();
  std::mt19937_64 rng(13);
  for (int i = 0; i < 50; ++i) {
    const Vec3d phi = random_vec(rng, 0.8);
    const Mat3d a = rotation_residual_jacobian(phi, p.Jd);
    const Mat3d fd = detail::rotation_jacobian_fd(phi, p.Jd, 1e-6);
    for (int k = 0; k < 9; ++k) EXPECT_NEAR(a.a[k], fd.a[k], 1e-8);
  }
}

TEST(SolveZ, FiniteDifferenceJacobianFallbackConverges) {
  const VehicleParams p = box_params();
  NewtonOptions opt;
  opt.analytic_jacobian = false;
  const auto a = solve_Z(p, Vec3d{0.5, -1.0, 2.0}, Vec3d{0.01, 0, 0}, Vec3d{0.1, 0.2, 0.3}, opt);
  const auto b = solve_Z(p, Vec3d{0.5, -1.0, 2.0}, Vec3d{0.01, 0, 0}, Vec3d{0.1, 0.2, 0.3});
  EXPECT_LE(a.stats.residual, 1e-9);
  EXPECT_LE(lie::geodesic_angle(a.Z, b.Z), 1e-9);
}

TEST(SolveZ, NoConvergenceOnHopelessScaling) {
  // Rotation increment beyond the reach of Z Jd - Jd Z^T for this inertia.
  const VehicleParams p = VehicleParams::make(1.0, Mat3d::identity(), 0.5, 1.0);
  EXPECT_THROW(solve_Z(p, Vec3d{0, 0, 5.0}, Vec3d{}, Vec3d{}), NoConvergence);
}

TEST(Step, FreeParticle) {
  const VehicleParams p = box_params();
  StateD s;
  s.x = {1.0, -2.0, 0.5};
  s.R = lie::exp_so3(Vec3d{0.2, 0.1, -0.4});
  s.v = {3.0, 0.5, -0.25};
  const auto zero = [](const Vec3d&, const Mat3d&) { return PotentialGrad<double>{}; };
  const auto r = step(s, PotentialGrad<double>{}, zero, ForceWrench<double>{}, p);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(r.next.x[i], s.x[i] + p.h * s.v[i]);
    EXPECT_EQ(r.next.v[i], s.v[i]);
    EXPECT_EQ(r.next.w[i], 0.0);
  }
  for (int i = 0; i < 9; ++i) EXPECT_EQ(r.next.R.a[i], s.R.a[i]);
}

TEST(Step, ZeroForceConservesMomentaInOneStep) {
  const VehicleParams p = box_params();
  std::mt19937_64 rng(14);
  const auto zero = [](const Vec3d&, const Mat3d&) { return PotentialGrad<double>{}; };
  for (int i = 0; i < 100; ++i) {
    StateD s;
    s.R = lie::exp_so3(random_vec(rng, 2.0));
    s.v = random_vec(rng, 3.0);
    s.w = random_vec(rng, 2.0);
    const auto r = step(s, PotentialGrad<double>{}, zero, ForceWrench<double>{}, p);
    const Vec3d l0 = s.R * (p.J * s.w);
    const Vec3d l1 = r.next.R * (p.J * r.next.w);
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_EQ(r.next.v[k], s.v[k]);
      EXPECT_NEAR(l1[k], l0[k], 1e-12);
    }
  }
}

TEST(Step, UniformGravityTelescopes) {
  const double g = 9.81;
  const VehicleParams p = box_params(0.1, 0.5);
  PotentialGrad<double> grav;
  grav.dU_dx = {0.0, 0.0, p.m * g};
  const auto field = [&](const Vec3d&, const Mat3d&) { return grav; };
  StateD s;
  s.v = {1.0, 0.0, 2.0};
  const int n = 50;
  PotentialGrad<double> dU = grav;
  for (int k = 0; k < n; ++k) {
    auto r = step(s, dU, field, ForceWrench<double>{}, p);
    s = r.next;
    dU = r.dU_next;
  }
  EXPECT_NEAR(s.v[2], 2.0 - n * p.h * g, 1e-12);
}

TEST(Rollout, EmptyAndFreeParticle) {
  const VehicleParams p = box_params();
  StateD s0;
  s0.x = {0.5, 0.0, 0.0};
  s0.v = {1.0, 0.0, 0.0};
  std::vector<Action> actions(20);
  EXPECT_TRUE(rollout(s0, std::span<const Action>(actions), Observation{}, ZeroDynamics{}, p, 0).empty());
  const auto traj = rollout(s0, std::span<const Action>(actions), Observation{}, ZeroDynamics{}, p, 20);
  ASSERT_EQ(traj.size(), 20u);
  EXPECT_NEAR(traj.back().x[0], 2.5, 1e-13);
  EXPECT_THROW(rollout(s0, std::span<const Action>(actions), Observation{}, ZeroDynamics{}, p, 21), LengthMismatch);
}

TEST(Rollout, BitIdenticalAcrossRuns) {
  const VehicleParams p = box_params();
  StateD s0;
  s0.v = {1.0, 0.2, 0.0};
  s0.w = {0.3, -0.2, 0.5};
  std::vector<Action> actions(30);
  const SmoothTestModel model;
  const auto a = rollout(s0, std::span<const Action>(actions), Observation{}, model, p, 30);
  const auto b = rollout(s0, std::span<const Action>(actions), Observation{}, model, p, 30);
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(std::memcmp(&a[k], &b[k], sizeof(StateD)), 0);
  }
}

TEST(Rollout, StructurePreservedUnderRandomForces) {
  const VehicleParams p = box_params();
  std::mt19937_64 rng(15);
  StateD s;
  s.w = {0.5, -0.3, 0.8};
  PotentialGrad<double> dU;
  const auto zero = [](const Vec3d&, const Mat3d&) { return PotentialGrad<double>{}; };
  int reprojections = 0;
  for (int k = 0; k < 10000; ++k) {
    // Damped so the angular rate stays bounded over the run.
    Wrench<double> f{random_vec(rng, 1.0), random_vec(rng, 0.2) - 0.3 * s.w};
    auto r = step(s, dU, zero, split_force(f, p.alpha, p.h), p);
    reprojections += r.reprojected ? 1 : 0;
    s = r.next;
  }
  EXPECT_LE(lie::orthogonality_error(s.R), 1e-8);
  EXPECT_EQ(reprojections, 0);
}

TEST(Rollout, SecondOrderConvergence) {
  const SmoothTestModel model;
  StateD s0;
  s0.x = {0.3, -0.2, 0.1};
  s0.R = lie::exp_so3(Vec3d{0.1, -0.05, 0.3});
  s0.v = {1.0, 0.5, 0.0};
  s0.w = {0.2, -0.1, 0.4};
  const double hs[] = {0.2, 0.1, 0.05, 0.025};
  double prev = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double e = max_position_error(model, s0, hs[i], 2.0);
    if (i > 0) {
      const double ratio = prev / e;
      EXPECT_GE(ratio, 4.0 / 1.5) << "h=" << hs[i];
      EXPECT_LE(ratio, 4.0 * 1.5) << "h=" << hs[i];
    }
    prev = e;
  }
}
