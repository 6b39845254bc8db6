#pragma once

// Forced discrete Euler-Lagrange update on SE(3) with an implicit Newton
// solve for the incremental rotation, and multi-step rollout.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "physord/errors.hpp"
#include "physord/liegroup.hpp"
#include "physord/linalg.hpp"
#include "physord/types.hpp"

namespace physord {

inline Mat3d compute_jd(const Mat3d& j) { return 0.5 * trace(j) * Mat3d::identity() - j; }

struct VehicleParams {
  double m = 1.0;
  Mat3d J = Mat3d::identity();
  Mat3d Jd = compute_jd(Mat3d::identity());
  Mat3d J_inv = Mat3d::identity();
  double alpha = 0.5;
  double h = 0.1;

  static VehicleParams make(double mass, const Mat3d& inertia, double alpha, double h) {
    if (!(mass > 0.0) || !std::isfinite(mass)) throw ConfigError("mass must be positive");
    if (!(h > 0.0) || !std::isfinite(h)) throw ConfigError("timestep h must be positive");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
    if (!all_finite(inertia)) throw ConfigError("inertia has non-finite entries");
    if (frobenius_norm(inertia - transpose(inertia)) > 1e-12) throw ConfigError("inertia must be symmetric");
    const double m1 = inertia(0, 0);
    const double m2 = inertia(0, 0) * inertia(1, 1) - inertia(0, 1) * inertia(1, 0);
    if (!(m1 > 0.0 && m2 > 0.0 && det(inertia) > 0.0)) throw ConfigError("inertia must be positive definite");
    VehicleParams p;
    p.m = mass;
    p.J = inertia;
    p.Jd = compute_jd(inertia);
    p.J_inv = inverse(inertia);
    p.alpha = alpha;
    p.h = h;
    return p;
  }

  VehicleParams with_timestep(double new_h) const { return make(m, J, alpha, new_h); }
};

// Body-frame continuous wrench to the discrete pair f- = (1-a) h f, f+ = a h f.
template <class T>
ForceWrench<T> split_force(const Wrench<T>& f, double alpha, double h) {
  const double lo = (1.0 - alpha) * h;
  const double hi = alpha * h;
  return {lo * f.force, hi * f.force, lo * f.torque, hi * f.torque};
}

// xi = vee(dU/dR^T R - R^T dU/dR), the body-frame potential torque.
template <class T>
Vec3<T> potential_xi(const Mat3<T>& R, const Mat3<T>& dU_dR) {
  return lie::vee_skew(transpose(dU_dR) * R - transpose(R) * dU_dR);
}

struct NewtonOptions {
  int max_iterations = 5;
  double tolerance = 1e-10;
  double accept_residual = 1e-6;
  bool analytic_jacobian = true;
  double fd_step = 1e-7;
};

struct SolveStats {
  int iterations = 0;
  double residual = 0.0;
};

template <class T>
struct RotationSolve {
  Mat3<T> Z;
  SolveStats stats;
};

namespace detail {

inline Vec3d rotation_residual(const Vec3d& phi, const Mat3d& jd, const Vec3d& rhs) {
  const Mat3d z = lie::exp_so3(phi);
  return lie::vee_skew(z * jd - jd * transpose(z)) - rhs;
}

// d/dphi vee(Z Jd - Jd Z^T) with Z = exp(phi): column i of A is
// vee(Z hat(e_i) Jd + Jd hat(e_i) Z^T); the full Jacobian is A Jr(phi).
inline Mat3d rotation_jacobian(const Vec3d& phi, const Mat3d& jd) {
  const Mat3d z = lie::exp_so3(phi);
  Mat3d a;
  for (int i = 0; i < 3; ++i) {
    Vec3d e{};
    e[static_cast<std::size_t>(i)] = 1.0;
    const Mat3d k = lie::hat(e);
    const Vec3d col = lie::vee_skew(z * k * jd + jd * k * transpose(z));
    for (int r = 0; r < 3; ++r) a(r, i) = col[static_cast<std::size_t>(r)];
  }
  return a * lie::right_jacobian(phi);
}

inline Mat3d rotation_jacobian_fd(const Vec3d& phi, const Mat3d& jd, double step) {
  Mat3d out;
  const Vec3d zero{};
  for (int i = 0; i < 3; ++i) {
    Vec3d p = phi;
    Vec3d q = phi;
    p[static_cast<std::size_t>(i)] += step;
    q[static_cast<std::size_t>(i)] -= step;
    const Vec3d col = (0.5 / step) * (rotation_residual(p, jd, zero) - rotation_residual(q, jd, zero));
    for (int r = 0; r < 3; ++r) out(r, i) = col[static_cast<std::size_t>(r)];
  }
  return out;
}

}  // namespace detail

inline Mat3d rotation_residual_jacobian(const Vec3d& phi, const Mat3d& jd) {
  return detail::rotation_jacobian(phi, jd);
}

// Solves h S(J w) + h S(fR-) + (1-a) h^2 S(xi) = Z Jd - Jd Z^T for Z = exp(phi).
//
// Newton iterations start at phi = h w. The Jacobian is evaluated on values
// only, so in-tape each iteration reads phi <- phi - Jinv g(phi); once the
// residual is below tolerance one further such step is recorded, which makes
// the propagated derivative the implicit-function derivative at the solution.
template <class T>
RotationSolve<T> solve_Z(const VehicleParams& p, const Vec3<T>& w, const Vec3<T>& fR_minus, const Vec3<T>& xi,
                         const NewtonOptions& opt = {}) {
  const double h = p.h;
  const Vec3<T> rhs = h * (p.J * w) + h * fR_minus + ((1.0 - p.alpha) * h * h) * xi;
  Vec3<T> phi = h * w;

  auto residual = [&](const Mat3<T>& z) { return lie::vee_skew(z * p.Jd - p.Jd * transpose(z)) - rhs; };
  auto newton_update = [&](const Vec3<T>& g) {
    const Vec3d pv = value_of(phi);
    const Mat3d jac = opt.analytic_jacobian ? detail::rotation_jacobian(pv, p.Jd)
                                            : detail::rotation_jacobian_fd(pv, p.Jd, opt.fd_step);
    if (std::abs(det(jac)) < 1e-300) throw NoConvergence("singular Newton Jacobian");
    phi = phi - inverse(jac) * g;
  };

  Mat3<T> z = lie::exp_so3(phi);
  Vec3<T> g = residual(z);
  double r = norm(value_of(g));
  int iter = 0;
  while (r > opt.tolerance && iter < opt.max_iterations) {
    newton_update(g);
    ++iter;
    z = lie::exp_so3(phi);
    g = residual(z);
    r = norm(value_of(g));
    if (!std::isfinite(r)) break;
  }
  if (!(r <= opt.accept_residual)) {
    throw NoConvergence("rotation residual " + std::to_string(r) + " after " + std::to_string(iter) +
                        " Newton iterations; check timestep and inertia scaling");
  }
  newton_update(g);
  z = lie::exp_so3(phi);
  const double final_r = norm(value_of(residual(z)));
  return {z, {iter, final_r}};
}

template <class T>
struct StepResult {
  State<T> next;
  PotentialGrad<T> dU_next;
  SolveStats solve;
  bool reprojected = false;
};

inline constexpr double kReprojectionThreshold = 1e-9;

// One step of the forced update map. `potential_at(x, R)` supplies the
// potential gradient at the new pose.
template <class T, class PotentialAt>
StepResult<T> step(const State<T>& s, const PotentialGrad<T>& dU, PotentialAt&& potential_at,
                   const ForceWrench<T>& f, const VehicleParams& p, const NewtonOptions& opt = {}) {
  const double h = p.h;
  const double a = p.alpha;
  const double inv_m = 1.0 / p.m;

  StepResult<T> out;
  State<T>& n = out.next;
  const Vec3<T> Rf_minus = s.R * f.fx_minus;
  n.x = s.x + h * s.v - ((1.0 - a) * h * h * inv_m) * dU.dU_dx + (h * inv_m) * Rf_minus;

  const Vec3<T> xi = potential_xi(s.R, dU.dU_dR);
  RotationSolve<T> sol = solve_Z(p, s.w, f.fR_minus, xi, opt);
  out.solve = sol.stats;
  const Mat3<T>& Z = sol.Z;
  n.R = s.R * Z;
  if (lie::orthogonality_error(value_of(n.R)) > kReprojectionThreshold) {
    n.R = lie::project_to_rotation(n.R);
    out.reprojected = true;
  }

  out.dU_next = potential_at(n.x, n.R);
  const Vec3<T> xi_next = potential_xi(n.R, out.dU_next.dU_dR);

  const Vec3<T> dv = (-(1.0 - a) * h) * dU.dU_dx - (a * h) * out.dU_next.dU_dx + Rf_minus + n.R * f.fx_plus;
  n.v = s.v + inv_m * dv;

  const Mat3<T> Zt = transpose(Z);
  const Vec3<T> jw = Zt * (p.J * s.w) + ((1.0 - a) * h) * (Zt * xi) + (a * h) * xi_next + Zt * f.fR_minus +
                     f.fR_plus;
  n.w = p.J_inv * jw;
  return out;
}

struct RolloutStats {
  int reprojections = 0;
  int max_newton_iterations = 0;
  double max_residual = 0.0;

  void record(const SolveStats& s, bool reprojected) {
    reprojections += reprojected ? 1 : 0;
    max_newton_iterations = std::max(max_newton_iterations, s.iterations);
    max_residual = std::max(max_residual, s.residual);
  }
};

// A dynamics model supplies the potential gradient at a pose and the continuous
// body-frame wrench for a state/action pair.
template <class M, class T>
concept DynamicsModelFor = requires(const M& m, const Vec3<T>& x, const Mat3<T>& R, const State<T>& s,
                                    const Action& a, const Observation& b) {
  { m.template potential<T>(x, R) } -> std::same_as<PotentialGrad<T>>;
  { m.template force<T>(s, a, b) } -> std::same_as<Wrench<T>>;
};

template <class T, class Model>
  requires DynamicsModelFor<Model, T>
std::vector<State<T>> rollout(const State<T>& s0, std::span<const Action> actions, const Observation& b0,
                              const Model& model, const VehicleParams& p, int n, RolloutStats* stats = nullptr,
                              const NewtonOptions& opt = {}) {
  if (n < 0) throw LengthMismatch("negative rollout horizon");
  if (actions.size() < static_cast<std::size_t>(n)) {
    throw LengthMismatch("rollout of " + std::to_string(n) + " steps needs as many actions, got " +
                         std::to_string(actions.size()));
  }
  std::vector<State<T>> out;
  out.reserve(static_cast<std::size_t>(n));
  if (n == 0) return out;
  auto potential_at = [&](const Vec3<T>& x, const Mat3<T>& R) { return model.template potential<T>(x, R); };
  State<T> s = s0;
  PotentialGrad<T> dU = potential_at(s.x, s.R);
  for (int t = 0; t < n; ++t) {
    const Wrench<T> f = model.template force<T>(s, actions[static_cast<std::size_t>(t)], b0);
    StepResult<T> r;
    try {
      r = step(s, dU, potential_at, split_force(f, p.alpha, p.h), p, opt);
    } catch (const NoConvergence& e) {
      throw NoConvergence("rollout step " + std::to_string(t) + ": " + e.what());
    }
    if (stats) stats->record(r.solve, r.reprojected);
    s = r.next;
    dU = r.dU_next;
    out.push_back(s);
  }
  return out;
}

// Potential and force identically zero: the free rigid body.
struct ZeroDynamics {
  template <class T>
  PotentialGrad<T> potential(const Vec3<T>&, const Mat3<T>&) const {
    return {};
  }
  template <class T>
  Wrench<T> force(const State<T>&, const Action&, const Observation&) const {
    return {};
  }
};

}  // namespace physord
