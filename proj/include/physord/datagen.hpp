#pragma once

// Synthetic off-road world: seeded sinusoidal terrain, a terrain-following
// support potential, a slip-dependent drive/brake/steer force law, and a
// trajectory generator that integrates it with the variational step at a
// 100x finer timestep.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "physord/errors.hpp"
#include "physord/integrator.hpp"
#include "physord/liegroup.hpp"
#include "physord/parallel.hpp"
#include "physord/types.hpp"

namespace physord {

struct TerrainClass {
  std::string tag;
  double slip = 0.0;  // drive efficiency is 1 - slip
  double bump = 0.0;  // terrain amplitude scale (m)
};

inline std::vector<TerrainClass> default_terrain_classes() {
  return {{"gravel", 0.20, 0.15}, {"plant", 0.25, 0.10}, {"dirt", 0.15, 0.10}, {"mud", 0.45, 0.05},
          {"puddle", 0.35, 0.03}, {"rock", 0.10, 0.30}, {"cement", 0.05, 0.00}};
}

enum class ActionPolicy { random_walk, scripted_turns, none };

inline std::string to_string(ActionPolicy p) {
  switch (p) {
    case ActionPolicy::random_walk: return "random_walk";
    case ActionPolicy::scripted_turns: return "scripted_turns";
    case ActionPolicy::none: return "none";
  }
  return "none";
}

inline ActionPolicy policy_from_string(const std::string& s) {
  if (s == "random_walk") return ActionPolicy::random_walk;
  if (s == "scripted_turns") return ActionPolicy::scripted_turns;
  if (s == "none") return ActionPolicy::none;
  throw ConfigError("unknown action policy '" + s + "'");
}

struct WorldSpec {
  double gravity = 9.81;
  double mass = 1.0;
  std::array<double, 3> inertia{0.1, 0.15, 0.2};
  double dt = 0.1;
  int substeps = 100;
  double alpha = 0.5;

  double support_stiffness = 6.0;
  double upright_stiffness = 0.6;
  double support_damping = 2.0;
  double roll_pitch_damping = 0.2;
  double yaw_damping = 0.2;
  double lateral_grip = 4.0;

  double k_throttle = 2.5;
  double k_brake = 3.0;
  double k_steer = 0.1;
  double drag = 0.3;

  double force_jitter = 0.05;
  double obs_jitter = 0.02;
  double speed_min = 1.0;
  double speed_max = 4.0;
  double spawn_half_width = 100.0;
  bool flat = false;
  bool level_start = false;  // upright, at rest, heading +x at the origin

  std::vector<TerrainClass> terrains = default_terrain_classes();
  ActionPolicy policy = ActionPolicy::random_walk;

  VehicleParams vehicle(double h) const {
    return VehicleParams::make(mass, Mat3d::diag(inertia[0], inertia[1], inertia[2]), alpha, h);
  }
  double fine_step() const { return dt / substeps; }

  void validate() const {
    if (!(gravity > 0.0)) throw ConfigError("gravity must be positive");
    if (!(dt > 0.0) || substeps < 1) throw ConfigError("dt must be positive and substeps >= 1");
    if (force_jitter < 0.0 || obs_jitter < 0.0) throw ConfigError("noise levels must be non-negative");
    if (!(support_stiffness > 0.0)) throw ConfigError("support_stiffness must be positive");
    if (terrains.empty()) throw ConfigError("at least one terrain class is required");
    if (speed_min < 0.0 || speed_max < speed_min) throw ConfigError("invalid speed range");
    vehicle(fine_step());
  }
};

inline void to_json(nlohmann::json& j, const TerrainClass& t) {
  j = {{"tag", t.tag}, {"slip", t.slip}, {"bump", t.bump}};
}
inline void from_json(const nlohmann::json& j, TerrainClass& t) {
  t.tag = j.at("tag").get<std::string>();
  t.slip = j.value("slip", 0.0);
  t.bump = j.value("bump", 0.0);
}

inline nlohmann::json world_to_json(const WorldSpec& w) {
  return {{"gravity", w.gravity},
          {"mass", w.mass},
          {"inertia", w.inertia},
          {"dt", w.dt},
          {"substeps", w.substeps},
          {"alpha", w.alpha},
          {"support_stiffness", w.support_stiffness},
          {"upright_stiffness", w.upright_stiffness},
          {"support_damping", w.support_damping},
          {"roll_pitch_damping", w.roll_pitch_damping},
          {"yaw_damping", w.yaw_damping},
          {"lateral_grip", w.lateral_grip},
          {"k_throttle", w.k_throttle},
          {"k_brake", w.k_brake},
          {"k_steer", w.k_steer},
          {"drag", w.drag},
          {"force_jitter", w.force_jitter},
          {"obs_jitter", w.obs_jitter},
          {"speed_min", w.speed_min},
          {"speed_max", w.speed_max},
          {"spawn_half_width", w.spawn_half_width},
          {"flat", w.flat},
          {"level_start", w.level_start},
          {"terrains", w.terrains},
          {"policy", to_string(w.policy)}};
}

// Missing keys keep their defaults; unknown keys are rejected.
inline WorldSpec world_from_json(const nlohmann::json& j) {
  WorldSpec w;
  if (!j.is_object()) throw ConfigError("world spec must be a JSON object");
  const nlohmann::json known = world_to_json(w);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw ConfigError("unknown world key '" + it.key() + "'");
  }
  try {
    auto get = [&](const char* k, auto& field) {
      if (j.contains(k)) field = j.at(k).get<std::decay_t<decltype(field)>>();
    };
    get("gravity", w.gravity);
    get("mass", w.mass);
    get("inertia", w.inertia);
    get("dt", w.dt);
    get("substeps", w.substeps);
    get("alpha", w.alpha);
    get("support_stiffness", w.support_stiffness);
    get("upright_stiffness", w.upright_stiffness);
    get("support_damping", w.support_damping);
    get("roll_pitch_damping", w.roll_pitch_damping);
    get("yaw_damping", w.yaw_damping);
    get("lateral_grip", w.lateral_grip);
    get("k_throttle", w.k_throttle);
    get("k_brake", w.k_brake);
    get("k_steer", w.k_steer);
    get("drag", w.drag);
    get("force_jitter", w.force_jitter);
    get("obs_jitter", w.obs_jitter);
    get("speed_min", w.speed_min);
    get("speed_max", w.speed_max);
    get("spawn_half_width", w.spawn_half_width);
    get("flat", w.flat);
    get("level_start", w.level_start);
    get("terrains", w.terrains);
    if (j.contains("policy")) w.policy = policy_from_string(j.at("policy").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("world spec: ") + e.what());
  }
  w.validate();
  return w;
}

// splitmix64 finalizer; derives independent per-trajectory seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t trajectory_seed(std::uint64_t master, std::size_t index) {
  return mix_seed(master ^ mix_seed(static_cast<std::uint64_t>(index) + 1));
}

// Height field z = sum_k A_k sin(kx_k x + ky_k y + phase_k).
class Terrain {
 public:
  struct Wave {
    double amp, kx, ky, phase;
  };

  Terrain() = default;

  static Terrain generate(double bump, std::uint64_t seed) {
    Terrain t;
    if (bump <= 0.0) return t;
    std::mt19937_64 rng(mix_seed(seed ^ 0x7465727261696eULL));
    std::uniform_real_distribution<double> amp(0.5, 1.0);
    std::uniform_real_distribution<double> wavelength(15.0, 40.0);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    for (int k = 0; k < 4; ++k) {
      const double a = bump * amp(rng) / 2.0;
      const double kn = 2.0 * std::numbers::pi / wavelength(rng);
      const double dir = angle(rng);
      t.waves_.push_back({a, kn * std::cos(dir), kn * std::sin(dir), angle(rng)});
    }
    return t;
  }

  double height(double x, double y) const {
    double z = 0.0;
    for (const auto& w : waves_) z += w.amp * std::sin(w.kx * x + w.ky * y + w.phase);
    return z;
  }

  // (z_x, z_y)
  std::array<double, 2> gradient(double x, double y) const {
    std::array<double, 2> g{};
    for (const auto& w : waves_) {
      const double c = w.amp * std::cos(w.kx * x + w.ky * y + w.phase);
      g[0] += c * w.kx;
      g[1] += c * w.ky;
    }
    return g;
  }

  // (z_xx, z_xy, z_yy)
  std::array<double, 3> hessian(double x, double y) const {
    std::array<double, 3> h{};
    for (const auto& w : waves_) {
      const double s = -w.amp * std::sin(w.kx * x + w.ky * y + w.phase);
      h[0] += s * w.kx * w.kx;
      h[1] += s * w.kx * w.ky;
      h[2] += s * w.ky * w.ky;
    }
    return h;
  }

  // Unit upward normal.
  Vec3d normal(double x, double y) const {
    const auto g = gradient(x, y);
    const double s = std::sqrt(1.0 + g[0] * g[0] + g[1] * g[1]);
    return {-g[0] / s, -g[1] / s, 1.0 / s};
  }

  const std::vector<Wave>& waves() const { return waves_; }

 private:
  std::vector<Wave> waves_;
};

// Ground-truth dynamics of one trajectory: its terrain and terrain class.
class TrueDynamics {
 public:
  TrueDynamics(const WorldSpec& world, const TerrainClass& cls, std::uint64_t seed)
      : w_(world), cls_(cls), terrain_(world.flat ? Terrain{} : Terrain::generate(cls.bump, seed)) {}

  const Terrain& terrain() const { return terrain_; }
  const TerrainClass& terrain_class() const { return cls_; }
  const WorldSpec& world() const { return w_; }

  // U = m g z + k_z/2 (z - z_t - m g / k_z)^2 + k_r/2 |R e3 - n|^2
  double energy_potential(const Vec3d& x, const Mat3d& R) const {
    const double c = w_.mass * w_.gravity / w_.support_stiffness;
    const double s = x[2] - terrain_.height(x[0], x[1]) - c;
    const Vec3d d = Vec3d{R(0, 2), R(1, 2), R(2, 2)} - terrain_.normal(x[0], x[1]);
    return w_.mass * w_.gravity * x[2] + 0.5 * w_.support_stiffness * s * s + 0.5 * w_.upright_stiffness * dot(d, d);
  }

  double energy(const StateD& s) const {
    const Mat3d J = Mat3d::diag(w_.inertia[0], w_.inertia[1], w_.inertia[2]);
    return 0.5 * w_.mass * dot(s.v, s.v) + 0.5 * dot(s.w, J * s.w) + energy_potential(s.x, s.R);
  }

  template <class T>
  PotentialGrad<T> potential(const Vec3<T>& x, const Mat3<T>& R) const {
    static_assert(std::is_same_v<T, double>, "the ground-truth world is evaluated in double precision");
    const double c = w_.mass * w_.gravity / w_.support_stiffness;
    const double s = x[2] - terrain_.height(x[0], x[1]) - c;
    const auto g = terrain_.gradient(x[0], x[1]);
    const auto hs = terrain_.hessian(x[0], x[1]);
    const Vec3d n = terrain_.normal(x[0], x[1]);
    const Vec3d d = Vec3d{R(0, 2), R(1, 2), R(2, 2)} - n;

    // n = u / |u| with u = (-z_x, -z_y, 1).
    const double q = std::sqrt(1.0 + g[0] * g[0] + g[1] * g[1]);
    const Vec3d u{-g[0], -g[1], 1.0};
    const Vec3d dn_dzx = (1.0 / q) * Vec3d{-1.0, 0.0, 0.0} - (g[0] / (q * q * q)) * u;
    const Vec3d dn_dzy = (1.0 / q) * Vec3d{0.0, -1.0, 0.0} - (g[1] / (q * q * q)) * u;
    const Vec3d dn_dx = hs[0] * dn_dzx + hs[1] * dn_dzy;
    const Vec3d dn_dy = hs[1] * dn_dzx + hs[2] * dn_dzy;

    PotentialGrad<double> out;
    const double ks = w_.support_stiffness;
    const double kr = w_.upright_stiffness;
    out.dU_dx[0] = -ks * s * g[0] - kr * dot(d, dn_dx);
    out.dU_dx[1] = -ks * s * g[1] - kr * dot(d, dn_dy);
    out.dU_dx[2] = w_.mass * w_.gravity + ks * s;
    for (std::size_t i = 0; i < 3; ++i) out.dU_dR(i, 2) = kr * d[i];
    return out;
  }

  // Noise-free body-frame wrench.
  template <class T>
  Wrench<T> force(const State<T>& s, const Action& a, const Observation&) const {
    static_assert(std::is_same_v<T, double>, "the ground-truth world is evaluated in double precision");
    const Vec3d vb = transpose(s.R) * s.v;
    const double eta = 1.0 - cls_.slip;
    Wrench<double> f;
    f.force[0] = w_.k_throttle * eta * a.throttle - w_.k_brake * a.brake - w_.drag * vb[0];
    f.force[1] = -w_.lateral_grip * vb[1];
    f.force[2] = -w_.support_damping * vb[2];
    f.torque[0] = -w_.roll_pitch_damping * s.w[0];
    f.torque[1] = -w_.roll_pitch_damping * s.w[1];
    f.torque[2] = w_.k_steer * a.steering - w_.yaw_damping * s.w[2];
    return f;
  }

  // Wheel-speed discrepancy model: slip * v0 * per-wheel factor + jitter.
  Observation observe(double speed, std::mt19937_64& rng) const {
    static constexpr std::array<double, 4> kWheel{1.0, 1.1, 0.9, 1.05};
    std::normal_distribution<double> noise(0.0, 1.0);
    Observation b;
    for (std::size_t i = 0; i < 4; ++i) b.wheel_disc[i] = cls_.slip * speed * kWheel[i] + w_.obs_jitter * noise(rng);
    return b;
  }

  // Integrates one coarse interval with `substeps` fine steps and a constant
  // jitter wrench; returns the state at the end of the interval.
  StateD advance(const StateD& s0, const Action& a, const Wrench<double>& jitter, int substeps,
                 const VehicleParams& fine) const {
    StateD s = s0;
    PotentialGrad<double> dU = potential<double>(s.x, s.R);
    auto at = [this](const Vec3d& x, const Mat3d& R) { return potential<double>(x, R); };
    for (int k = 0; k < substeps; ++k) {
      Wrench<double> f = force<double>(s, a, Observation{});
      f.force = f.force + jitter.force;
      f.torque = f.torque + jitter.torque;
      auto r = step(s, dU, at, split_force(f, fine.alpha, fine.h), fine);
      s = r.next;
      dU = r.dU_next;
    }
    return s;
  }

 private:
  WorldSpec w_;
  TerrainClass cls_;
  Terrain terrain_;
};

struct TrajectoryRecord {
  double dt = 0.1;
  std::string terrain_tag;
  Observation b0;
  std::uint64_t seed = 0;
  std::vector<StateD> states;  // state at t = k dt
  std::vector<Action> actions;  // action applied over [k dt, (k + 1) dt)

  std::size_t size() const { return states.size(); }
};

// Rotation with R e3 = n and heading psi about the terrain normal.
inline Mat3d terrain_aligned(const Vec3d& n, double psi) {
  const Vec3d e3{0.0, 0.0, 1.0};
  const Vec3d axis = cross(e3, n);
  const double s = norm(axis);
  Mat3d tilt = Mat3d::identity();
  if (s > 1e-15) tilt = lie::exp_so3((std::atan2(s, dot(e3, n)) / s) * axis);
  return tilt * lie::rot_z(psi);
}

class ActionSampler {
 public:
  ActionSampler(ActionPolicy policy, std::mt19937_64& rng) : policy_(policy), rng_(rng) {
    std::uniform_real_distribution<double> u(0.3, 0.8);
    throttle_ = u(rng_);
  }

  Action next(double forward_speed) {
    switch (policy_) {
      case ActionPolicy::none: return {};
      case ActionPolicy::random_walk: return random_walk(forward_speed);
      case ActionPolicy::scripted_turns: return scripted(forward_speed);
    }
    return {};
  }

 private:
  Action random_walk(double speed) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    throttle_ = std::clamp(throttle_ + 0.08 * n(rng_), 0.1, 1.0);
    steering_ = std::clamp(steering_ + 0.15 * n(rng_), -0.8, 0.8);
    update_brake(speed, u(rng_));
    return Action{brake_left_ > 0 ? 0.0 : throttle_, steering_, brake_left_ > 0 ? brake_ : 0.0}.clamped();
  }

  Action scripted(double speed) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (segment_left_ <= 0) {
      static constexpr std::array<double, 5> kSteer{-0.6, -0.3, 0.0, 0.3, 0.6};
      segment_left_ = 20 + static_cast<int>(u(rng_) * 31.0);
      steering_ = kSteer[static_cast<std::size_t>(u(rng_) * 5.0) % 5];
      throttle_ = 0.3 + 0.5 * u(rng_);
    }
    --segment_left_;
    update_brake(speed, u(rng_));
    return Action{brake_left_ > 0 ? 0.0 : throttle_, steering_, brake_left_ > 0 ? brake_ : 0.0}.clamped();
  }

  // Short brake pulses, only while moving forward briskly.
  void update_brake(double speed, double draw) {
    if (brake_left_ > 0) {
      --brake_left_;
      if (speed < 1.0) brake_left_ = 0;
      return;
    }
    if (speed > 2.0 && draw < 0.03) {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      brake_ = 0.3 + 0.4 * u(rng_);
      brake_left_ = 5 + static_cast<int>(u(rng_) * 6.0);
    }
  }

  ActionPolicy policy_;
  std::mt19937_64& rng_;
  double throttle_ = 0.5;
  double steering_ = 0.0;
  double brake_ = 0.0;
  int brake_left_ = 0;
  int segment_left_ = 0;
};

inline constexpr int kMinTrajectorySteps = 21;

inline std::size_t terrain_index_for(std::size_t trajectory, std::size_t n_classes) { return trajectory % n_classes; }

inline TrajectoryRecord generate_one(const WorldSpec& world, std::size_t index, std::uint64_t master_seed,
                                     int steps) {
  const std::uint64_t seed = trajectory_seed(master_seed, index);
  const TerrainClass& cls = world.terrains[terrain_index_for(index, world.terrains.size())];
  const TrueDynamics truth(world, cls, seed);
  const VehicleParams fine = world.vehicle(world.fine_step());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);

  StateD s;
  double speed = 0.0;
  if (!world.level_start) {
    const double px = (2.0 * u(rng) - 1.0) * world.spawn_half_width;
    const double py = (2.0 * u(rng) - 1.0) * world.spawn_half_width;
    const double psi = 2.0 * std::numbers::pi * u(rng);
    speed = world.speed_min + (world.speed_max - world.speed_min) * u(rng);
    s.x = {px, py, truth.terrain().height(px, py)};
    s.R = terrain_aligned(truth.terrain().normal(px, py), psi);
    s.v = speed * Vec3d{s.R(0, 0), s.R(1, 0), s.R(2, 0)};
  }

  TrajectoryRecord rec;
  rec.dt = world.dt;
  rec.terrain_tag = cls.tag;
  rec.seed = seed;
  rec.b0 = truth.observe(speed, rng);
  ActionSampler policy(world.policy, rng);
  rec.states.reserve(static_cast<std::size_t>(steps));
  rec.actions.reserve(static_cast<std::size_t>(steps));
  for (int k = 0; k < steps; ++k) {
    const Action a = policy.next((transpose(s.R) * s.v)[0]);
    Wrench<double> jitter;
    for (std::size_t i = 0; i < 3; ++i) jitter.force[i] = world.force_jitter * n(rng);
    for (std::size_t i = 0; i < 3; ++i) jitter.torque[i] = 0.1 * world.force_jitter * n(rng);
    rec.states.push_back(s);
    rec.actions.push_back(a);
    if (k + 1 < steps) s = truth.advance(s, a, jitter, world.substeps, fine);
  }
  return rec;
}

inline std::vector<TrajectoryRecord> generate(const WorldSpec& world, int n_traj, int steps, std::uint64_t seed) {
  world.validate();
  if (steps < kMinTrajectorySteps) {
    throw ConfigError("steps must be at least " + std::to_string(kMinTrajectorySteps) + ", got " +
                      std::to_string(steps));
  }
  if (n_traj < 1) throw ConfigError("at least one trajectory is required");
  std::vector<TrajectoryRecord> out(static_cast<std::size_t>(n_traj));
  parallel_for(out.size(), [&](std::size_t i) { out[i] = generate_one(world, i, seed, steps); });
  return out;
}

inline const TerrainClass& terrain_class_for(const WorldSpec& world, const std::string& tag) {
  for (const auto& c : world.terrains) {
    if (c.tag == tag) return c;
  }
  throw SchemaMismatch("terrain tag '" + tag + "' is not defined by the world spec");
}

// Noise-free ground-truth prediction for a sequence of a recorded trajectory.
inline std::vector<StateD> oracle_predict(const WorldSpec& world, const std::string& tag, std::uint64_t seed,
                                          const StateD& s0, std::span<const Action> actions, int n) {
  if (actions.size() < static_cast<std::size_t>(n)) throw LengthMismatch("not enough actions for prediction");
  const TrueDynamics truth(world, terrain_class_for(world, tag), seed);
  const VehicleParams fine = world.vehicle(world.fine_step());
  std::vector<StateD> out;
  StateD s = s0;
  for (int k = 0; k < n; ++k) {
    s = truth.advance(s, actions[static_cast<std::size_t>(k)], Wrench<double>{}, world.substeps, fine);
    out.push_back(s);
  }
  return out;
}

}  // namespace physord
