#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include "physord/linalg.hpp"
#include "physord/liegroup.hpp"

namespace physord {

// Vehicle state: world-frame position and linear velocity, body-to-world
// rotation, body-frame angular velocity.
template <class T>
struct State {
  Vec3<T> x;
  Mat3<T> R = Mat3<T>::identity();
  Vec3<T> v;
  Vec3<T> w;
};

using StateD = State<double>;

template <class T>
State<T> lift(const StateD& s) {
  return {lift<T>(s.x), lift<T>(s.R), lift<T>(s.v), lift<T>(s.w)};
}

template <class T>
StateD value_of(const State<T>& s) {
  return {value_of(s.x), value_of(s.R), value_of(s.v), value_of(s.w)};
}

inline bool is_valid(const StateD& s, double rot_tol = 1e-9) {
  return all_finite(s.x) && all_finite(s.v) && all_finite(s.w) && lie::is_rotation(s.R, rot_tol);
}

struct Action {
  double throttle = 0.0;
  double steering = 0.0;
  double brake = 0.0;

  Action clamped() const {
    return {std::clamp(throttle, 0.0, 1.0), std::clamp(steering, -1.0, 1.0), std::clamp(brake, 0.0, 1.0)};
  }
};

// Per-wheel speed minus vehicle speed at the start of a sequence (m/s).
struct Observation {
  std::array<double, 4> wheel_disc{};
};

// Continuous body-frame force and torque as produced by a force model.
template <class T>
struct Wrench {
  Vec3<T> force;
  Vec3<T> torque;
};

// Discrete forcing pair entering the update map; body frame.
template <class T>
struct ForceWrench {
  Vec3<T> fx_minus;
  Vec3<T> fx_plus;
  Vec3<T> fR_minus;
  Vec3<T> fR_plus;
};

template <class T>
struct PotentialGrad {
  Vec3<T> dU_dx;
  Mat3<T> dU_dR;
};

}  // namespace physord
