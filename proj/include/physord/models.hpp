#pragma once

// Learned potential-gradient and force models, their ablation variants, and
// the pure-neural state-update model.

#include <array>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "physord/errors.hpp"
#include "physord/integrator.hpp"
#include "physord/liegroup.hpp"
#include "physord/mlp.hpp"
#include "physord/types.hpp"

namespace physord {

enum class ForceMode { mlp, scaled_action };
enum class PotentialMode { derivative_mlp, scalar_mlp };

inline constexpr int kPoseDim = 12;
inline constexpr int kForceInputDim = 13;
inline constexpr int kHiddenPotential = 10;
inline constexpr int kHiddenForce = 64;

struct Variant {
  ForceMode force = ForceMode::mlp;
  PotentialMode potential = PotentialMode::derivative_mlp;
  bool symbolic = true;

  // "full" (default), "phys" (no symbolic model), "f" (scaled-action force),
  // "u" (scalar potential differentiated by reverse mode).
  static Variant from_name(const std::string& name) {
    if (name == "full") return {};
    if (name == "phys") return {ForceMode::mlp, PotentialMode::derivative_mlp, false};
    if (name == "f") return {ForceMode::scaled_action, PotentialMode::derivative_mlp, true};
    if (name == "u") return {ForceMode::mlp, PotentialMode::scalar_mlp, true};
    throw ConfigError("unknown variant '" + name + "' (expected full|phys|f|u)");
  }

  std::string name() const {
    if (!symbolic) return "phys";
    if (force == ForceMode::scaled_action) return "f";
    if (potential == PotentialMode::scalar_mlp) return "u";
    return "full";
  }

  friend bool operator==(const Variant&, const Variant&) = default;
};

inline nn::MlpSpec potential_spec(PotentialMode mode, nn::Activation act) {
  const int out = mode == PotentialMode::derivative_mlp ? kPoseDim : 1;
  return {{{kPoseDim, kHiddenPotential}, {kHiddenPotential, out}}, act};
}

inline nn::MlpSpec force_spec(nn::Activation act) {
  return {{{kForceInputDim, kHiddenForce}, {kHiddenForce, kHiddenForce}, {kHiddenForce, 6}}, act};
}

inline constexpr double kOutputInitScale = 0.1;

class DynamicsModels {
 public:
  DynamicsModels() : DynamicsModels(Variant{}) {}

  explicit DynamicsModels(Variant variant, nn::Activation act = nn::Activation::tanh)
      : variant_(variant), du_net_(potential_spec(variant.potential, act)) {
    if (variant.force == ForceMode::mlp) f_net_ = nn::Mlp(force_spec(act));
  }

  static DynamicsModels initialized(Variant variant, std::uint64_t seed, nn::Activation act = nn::Activation::tanh) {
    DynamicsModels m(variant, act);
    std::mt19937_64 rng(seed);
    m.du_net_.init(rng);
    if (m.has_force_net()) m.f_net_.init(rng);
    // Small output layers: an untrained model starts near force-free motion.
    m.du_net_.scale_output_layer(kOutputInitScale);
    if (m.has_force_net()) m.f_net_.scale_output_layer(kOutputInitScale);
    return m;
  }

  const Variant& variant() const { return variant_; }
  bool has_force_net() const { return variant_.force == ForceMode::mlp; }

  nn::Mlp& du_net() { return du_net_; }
  const nn::Mlp& du_net() const { return du_net_; }
  nn::Mlp& f_net() { return f_net_; }
  const nn::Mlp& f_net() const { return f_net_; }
  std::array<double, 3>& gains() { return gains_; }
  const std::array<double, 3>& gains() const { return gains_; }

  // Trainable parameter blocks in declaration order with their gradient keys.
  struct Block {
    std::span<double> values;
    const void* key;
  };
  std::vector<Block> blocks() {
    std::vector<Block> out{{du_net_.params(), &du_net_}};
    if (has_force_net()) {
      out.push_back({f_net_.params(), &f_net_});
    } else {
      out.push_back({std::span<double>(gains_), &gains_});
    }
    return out;
  }

  std::size_t param_count() const {
    return du_net_.param_count() + (has_force_net() ? f_net_.param_count() : gains_.size());
  }

  std::vector<double> flat_params() const {
    std::vector<double> out;
    out.reserve(param_count());
    auto& self = const_cast<DynamicsModels&>(*this);
    for (const auto& b : self.blocks()) out.insert(out.end(), b.values.begin(), b.values.end());
    return out;
  }

  void set_flat_params(std::span<const double> p) {
    if (p.size() != param_count()) throw DimMismatch("flat parameter vector has the wrong length");
    std::size_t off = 0;
    for (auto& b : blocks()) {
      std::copy(p.begin() + static_cast<std::ptrdiff_t>(off),
                p.begin() + static_cast<std::ptrdiff_t>(off + b.values.size()), b.values.begin());
      off += b.values.size();
    }
  }

  // Gradients accumulated on `tape` in flat_params() order.
  std::vector<double> flat_grads(const ad::Tape& tape) const {
    std::vector<double> out;
    out.reserve(param_count());
    auto& self = const_cast<DynamicsModels&>(*this);
    for (const auto& b : self.blocks()) {
      const std::vector<double>* g = tape.find_param_grad(b.key);
      for (std::size_t i = 0; i < b.values.size(); ++i) out.push_back(g != nullptr && i < g->size() ? (*g)[i] : 0.0);
    }
    return out;
  }

 private:
  Variant variant_;
  nn::Mlp du_net_;
  nn::Mlp f_net_;
  std::array<double, 3> gains_{};  // k_throttle, k_brake, k_steer
};

template <class T>
std::array<T, kPoseDim> pose_input(const Vec3<T>& x, const Mat3<T>& R) {
  std::array<T, kPoseDim> in;
  for (std::size_t i = 0; i < 3; ++i) in[i] = x[i];
  for (std::size_t i = 0; i < 9; ++i) in[3 + i] = R.a[i];
  return in;
}

template <class T>
std::array<T, kForceInputDim> force_input(const Vec3<T>& v_body, const Vec3<T>& w, const Action& a,
                                          const Observation& b0) {
  std::array<T, kForceInputDim> in;
  for (std::size_t i = 0; i < 3; ++i) {
    in[i] = v_body[i];
    in[3 + i] = w[i];
  }
  in[6] = T(a.throttle);
  in[7] = T(a.steering);
  in[8] = T(a.brake);
  for (std::size_t i = 0; i < 4; ++i) in[9 + i] = T(b0.wheel_disc[i]);
  return in;
}

template <class T>
PotentialGrad<T> potential_from_vector(std::span<const T> out) {
  PotentialGrad<T> g;
  for (std::size_t i = 0; i < 3; ++i) g.dU_dx[i] = out[i];
  for (std::size_t i = 0; i < 9; ++i) g.dU_dR.a[i] = out[3 + i];
  return g;
}

// Potential gradient predicted directly by the 12 -> 10 -> 12 network.
template <class T>
PotentialGrad<T> du_theta(const DynamicsModels& m, const Vec3<T>& x, const Mat3<T>& R) {
  const auto in = pose_input(x, R);
  const std::vector<T> out = m.du_net().forward(std::span<const T>(in));
  return potential_from_vector<T>(out);
}

// Potential gradient as the input-gradient of a scalar potential network.
template <class T>
PotentialGrad<T> du_scalar(const DynamicsModels& m, const Vec3<T>& x, const Mat3<T>& R) {
  const auto in = pose_input(x, R);
  const std::vector<T> g = nn::input_gradient<T>(m.du_net(), std::span<const T>(in));
  return potential_from_vector<T>(g);
}

// Continuous body-frame wrench from the 13 -> 64 -> 64 -> 6 network. The
// linear velocity input is expressed in the body frame.
template <class T>
Wrench<T> f_theta(const DynamicsModels& m, const Vec3<T>& v_body, const Vec3<T>& w, const Action& a,
                  const Observation& b0) {
  const auto in = force_input(v_body, w, a, b0);
  const std::vector<T> out = m.f_net().forward(std::span<const T>(in));
  return {{out[0], out[1], out[2]}, {out[3], out[4], out[5]}};
}

// Force (k_t throttle - k_b brake, 0, 0), torque (0, 0, k_s steering).
template <class T>
Wrench<T> f_scaled_action(const DynamicsModels& m, const Action& a) {
  const std::vector<T> k = nn::params_as<T>(std::span<const double>(m.gains()), &m.gains());
  Wrench<T> f;
  f.force[0] = k[0] * a.throttle - k[1] * a.brake;
  f.torque[2] = k[2] * a.steering;
  return f;
}

template <class T>
PotentialGrad<T> model_potential(const DynamicsModels& m, const Vec3<T>& x, const Mat3<T>& R) {
  return m.variant().potential == PotentialMode::derivative_mlp ? du_theta(m, x, R) : du_scalar(m, x, R);
}

template <class T>
Wrench<T> model_force(const DynamicsModels& m, const State<T>& s, const Action& a, const Observation& b0) {
  if (m.variant().force == ForceMode::scaled_action) return f_scaled_action<T>(m, a);
  return f_theta(m, transpose(s.R) * s.v, s.w, a, b0);
}

// Adapter exposing learned models to the integrator rollout.
struct LearnedDynamics {
  const DynamicsModels& models;

  template <class T>
  PotentialGrad<T> potential(const Vec3<T>& x, const Mat3<T>& R) const {
    return model_potential(models, x, R);
  }
  template <class T>
  Wrench<T> force(const State<T>& s, const Action& a, const Observation& b0) const {
    return model_force(models, s, a, b0);
  }
};

// Pure-neural update. The velocity network maps (v_body, w, a, b0) to
// (dv_body, dw); the pose network maps [v_body, w, dv_body, dw] to body-frame
// (dx, dtheta) in its first six outputs. No Euler-Lagrange structure.
template <class T>
State<T> pure_neural_step(const State<T>& s, const Action& a, const Observation& b0, const DynamicsModels& m) {
  const Vec3<T> v_body = transpose(s.R) * s.v;
  const auto fin = force_input(v_body, s.w, a, b0);
  const std::vector<T> dq = m.f_net().forward(std::span<const T>(fin));
  std::array<T, kPoseDim> pin;
  for (std::size_t i = 0; i < 3; ++i) {
    pin[i] = v_body[i];
    pin[3 + i] = s.w[i];
  }
  for (std::size_t i = 0; i < 6; ++i) pin[6 + i] = dq[i];
  const std::vector<T> dp = m.du_net().forward(std::span<const T>(pin));
  State<T> n;
  n.x = s.x + s.R * Vec3<T>{dp[0], dp[1], dp[2]};
  n.R = lie::project_to_rotation(s.R * lie::exp_so3(Vec3<T>{dp[3], dp[4], dp[5]}));
  n.v = s.v + s.R * Vec3<T>{dq[0], dq[1], dq[2]};
  n.w = s.w + Vec3<T>{dq[3], dq[4], dq[5]};
  return n;
}

// n-step prediction with whichever structure the variant selects.
template <class T>
std::vector<State<T>> predict(const DynamicsModels& m, const State<T>& s0, std::span<const Action> actions,
                              const Observation& b0, const VehicleParams& p, int n, RolloutStats* stats = nullptr) {
  if (m.variant().symbolic) return rollout(s0, actions, b0, LearnedDynamics{m}, p, n, stats);
  if (actions.size() < static_cast<std::size_t>(n)) throw LengthMismatch("not enough actions for prediction");
  std::vector<State<T>> out;
  out.reserve(static_cast<std::size_t>(n));
  State<T> s = s0;
  for (int t = 0; t < n; ++t) {
    s = pure_neural_step(s, actions[static_cast<std::size_t>(t)], b0, m);
    out.push_back(s);
  }
  return out;
}

}  // namespace physord
