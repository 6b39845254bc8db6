#pragma once

// Comparison models: constant-velocity kinematics and a Kalman filter that
// fuses the constant-velocity prediction with a learned velocity
// pseudo-measurement.

#include <Eigen/Dense>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "physord/dataset_io.hpp"
#include "physord/errors.hpp"
#include "physord/liegroup.hpp"
#include "physord/mlp.hpp"
#include "physord/models.hpp"
#include "physord/serialize.hpp"
#include "physord/types.hpp"

namespace physord {

inline StateD constant_velocity_step(const StateD& s, double h) {
  StateD n = s;
  n.x = s.x + h * s.v;
  n.R = s.R * lie::exp_so3(h * s.w);
  return n;
}

inline std::vector<StateD> cv_rollout(const StateD& s0, double h, int n) {
  std::vector<StateD> out;
  out.reserve(static_cast<std::size_t>(std::max(n, 0)));
  StateD s = s0;
  for (int k = 0; k < n; ++k) {
    s = constant_velocity_step(s, h);
    out.push_back(s);
  }
  return out;
}

using Mat12 = Eigen::Matrix<double, 12, 12>;
using Vec12 = Eigen::Matrix<double, 12, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Vec6 = Eigen::Matrix<double, 6, 1>;

// Tangent coordinates (dx, dtheta, dv, dw); rotation error is R = R_hat exp(dtheta).
struct KfState {
  StateD mean;
  Mat12 cov = Mat12::Zero();
};

struct KfNoise {
  std::array<double, 12> q{};   // process noise per step
  std::array<double, 6> rm{};   // measurement noise on (v, w)

  static KfNoise uniform(double q_pose, double q_v, double q_w, double r_v, double r_w) {
    KfNoise n;
    for (int i = 0; i < 6; ++i) n.q[static_cast<std::size_t>(i)] = q_pose;
    for (int i = 6; i < 9; ++i) n.q[static_cast<std::size_t>(i)] = q_v;
    for (int i = 9; i < 12; ++i) n.q[static_cast<std::size_t>(i)] = q_w;
    for (int i = 0; i < 3; ++i) n.rm[static_cast<std::size_t>(i)] = r_v;
    for (int i = 3; i < 6; ++i) n.rm[static_cast<std::size_t>(i)] = r_w;
    return n;
  }
};

inline nn::MlpSpec measurement_spec(nn::Activation act = nn::Activation::tanh) { return force_spec(act); }

struct KfnsModel {
  nn::Mlp net{measurement_spec()};
  KfNoise noise = KfNoise::uniform(1e-4, 1e-2, 1e-2, 1e-2, 1e-2);
};

// Measurement net output: velocity change over one step, (dv in the current
// body frame, dw). Returns the pseudo-measurement (world v, body w).
inline Vec6 kf_measurement(const KfnsModel& m, const StateD& s, const Action& a, const Observation& b0) {
  const Vec3d vb = transpose(s.R) * s.v;
  const auto in = force_input<double>(vb, s.w, a, b0);
  const std::vector<double> d = m.net.forward(std::span<const double>(in));
  const Vec3d v_next = s.R * (vb + Vec3d{d[0], d[1], d[2]});
  Vec6 z;
  for (int i = 0; i < 3; ++i) {
    z(i) = v_next[static_cast<std::size_t>(i)];
    z(3 + i) = s.w[static_cast<std::size_t>(i)] + d[static_cast<std::size_t>(3 + i)];
  }
  return z;
}

inline Eigen::Matrix3d to_eigen(const Mat3d& m) {
  Eigen::Matrix3d e;
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) e(i, k) = m(static_cast<std::size_t>(i), static_cast<std::size_t>(k));
  return e;
}

inline double min_eigenvalue(const Mat12& p) {
  Eigen::SelfAdjointEigenSolver<Mat12> es(0.5 * (p + p.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

// Symmetrizes and floors eigenvalues at zero.
inline Mat12 repair_covariance(const Mat12& p) {
  const Mat12 sym = 0.5 * (p + p.transpose());
  Eigen::SelfAdjointEigenSolver<Mat12> es(sym);
  if (es.info() != Eigen::Success) throw CovarianceNotPSD("eigen-decomposition failed");
  Vec12 ev = es.eigenvalues().cwiseMax(0.0);
  Mat12 out = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  if (!out.allFinite()) throw CovarianceNotPSD("covariance has non-finite entries after repair");
  return out;
}

struct KfStep {
  KfState state;
  double min_eig_before_repair = 0.0;
};

inline KfStep kf_step(const KfnsModel& m, const KfState& k, const Action& a, const Observation& b0, double h) {
  // Pseudo-measurement from the current estimate, then constant-velocity predict.
  const Vec6 z = kf_measurement(m, k.mean, a, b0);

  KfState p;
  p.mean = constant_velocity_step(k.mean, h);
  Mat12 F = Mat12::Identity();
  F.block<3, 3>(0, 6) = h * Eigen::Matrix3d::Identity();
  const Vec3d hw = h * k.mean.w;
  F.block<3, 3>(3, 3) = to_eigen(transpose(lie::exp_so3(hw)));
  F.block<3, 3>(3, 9) = h * to_eigen(lie::right_jacobian(hw));
  Mat12 Q = Mat12::Zero();
  for (int i = 0; i < 12; ++i) Q(i, i) = m.noise.q[static_cast<std::size_t>(i)];
  p.cov = F * k.cov * F.transpose() + Q;

  // Update on the velocity block; pose rows of the gain are zeroed.
  Eigen::Matrix<double, 6, 12> H = Eigen::Matrix<double, 6, 12>::Zero();
  H.block<6, 6>(0, 6) = Mat6::Identity();
  Mat6 Rm = Mat6::Zero();
  for (int i = 0; i < 6; ++i) Rm(i, i) = m.noise.rm[static_cast<std::size_t>(i)];
  const Mat6 S = H * p.cov * H.transpose() + Rm;
  Eigen::Matrix<double, 12, 6> K = Eigen::Matrix<double, 12, 6>::Zero();
  const double s_norm = S.norm();
  if (s_norm > 0.0) {
    Eigen::LDLT<Mat6> ldlt(S);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() && std::abs(S.determinant()) > 1e-300) {
      K = (ldlt.solve(H * p.cov)).transpose();
    } else {
      K = p.cov * H.transpose() * S.completeOrthogonalDecomposition().pseudoInverse();
    }
  }
  K.topRows<6>().setZero();

  Vec6 innov;
  for (int i = 0; i < 3; ++i) {
    innov(i) = z(i) - p.mean.v[static_cast<std::size_t>(i)];
    innov(3 + i) = z(3 + i) - p.mean.w[static_cast<std::size_t>(i)];
  }
  const Vec12 dx = K * innov;
  for (int i = 0; i < 3; ++i) {
    p.mean.v[static_cast<std::size_t>(i)] += dx(6 + i);
    p.mean.w[static_cast<std::size_t>(i)] += dx(9 + i);
  }
  const Mat12 IKH = Mat12::Identity() - K * H;
  p.cov = IKH * p.cov * IKH.transpose() + K * Rm * K.transpose();

  KfStep out;
  out.min_eig_before_repair = min_eigenvalue(p.cov);
  if (out.min_eig_before_repair < 0.0) p.cov = repair_covariance(p.cov);
  out.state = p;
  return out;
}

struct KfRolloutStats {
  double min_eigenvalue = 0.0;
};

inline std::vector<StateD> kfns_rollout(const KfnsModel& m, const StateD& s0, std::span<const Action> actions,
                                        const Observation& b0, double h, int n, KfRolloutStats* stats = nullptr,
                                        std::vector<Mat12>* covariances = nullptr) {
  if (actions.size() < static_cast<std::size_t>(n)) throw LengthMismatch("not enough actions for prediction");
  std::vector<StateD> out;
  KfState k{s0, Mat12::Zero()};
  double min_eig = 0.0;
  for (int t = 0; t < n; ++t) {
    KfStep r = kf_step(m, k, actions[static_cast<std::size_t>(t)], b0, h);
    min_eig = std::min(min_eig, r.min_eig_before_repair);
    k = r.state;
    out.push_back(k.mean);
    if (covariances) covariances->push_back(k.cov);
  }
  if (stats) stats->min_eigenvalue = min_eig;
  return out;
}

// Teacher-forced one-step regression targets for the measurement net.
struct MeasurementSample {
  std::array<double, kForceInputDim> input;
  std::array<double, 6> target;
};

inline std::vector<MeasurementSample> measurement_samples(const Dataset& ds, std::span<const std::size_t> trajs,
                                                          double fraction = 1.0) {
  std::vector<MeasurementSample> out;
  for (std::size_t t : trajs) {
    const auto& rec = ds.records[t];
    for (std::size_t k = 0; k + 1 < rec.size(); ++k) {
      const StateD& a = rec.states[k];
      const StateD& b = rec.states[k + 1];
      const Vec3d vb = transpose(a.R) * a.v;
      MeasurementSample s;
      s.input = force_input<double>(vb, a.w, rec.actions[k], rec.b0);
      const Vec3d dv = transpose(a.R) * b.v - vb;
      for (std::size_t i = 0; i < 3; ++i) {
        s.target[i] = dv[i];
        s.target[3 + i] = b.w[i] - a.w[i];
      }
      out.push_back(s);
    }
  }
  if (fraction < 1.0) {
    const auto n = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(out.size()) - 1e-9));
    out.resize(std::max<std::size_t>(1, std::min(n, out.size())));
  }
  return out;
}

inline constexpr double kMinNormStd = 0.1;

inline nn::InputNorm fit_input_norm(const std::vector<std::vector<double>>& rows) {
  nn::InputNorm n;
  if (rows.empty()) return n;
  const std::size_t d = rows.front().size();
  n.shift.assign(d, 0.0);
  n.scale.assign(d, 1.0);
  for (std::size_t i = 0; i < d; ++i) {
    double mean = 0.0;
    for (const auto& r : rows) mean += r[i];
    mean /= static_cast<double>(rows.size());
    double var = 0.0;
    for (const auto& r : rows) var += (r[i] - mean) * (r[i] - mean);
    var /= static_cast<double>(rows.size());
    n.shift[i] = mean;
    // Floor on the spread: near-constant channels would otherwise amplify
    // out-of-distribution rollout states.
    n.scale[i] = 1.0 / std::max(std::sqrt(var), kMinNormStd);
  }
  return n;
}

struct RegressionConfig {
  int epochs = 100;
  int batch_size = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  bool normalize_inputs = false;
};

// Mean squared error regression with Adam; returns the final training loss.
inline double train_measurement_net(KfnsModel& m, const std::vector<MeasurementSample>& samples,
                                    const RegressionConfig& cfg) {
  if (samples.empty()) throw DataTooShort("no transitions available for the measurement net");
  std::mt19937_64 rng(cfg.seed);
  m.net = nn::Mlp(measurement_spec(m.net.spec().activation));
  m.net.init(rng);
  if (cfg.normalize_inputs) {
    std::vector<std::vector<double>> rows;
    for (const auto& s : samples) rows.emplace_back(s.input.begin(), s.input.end());
    m.net.set_input_norm(fit_input_norm(rows));
  }
  nn::AdamState adam(m.net.param_count());
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  double last = 0.0;
  for (int e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
      std::vector<double> grad(m.net.param_count(), 0.0);
      for (std::size_t i = b0; i < b1; ++i) {
        const auto& s = samples[order[i]];
        std::vector<std::vector<double>> acts{m.net.normalized_input(s.input)};
        for (std::size_t l = 0; l < m.net.layer_count(); ++l) {
          const auto& d = m.net.spec().layers[l];
          std::vector<double> y(static_cast<std::size_t>(d.out));
          const auto w = m.net.weights(l);
          const auto bias = m.net.bias(l);
          for (int o = 0; o < d.out; ++o) {
            double acc = bias[static_cast<std::size_t>(o)];
            for (int k = 0; k < d.in; ++k) acc += w[static_cast<std::size_t>(o * d.in + k)] * acts.back()[static_cast<std::size_t>(k)];
            y[static_cast<std::size_t>(o)] = l + 1 < m.net.layer_count() ? nn::activate(m.net.spec().activation, acc) : acc;
          }
          acts.push_back(std::move(y));
        }
        std::vector<double> delta(6);
        const double scale = 1.0 / static_cast<double>(b1 - b0);
        for (std::size_t k = 0; k < 6; ++k) {
          const double r = acts.back()[k] - s.target[k];
          total += r * r;
          delta[k] = 2.0 * r * scale;
        }
        m.net.backprop(acts, delta, grad);
      }
      nn::adam_step(m.net.params(), grad, adam, {cfg.lr, 0.9, 0.999, 1e-8});
    }
    last = total / static_cast<double>(samples.size());
    if (!std::isfinite(last)) throw NonFiniteLoss("measurement net loss diverged in epoch " + std::to_string(e));
  }
  return last;
}

// Mean position distance at the final step of each window.
inline double kfns_window_error(const KfnsModel& m, const Dataset& ds, const std::vector<Window>& windows) {
  double total = 0.0;
  for (const auto& w : windows) {
    const auto pred = kfns_rollout(m, window_state(ds, w, 0), window_actions(ds, w), ds.records[w.traj].b0,
                                   ds.vehicle.dt, w.steps);
    total += norm(pred.back().x - window_state(ds, w, w.steps).x);
  }
  return windows.empty() ? 0.0 : total / static_cast<double>(windows.size());
}

// Grid search of the velocity process / measurement noise ratio on held-out
// windows. Measurement noise is fixed; only the ratio matters for the gain.
inline KfNoise fit_kf_noise(KfnsModel& m, const Dataset& ds, const std::vector<Window>& val) {
  static constexpr std::array<double, 7> kRatio{0.01, 0.1, 0.3, 1.0, 3.0, 10.0, 100.0};
  const double r = 1e-2;
  KfNoise best = m.noise;
  double best_err = std::numeric_limits<double>::infinity();
  for (double rv : kRatio) {
    for (double rw : kRatio) {
      m.noise = KfNoise::uniform(1e-4, rv * r, rw * r, r, r);
      const double e = kfns_window_error(m, ds, val);
      if (e < best_err) {
        best_err = e;
        best = m.noise;
      }
    }
  }
  m.noise = best;
  return best;
}

inline void save_kfns(const fs::path& path, const KfnsModel& m, const nlohmann::json& extra = {}) {
  WeightContainer c;
  c.digest = fnv1a("kfns;m=" + m.net.spec().canonical());
  append_mlp_arrays(m.net, c.arrays);
  c.arrays.emplace_back(m.noise.q.begin(), m.noise.q.end());
  c.arrays.emplace_back(m.noise.rm.begin(), m.noise.rm.end());
  save_container(path, c);
  nlohmann::json side = {{"format", "PHYSORD1"},
                         {"model", "kfns"},
                         {"digest", c.digest},
                         {"param_count", m.net.param_count()},
                         {"measurement_net", spec_to_json(m.net.spec())},
                         {"measurement_norm", norm_to_json(m.net.input_norm())},
                         {"q", m.noise.q},
                         {"rm", m.noise.rm}};
  if (extra.is_object()) side.update(extra);
  write_text(weights_sidecar(path), side.dump(2) + "\n");
}

inline KfnsModel kfns_from(const nlohmann::json& side, const WeightContainer& c) {
  try {
    KfnsModel m;
    m.net = nn::Mlp(spec_from_json(side.at("measurement_net")));
    if (c.digest != fnv1a("kfns;m=" + m.net.spec().canonical())) {
      throw SchemaMismatch("weight digest does not match the sidecar spec");
    }
    const std::size_t pos = read_mlp_arrays(m.net, c.arrays, 0);
    if (c.arrays.size() != pos + 2 || c.arrays[pos].size() != 12 || c.arrays[pos + 1].size() != 6) {
      throw SchemaMismatch("noise arrays missing from the weight container");
    }
    std::copy(c.arrays[pos].begin(), c.arrays[pos].end(), m.noise.q.begin());
    std::copy(c.arrays[pos + 1].begin(), c.arrays[pos + 1].end(), m.noise.rm.begin());
    m.net.set_input_norm(norm_from_json(side.value("measurement_norm", nlohmann::json())));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaMismatch(std::string("weight sidecar: ") + e.what());
  }
}

}  // namespace physord
