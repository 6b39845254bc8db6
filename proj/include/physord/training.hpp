#pragma once

// Multi-step rollout losses, minibatch training through rollouts, model
// evaluation on held-out windows and the experiment protocols.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "physord/baselines.hpp"
#include "physord/datagen.hpp"
#include "physord/dataset_io.hpp"
#include "physord/errors.hpp"
#include "physord/evaluation.hpp"
#include "physord/models.hpp"
#include "physord/parallel.hpp"
#include "physord/serialize.hpp"

namespace physord {

struct LossBreakdown {
  double l_ed = 0.0;
  double l_gd = 0.0;
  double total = 0.0;
};

inline nlohmann::json to_json(const LossBreakdown& l) {
  return {{"l_ed", l.l_ed}, {"l_gd", l.l_gd}, {"total", l.total}};
}

// (1/n) sum_t |x_hat - x|^2 + |v_hat - v|^2 + |w_hat - w|^2
template <class T>
T loss_ed(std::span<const State<T>> pred, std::span<const StateD> gt) {
  if (pred.size() != gt.size() || pred.empty()) throw LengthMismatch("loss needs equal, non-empty sequences");
  T sum(0.0);
  for (std::size_t t = 0; t < pred.size(); ++t) {
    for (std::size_t i = 0; i < 3; ++i) {
      const T dx = pred[t].x[i] - gt[t].x[i];
      const T dv = pred[t].v[i] - gt[t].v[i];
      const T dw = pred[t].w[i] - gt[t].w[i];
      sum = sum + dx * dx + dv * dv + dw * dw;
    }
  }
  return sum * (1.0 / static_cast<double>(pred.size()));
}

// (1/n) sum_t angle(proj(R_hat), R)^2
template <class T>
T loss_gd(std::span<const State<T>> pred, std::span<const StateD> gt) {
  if (pred.size() != gt.size() || pred.empty()) throw LengthMismatch("loss needs equal, non-empty sequences");
  T sum(0.0);
  for (std::size_t t = 0; t < pred.size(); ++t) {
    sum = sum + lie::squared_geodesic_angle(lie::project_to_rotation(pred[t].R), lift<T>(gt[t].R));
  }
  return sum * (1.0 / static_cast<double>(pred.size()));
}

inline LossBreakdown loss_breakdown(std::span<const StateD> pred, std::span<const StateD> gt) {
  LossBreakdown l;
  l.l_ed = loss_ed<double>(pred, gt);
  l.l_gd = loss_gd<double>(pred, gt);
  l.total = l.l_ed + l.l_gd;
  return l;
}

struct TrainConfig {
  int horizon = 20;
  double lr = 1e-3;
  double lr_decay = 1.0;  // multiplicative, per epoch
  double adam_beta2 = 0.999;
  int batch_size = 64;
  int epochs = 300;
  std::uint64_t seed = 0;
  int stride = 1;
  double data_fraction = 1.0;
  std::string variant = "full";
  std::string activation = "tanh";
  bool normalize_inputs = false;
  double grad_clip = 10.0;
  double alpha = 0.5;
  double h = 0.0;  // 0: use the dataset timestep
  // Scale epochs so a reduced-data run takes as many optimizer steps as the
  // full-data run (capped by max_epochs when positive).
  bool equalize_steps = false;
  int max_epochs = 0;
  int eval_step = 20;
  int eval_stride = 1;
  int kf_epochs = 100;
  bool freeze_potential = false;
  bool freeze_force = false;
  std::vector<double> fractions{0.01, 0.1, 0.5, 0.8, 1.0};
  bool verbose = false;

  void validate() const {
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must lie in (0, 1]");
    if (!(adam_beta2 > 0.0 && adam_beta2 < 1.0)) throw ConfigError("adam_beta2 must lie in (0, 1)");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (stride < 1 || eval_stride < 1) throw ConfigError("strides must be >= 1");
    if (!(data_fraction > 0.0 && data_fraction <= 1.0)) throw ConfigError("data_fraction must lie in (0, 1]");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
    if (h < 0.0) throw ConfigError("h must be non-negative");
    if (eval_step < 1) throw ConfigError("eval_step must be >= 1");
    Variant::from_name(variant);
    nn::activation_from_string(activation);
    for (double f : fractions) {
      if (!(f > 0.0 && f <= 1.0)) throw ConfigError("fractions must lie in (0, 1]");
    }
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"horizon", c.horizon},
          {"lr", c.lr},
          {"lr_decay", c.lr_decay},
          {"adam_beta2", c.adam_beta2},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"stride", c.stride},
          {"data_fraction", c.data_fraction},
          {"variant", c.variant},
          {"activation", c.activation},
          {"normalize_inputs", c.normalize_inputs},
          {"grad_clip", c.grad_clip},
          {"alpha", c.alpha},
          {"h", c.h},
          {"equalize_steps", c.equalize_steps},
          {"max_epochs", c.max_epochs},
          {"eval_step", c.eval_step},
          {"eval_stride", c.eval_stride},
          {"kf_epochs", c.kf_epochs},
          {"freeze_potential", c.freeze_potential},
          {"freeze_force", c.freeze_force},
          {"fractions", c.fractions},
          {"verbose", c.verbose}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  const nlohmann::json known = to_json(c);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw ConfigError("unknown config key '" + it.key() + "'");
  }
  try {
    auto get = [&](const char* k, auto& field) {
      if (j.contains(k)) field = j.at(k).get<std::decay_t<decltype(field)>>();
    };
    get("horizon", c.horizon);
    get("lr", c.lr);
    get("lr_decay", c.lr_decay);
    get("adam_beta2", c.adam_beta2);
    get("batch_size", c.batch_size);
    get("epochs", c.epochs);
    get("seed", c.seed);
    get("stride", c.stride);
    get("data_fraction", c.data_fraction);
    get("variant", c.variant);
    get("activation", c.activation);
    get("normalize_inputs", c.normalize_inputs);
    get("grad_clip", c.grad_clip);
    get("alpha", c.alpha);
    get("h", c.h);
    get("equalize_steps", c.equalize_steps);
    get("max_epochs", c.max_epochs);
    get("eval_step", c.eval_step);
    get("eval_stride", c.eval_stride);
    get("kf_epochs", c.kf_epochs);
    get("freeze_potential", c.freeze_potential);
    get("freeze_force", c.freeze_force);
    get("fractions", c.fractions);
    get("verbose", c.verbose);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

inline VehicleParams training_params(const Dataset& ds, const TrainConfig& cfg) {
  const double h = cfg.h > 0.0 ? cfg.h : ds.vehicle.dt;
  return VehicleParams::make(ds.vehicle.mass, Mat3d::diag(ds.vehicle.inertia[0], ds.vehicle.inertia[1], ds.vehicle.inertia[2]),
                             cfg.alpha, h);
}

// Learned models see each window in a frame that starts at the window's
// first horizontal location with zero heading; absolute map coordinates and
// heading carry no information about unseen terrain. Gravity is unaffected.
struct WindowFrame {
  Vec3d origin;
  Mat3d yaw;  // world <- local

  StateD to_local(const StateD& s) const {
    const Mat3d yt = transpose(yaw);
    return {yt * (s.x - origin), yt * s.R, yt * s.v, s.w};
  }
  template <class T>
  State<T> to_world(const State<T>& s) const {
    const Mat3<T> y = lift<T>(yaw);
    return {y * s.x + lift<T>(origin), y * s.R, y * s.v, s.w};
  }
};

inline WindowFrame window_frame(const StateD& s0) {
  const double heading = std::atan2(s0.R(1, 0), s0.R(0, 0));
  return {{s0.x[0], s0.x[1], 0.0}, lie::rot_z(heading)};
}

template <class T>
std::vector<State<T>> predict_window(const DynamicsModels& m, const Dataset& ds, const Window& w,
                                     const VehicleParams& p) {
  const WindowFrame f = window_frame(window_state(ds, w, 0));
  auto out = predict(m, lift<T>(f.to_local(window_state(ds, w, 0))), window_actions(ds, w), ds.records[w.traj].b0,
                     p, w.steps);
  for (auto& s : out) s = f.to_world(s);
  return out;
}

struct SampleGrad {
  LossBreakdown loss;
  std::vector<double> grad;
  bool converged = true;
};

// Loss of one window's n-step rollout and its gradient w.r.t. every
// trainable parameter (flat_params order).
inline SampleGrad window_loss_and_grad(const DynamicsModels& m, const Dataset& ds, const Window& w,
                                       const VehicleParams& p) {
  ad::Tape tape;
  SampleGrad out;
  {
    ad::TapeScope scope(tape);
    const auto pred = predict_window<ad::Var>(m, ds, w, p);
    const auto gt = window_targets(ds, w);
    const ad::Var ed = loss_ed<ad::Var>(pred, gt);
    const ad::Var gd = loss_gd<ad::Var>(pred, gt);
    const ad::Var total = ed + gd;
    out.loss = {ed.val, gd.val, total.val};
    tape.backward(total);
  }
  out.grad = m.flat_grads(tape);
  return out;
}

inline LossBreakdown mean_window_loss(const DynamicsModels& m, const Dataset& ds, const std::vector<Window>& windows,
                                      const VehicleParams& p) {
  std::vector<LossBreakdown> parts(windows.size());
  parallel_for(windows.size(), [&](std::size_t i) {
    try {
      const auto pred = predict_window<double>(m, ds, windows[i], p);
      parts[i] = loss_breakdown(pred, window_targets(ds, windows[i]));
    } catch (const NoConvergence&) {
      const double inf = std::numeric_limits<double>::infinity();
      parts[i] = {inf, inf, inf};
    }
  });
  LossBreakdown l;
  for (const auto& x : parts) {
    l.l_ed += x.l_ed;
    l.l_gd += x.l_gd;
  }
  const double n = std::max<double>(1.0, static_cast<double>(windows.size()));
  l.l_ed /= n;
  l.l_gd /= n;
  l.total = l.l_ed + l.l_gd;
  return l;
}

inline void clip_gradient(std::vector<double>& g, double max_norm) {
  if (!(max_norm > 0.0)) return;
  double s = 0.0;
  for (double v : g) s += v * v;
  const double n = std::sqrt(s);
  if (n > max_norm) {
    const double k = max_norm / n;
    for (double& v : g) v *= k;
  }
}

// Fixed per-channel normalization from the training windows' start states.
inline void fit_model_normalization(DynamicsModels& m, const Dataset& ds, const std::vector<Window>& windows) {
  std::vector<std::vector<double>> pose_rows, force_rows;
  for (const auto& w : windows) {
    const WindowFrame frame = window_frame(window_state(ds, w, 0));
    for (int k = 0; k < w.steps; ++k) {
      const StateD s = frame.to_local(window_state(ds, w, k));
      const Action& a = ds.records[w.traj].actions[w.start + static_cast<std::size_t>(k)];
      const Vec3d vb = transpose(s.R) * s.v;
      const auto fin = force_input<double>(vb, s.w, a, ds.records[w.traj].b0);
      force_rows.emplace_back(fin.begin(), fin.end());
      if (m.variant().symbolic) {
        const auto pin = pose_input(s.x, s.R);
        pose_rows.emplace_back(pin.begin(), pin.end());
      } else {
        const StateD n = frame.to_local(window_state(ds, w, k + 1));
        const Vec3d dvb = transpose(s.R) * (n.v - s.v);
        std::vector<double> row(vb.c.begin(), vb.c.end());
        row.insert(row.end(), s.w.c.begin(), s.w.c.end());
        row.insert(row.end(), dvb.c.begin(), dvb.c.end());
        for (std::size_t i = 0; i < 3; ++i) row.push_back(n.w[i] - s.w[i]);
        pose_rows.push_back(std::move(row));
      }
    }
  }
  nn::InputNorm du_norm = fit_input_norm(pose_rows);
  if (!m.variant().symbolic) {
    // The increment channels are network outputs, not data; scaling them by
    // the (tiny) spread of the true increments makes the rollout unstable.
    for (std::size_t i = 6; i < du_norm.shift.size(); ++i) {
      du_norm.shift[i] = 0.0;
      du_norm.scale[i] = 1.0;
    }
  }
  m.du_net().set_input_norm(du_norm);
  if (m.has_force_net()) m.f_net().set_input_norm(fit_input_norm(force_rows));
}

struct EpochLog {
  int epoch = 0;
  LossBreakdown train;
  LossBreakdown val;
  double wall_seconds = 0.0;
};

struct TrainResult {
  DynamicsModels models;
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t train_windows = 0;
  std::size_t skipped_windows = 0;  // rollouts dropped after a failed rotation solve
  int epochs_run = 0;
};

inline nlohmann::json to_json(const TrainResult& r) {
  nlohmann::json log = nlohmann::json::array();
  for (const auto& e : r.log) {
    log.push_back({{"epoch", e.epoch}, {"train", to_json(e.train)}, {"val", to_json(e.val)}, {"wall_seconds", e.wall_seconds}});
  }
  return {{"best_epoch", r.best_epoch},
          {"best_val", std::isfinite(r.best_val) ? nlohmann::json(r.best_val) : nlohmann::json(nullptr)},
          {"train_windows", r.train_windows},
          {"epochs_run", r.epochs_run},
          {"skipped_windows", r.skipped_windows},
          {"param_count", r.models.param_count()},
          {"log", log}};
}

using EpochCallback = std::function<void(const EpochLog&)>;

// Starts from `init` when given (its variant must match cfg.variant).
inline TrainResult train(const Dataset& ds, const TrainConfig& cfg, const EpochCallback& on_epoch = {},
                         const DynamicsModels* init = nullptr) {
  cfg.validate();
  const VehicleParams p = training_params(ds, cfg);
  const auto train_idx = split_indices(ds, Split::train);
  const auto val_idx = split_indices(ds, Split::validation);
  const auto all_windows = make_windows(ds, train_idx, cfg.horizon, cfg.stride);
  const auto windows = take_fraction(all_windows, cfg.data_fraction);
  if (windows.empty()) {
    throw DataTooShort("no training windows of " + std::to_string(cfg.horizon + 1) +
                       " states; trajectories are too short or the training split is empty");
  }
  const auto val_windows = make_windows(ds, val_idx, cfg.horizon, cfg.stride);

  TrainResult res{init ? *init
                       : DynamicsModels::initialized(Variant::from_name(cfg.variant), cfg.seed,
                                                     nn::activation_from_string(cfg.activation))};
  DynamicsModels& m = res.models;
  if (m.variant().name() != Variant::from_name(cfg.variant).name()) {
    throw ConfigError("initial model variant '" + m.variant().name() + "' differs from config '" + cfg.variant + "'");
  }
  // Gradient mask for frozen blocks.
  std::vector<char> frozen;
  for (auto& b : m.blocks()) {
    const bool is_du = b.key == &m.du_net();
    const bool f = is_du ? cfg.freeze_potential : cfg.freeze_force;
    frozen.insert(frozen.end(), b.values.size(), static_cast<char>(f));
  }
  if (cfg.normalize_inputs) fit_model_normalization(m, ds, windows);
  res.train_windows = windows.size();

  const auto B = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t batches = (windows.size() + B - 1) / B;
  int epochs = cfg.epochs;
  if (cfg.equalize_steps) {
    const std::size_t full = (all_windows.size() + B - 1) / B;
    epochs = static_cast<int>((static_cast<std::size_t>(cfg.epochs) * full + batches - 1) / batches);
    if (cfg.max_epochs > 0) epochs = std::min(epochs, cfg.max_epochs);
  }
  res.epochs_run = epochs;
  // Validate once per full-data-equivalent epoch.
  const int val_every = cfg.equalize_steps && cfg.epochs > 0 ? std::max(1, epochs / cfg.epochs) : 1;

  std::mt19937_64 rng(mix_seed(cfg.seed ^ 0x736875ULL));
  nn::AdamState adam(m.param_count());
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> best = m.flat_params();
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t batch_id = 0;

  double lr = cfg.lr;
  for (int e = 0; e < epochs; ++e, lr *= cfg.lr_decay) {
    std::shuffle(order.begin(), order.end(), rng);
    LossBreakdown epoch_loss;
    std::size_t epoch_used = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += B, ++batch_id) {
      const std::size_t b1 = std::min(order.size(), b0 + B);
      std::vector<SampleGrad> parts(b1 - b0);
      parallel_for(parts.size(), [&](std::size_t i) {
        try {
          parts[i] = window_loss_and_grad(m, ds, windows[order[b0 + i]], p);
        } catch (const NoConvergence&) {
          parts[i].converged = false;
        }
      });
      std::vector<double> grad(m.param_count(), 0.0);
      LossBreakdown bl;
      std::size_t used = 0;
      for (const auto& s : parts) {
        if (!s.converged) continue;
        ++used;
        for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += s.grad[k];
        bl.l_ed += s.loss.l_ed;
        bl.l_gd += s.loss.l_gd;
      }
      res.skipped_windows += parts.size() - used;
      if (used == 0) {
        throw NoConvergence("every rollout in batch " + std::to_string(batch_id) + " (epoch " + std::to_string(e) +
                            ") failed the rotation solve");
      }
      const double inv = 1.0 / static_cast<double>(used);
      for (double& g : grad) g *= inv;
      bl.total = (bl.l_ed + bl.l_gd) * inv;
      const bool finite = std::isfinite(bl.total) && std::all_of(grad.begin(), grad.end(), [](double g) { return std::isfinite(g); });
      if (!finite) {
        throw NonFiniteLoss("non-finite loss or gradient in batch " + std::to_string(batch_id) + " (epoch " +
                            std::to_string(e) + ")");
      }
      for (std::size_t k = 0; k < grad.size(); ++k) {
        if (frozen[k]) grad[k] = 0.0;
      }
      clip_gradient(grad, cfg.grad_clip);
      auto flat = m.flat_params();
      nn::adam_step(flat, grad, adam, {lr, 0.9, cfg.adam_beta2, 1e-8});
      m.set_flat_params(flat);
      epoch_loss.l_ed += bl.l_ed;
      epoch_loss.l_gd += bl.l_gd;
      epoch_used += used;
    }
    epoch_loss.l_ed /= static_cast<double>(epoch_used);
    epoch_loss.l_gd /= static_cast<double>(epoch_used);
    epoch_loss.total = epoch_loss.l_ed + epoch_loss.l_gd;

    if ((e + 1) % val_every != 0 && e + 1 != epochs) continue;
    EpochLog log;
    log.epoch = e;
    log.train = epoch_loss;
    log.val = val_windows.empty() ? epoch_loss : mean_window_loss(m, ds, val_windows, p);
    log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.log.push_back(log);
    if (std::isfinite(log.val.total) && log.val.total < res.best_val) {
      res.best_val = log.val.total;
      res.best_epoch = e;
      best = m.flat_params();
    }
    if (on_epoch) on_epoch(log);
  }
  m.set_flat_params(best);
  return res;
}

// ---- evaluation on held-out windows ---------------------------------------

using Predictor = std::function<Sequence(const Dataset&, const Window&)>;

inline Predictor physord_predictor(const DynamicsModels& m, const VehicleParams& p) {
  return [&m, p](const Dataset& ds, const Window& w) { return predict_window<double>(m, ds, w, p); };
}

inline Predictor cv_predictor() {
  return [](const Dataset& ds, const Window& w) { return cv_rollout(window_state(ds, w, 0), ds.vehicle.dt, w.steps); };
}

inline Predictor kfns_predictor(const KfnsModel& m) {
  return [&m](const Dataset& ds, const Window& w) {
    return kfns_rollout(m, window_state(ds, w, 0), window_actions(ds, w), ds.records[w.traj].b0, ds.vehicle.dt, w.steps);
  };
}

// Noise-free ground truth; needs the world spec recorded with the dataset.
inline Predictor oracle_predictor(const WorldSpec& world) {
  return [world](const Dataset& ds, const Window& w) {
    const auto& rec = ds.records[w.traj];
    return oracle_predict(world, rec.terrain_tag, rec.seed, window_state(ds, w, 0), window_actions(ds, w), w.steps);
  };
}

struct Evaluation {
  MetricsReport report;
  std::vector<Sequence> preds;
  std::vector<Sequence> gts;
};

inline Evaluation evaluate(const Dataset& ds, const std::vector<Window>& windows, const Predictor& predictor, int step) {
  if (windows.empty()) throw DataTooShort("no evaluation windows of " + std::to_string(step) + " steps");
  Evaluation ev;
  ev.preds.resize(windows.size());
  ev.gts.resize(windows.size());
  std::vector<std::string> tags(windows.size());
  parallel_for(windows.size(), [&](std::size_t i) {
    ev.preds[i] = predictor(ds, windows[i]);
    ev.gts[i] = window_targets(ds, windows[i]);
    tags[i] = ds.records[windows[i].traj].terrain_tag;
  });
  ev.report = compute_metrics(ev.preds, ev.gts, tags, step);
  return ev;
}

inline std::vector<Window> test_windows(const Dataset& ds, int step, int stride) {
  const auto idx = split_indices(ds, Split::test);
  return make_windows(ds, idx, step, stride);
}

// ---- Kalman filter baseline training --------------------------------------

inline KfnsModel train_kfns(const Dataset& ds, const TrainConfig& cfg) {
  KfnsModel m;
  m.net = nn::Mlp(measurement_spec(nn::activation_from_string(cfg.activation)));
  const auto train_idx = split_indices(ds, Split::train);
  const auto samples = measurement_samples(ds, train_idx, cfg.data_fraction);
  RegressionConfig rc;
  rc.epochs = cfg.kf_epochs;
  rc.batch_size = cfg.batch_size;
  rc.lr = cfg.lr;
  rc.seed = cfg.seed;
  rc.normalize_inputs = cfg.normalize_inputs;
  train_measurement_net(m, samples, rc);
  const auto val_idx = split_indices(ds, Split::validation);
  auto val = make_windows(ds, val_idx, cfg.eval_step, std::max(cfg.stride, 5));
  if (!val.empty()) fit_kf_noise(m, ds, val);
  return m;
}

// ---- protocols --------------------------------------------------------------

inline nlohmann::json model_entry(const MetricsReport& r, std::size_t params, std::optional<std::int64_t> flops) {
  nlohmann::json j = to_json(r);
  j["params"] = params;
  j["flops"] = flops ? nlohmann::json(*flops) : nlohmann::json(nullptr);
  return j;
}

struct ProtocolContext {
  std::optional<fs::path> out_dir;  // per-run checkpoints and logs
  std::function<void(const std::string&)> progress;
};

inline void note(const ProtocolContext& ctx, const std::string& s) {
  if (ctx.progress) ctx.progress(s);
}

inline TrainResult train_logged(const Dataset& ds, const TrainConfig& cfg, const ProtocolContext& ctx,
                                const std::string& run) {
  note(ctx, "training " + run);
  TrainResult r = train(ds, cfg, [&](const EpochLog& e) {
    if (cfg.verbose) {
      note(ctx, run + " epoch " + std::to_string(e.epoch) + " train " + std::to_string(e.train.total) + " val " +
                    std::to_string(e.val.total));
    }
  });
  if (ctx.out_dir) {
    std::error_code ec;
    fs::create_directories(*ctx.out_dir, ec);
    save_models(*ctx.out_dir / (run + ".bin"), r.models, {{"config", to_json(cfg)}});
    write_text(*ctx.out_dir / (run + "_log.json"), to_json(r).dump(2) + "\n");
  }
  return r;
}

inline nlohmann::json protocol_accuracy(const Dataset& ds, const TrainConfig& cfg, const ProtocolContext& ctx) {
  const auto windows = test_windows(ds, cfg.eval_step, cfg.eval_stride);
  const VehicleParams p = training_params(ds, cfg);
  TrainConfig full = cfg;
  full.variant = "full";
  const TrainResult physord = train_logged(ds, full, ctx, "physord");
  note(ctx, "training kfns");
  const KfnsModel kf = train_kfns(ds, cfg);
  if (ctx.out_dir) save_kfns(*ctx.out_dir / "kfns.bin", kf, {{"config", to_json(cfg)}});
  const auto e_phys = evaluate(ds, windows, physord_predictor(physord.models, p), cfg.eval_step);
  const auto e_kf = evaluate(ds, windows, kfns_predictor(kf), cfg.eval_step);
  const auto e_cv = evaluate(ds, windows, cv_predictor(), cfg.eval_step);
  return {{"protocol", "accuracy"},
          {"eval_step", cfg.eval_step},
          {"train_horizon", cfg.horizon},
          {"models",
           {{"physord", model_entry(e_phys.report, physord.models.param_count(), count_flops(physord.models, p, cfg.eval_step))},
            {"kfns", model_entry(e_kf.report, count_params(kf), std::nullopt)},
            {"cv", model_entry(e_cv.report, 0, std::nullopt)}}},
          {"table_csv", metrics_table_csv({{"cv", e_cv.report}, {"kfns", e_kf.report}, {"physord", e_phys.report}})}};
}

inline nlohmann::json protocol_generalization(const Dataset& ds, const TrainConfig& cfg, const ProtocolContext& ctx,
                                              int short_horizon = 5) {
  const auto windows = test_windows(ds, cfg.eval_step, cfg.eval_stride);
  const VehicleParams p = training_params(ds, cfg);
  TrainConfig longc = cfg;
  longc.variant = "full";
  TrainConfig shortc = longc;
  shortc.horizon = short_horizon;
  const TrainResult r_long = train_logged(ds, longc, ctx, "physord_n" + std::to_string(longc.horizon));
  const TrainResult r_short = train_logged(ds, shortc, ctx, "physord_n" + std::to_string(short_horizon));
  const auto e_long = evaluate(ds, windows, physord_predictor(r_long.models, p), cfg.eval_step);
  const auto e_short = evaluate(ds, windows, physord_predictor(r_short.models, p), cfg.eval_step);
  const auto e_cv = evaluate(ds, windows, cv_predictor(), cfg.eval_step);
  const double degradation = e_short.report.pos_dist / e_long.report.pos_dist - 1.0;
  return {{"protocol", "generalization"},
          {"eval_step", cfg.eval_step},
          {"train_horizon", short_horizon},
          {"reference_horizon", longc.horizon},
          {"runs",
           {{{"train_horizon", longc.horizon}, {"metrics", to_json(e_long.report)}},
            {{"train_horizon", short_horizon}, {"metrics", to_json(e_short.report)}}}},
          {"cv", to_json(e_cv.report)},
          {"pos_dist_degradation", degradation}};
}

inline nlohmann::json protocol_data_efficiency(const Dataset& ds, const TrainConfig& cfg, const ProtocolContext& ctx) {
  const auto windows = test_windows(ds, cfg.eval_step, cfg.eval_stride);
  const VehicleParams p = training_params(ds, cfg);
  nlohmann::json rows = nlohmann::json::array();
  for (double f : cfg.fractions) {
    nlohmann::json row = {{"fraction", f}};
    for (const std::string v : {"full", "phys"}) {
      TrainConfig c = cfg;
      c.variant = v;
      c.data_fraction = f;
      char tag[32];
      std::snprintf(tag, sizeof(tag), "%s_f%03d", v.c_str(), static_cast<int>(std::lround(f * 100)));
      const TrainResult r = train_logged(ds, c, ctx, tag);
      const auto ev = evaluate(ds, windows, physord_predictor(r.models, p), cfg.eval_step);
      const std::string key = v == "full" ? "physord" : "phys";
      row[key] = to_json(ev.report);
      row[key]["train_windows"] = r.train_windows;
      row[key]["epochs_run"] = r.epochs_run;
    }
    rows.push_back(row);
  }
  return {{"protocol", "data_efficiency"}, {"eval_step", cfg.eval_step}, {"rows", rows}};
}

inline nlohmann::json protocol_ablation(const Dataset& ds, const TrainConfig& cfg, const ProtocolContext& ctx) {
  const auto windows = test_windows(ds, cfg.eval_step, cfg.eval_stride);
  const VehicleParams p = training_params(ds, cfg);
  nlohmann::json rows = nlohmann::json::array();
  for (const std::string v : {"phys", "f", "u", "full"}) {
    TrainConfig c = cfg;
    c.variant = v;
    const TrainResult r = train_logged(ds, c, ctx, "ablation_" + v);
    const auto ev = evaluate(ds, windows, physord_predictor(r.models, p), cfg.eval_step);
    nlohmann::json row = to_json(ev.report);
    row["variant"] = v;
    row["params"] = r.models.param_count();
    rows.push_back(row);
  }
  return {{"protocol", "ablation"}, {"eval_step", cfg.eval_step}, {"rows", rows}};
}

inline nlohmann::json run_protocol(const std::string& name, const Dataset& ds, const TrainConfig& cfg,
                                   const ProtocolContext& ctx = {}) {
  cfg.validate();
  nlohmann::json r;
  if (name == "accuracy") {
    r = protocol_accuracy(ds, cfg, ctx);
  } else if (name == "generalization") {
    r = protocol_generalization(ds, cfg, ctx);
  } else if (name == "data_efficiency") {
    r = protocol_data_efficiency(ds, cfg, ctx);
  } else if (name == "ablation") {
    r = protocol_ablation(ds, cfg, ctx);
  } else {
    throw ConfigError("unknown protocol '" + name + "' (expected accuracy|generalization|data_efficiency|ablation)");
  }
  r["config"] = to_json(cfg);
  return r;
}

}  // namespace physord
