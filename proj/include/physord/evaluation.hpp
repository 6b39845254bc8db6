#pragma once

// Prediction metrics at a fixed step, per-terrain grouping, and parameter /
// FLOP accounting.

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "physord/autodiff.hpp"
#include "physord/baselines.hpp"
#include "physord/errors.hpp"
#include "physord/liegroup.hpp"
#include "physord/models.hpp"
#include "physord/types.hpp"

namespace physord {

using Sequence = std::vector<StateD>;

inline void check_step(std::span<const Sequence> preds, std::span<const Sequence> gts, int step) {
  if (preds.size() != gts.size()) throw LengthMismatch("prediction and ground-truth sequence counts differ");
  if (preds.empty()) throw LengthMismatch("metrics need at least one sequence");
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const std::size_t len = std::min(preds[i].size(), gts[i].size());
    if (step < 1 || static_cast<std::size_t>(step) > len) {
      throw StepOutOfRange("step " + std::to_string(step) + " outside sequence " + std::to_string(i) + " of length " +
                           std::to_string(len));
    }
  }
}

// Step k refers to the k-th predicted state (index k - 1).
inline const StateD& at_step(const Sequence& s, int step) { return s[static_cast<std::size_t>(step - 1)]; }

inline double pose_squared_error(const StateD& p, const StateD& g) {
  double e = 0.0;
  for (std::size_t i = 0; i < 3; ++i) e += (p.x[i] - g.x[i]) * (p.x[i] - g.x[i]);
  for (std::size_t i = 0; i < 9; ++i) e += (p.R.a[i] - g.R.a[i]) * (p.R.a[i] - g.R.a[i]);
  return e;
}

// Root of the mean squared error over the 12-dim pose [x, R row-major].
inline double rmse_at(std::span<const Sequence> preds, std::span<const Sequence> gts, int step) {
  check_step(preds, gts, step);
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) sum += pose_squared_error(at_step(preds[i], step), at_step(gts[i], step));
  return std::sqrt(sum / (12.0 * static_cast<double>(preds.size())));
}

inline double position_distance(std::span<const Sequence> preds, std::span<const Sequence> gts, int step) {
  check_step(preds, gts, step);
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) sum += norm(at_step(preds[i], step).x - at_step(gts[i], step).x);
  return sum / static_cast<double>(preds.size());
}

inline double angular_distance(std::span<const Sequence> preds, std::span<const Sequence> gts, int step) {
  check_step(preds, gts, step);
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const Mat3d p = lie::project_to_rotation(at_step(preds[i], step).R);
    sum += lie::geodesic_angle(p, at_step(gts[i], step).R);
  }
  return sum / static_cast<double>(preds.size());
}

// Unit quaternion (w, x, y, z) to rotation matrix, for baselines that report
// orientation as quaternions.
inline Mat3d quaternion_to_rotation(double w, double x, double y, double z) {
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  if (!(n > 0.0)) throw Degenerate("zero quaternion");
  w /= n;
  x /= n;
  y /= n;
  z /= n;
  return Mat3d{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),  //
                2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),  //
                2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}};
}

struct TerrainMetrics {
  double rmse = 0.0;
  double pos = 0.0;
  double ang = 0.0;
  std::size_t n = 0;
};

struct MetricsReport {
  double rmse = 0.0;
  double pos_dist = 0.0;
  double ang_dist = 0.0;
  std::map<std::string, TerrainMetrics> per_terrain;
  int eval_step = 20;
  std::size_t n_sequences = 0;
};

inline MetricsReport compute_metrics(std::span<const Sequence> preds, std::span<const Sequence> gts,
                                     std::span<const std::string> tags, int step) {
  check_step(preds, gts, step);
  if (tags.size() != preds.size()) throw LengthMismatch("one terrain tag per sequence is required");
  MetricsReport r;
  r.eval_step = step;
  r.n_sequences = preds.size();
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < tags.size(); ++i) groups[tags[i]].push_back(i);
  for (const auto& [tag, idx] : groups) {
    std::vector<Sequence> p, g;
    for (std::size_t i : idx) {
      p.push_back(preds[i]);
      g.push_back(gts[i]);
    }
    r.per_terrain[tag] = {rmse_at(p, g, step), position_distance(p, g, step), angular_distance(p, g, step), idx.size()};
  }
  r.rmse = rmse_at(preds, gts, step);
  r.pos_dist = position_distance(preds, gts, step);
  r.ang_dist = angular_distance(preds, gts, step);
  return r;
}

// Overall metrics rebuilt from the per-terrain groups (RMSE on squared errors).
inline TerrainMetrics recombine(const MetricsReport& r) {
  TerrainMetrics t;
  double sq = 0.0;
  for (const auto& [tag, m] : r.per_terrain) {
    const double w = static_cast<double>(m.n);
    sq += m.rmse * m.rmse * w;
    t.pos += m.pos * w;
    t.ang += m.ang * w;
    t.n += m.n;
  }
  if (t.n == 0) return t;
  const double n = static_cast<double>(t.n);
  t.rmse = std::sqrt(sq / n);
  t.pos /= n;
  t.ang /= n;
  return t;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [tag, m] : r.per_terrain) per[tag] = {{"rmse", m.rmse}, {"pos_dist", m.pos}, {"ang_dist", m.ang}, {"n", m.n}};
  return {{"rmse", r.rmse},         {"pos_dist", r.pos_dist}, {"ang_dist", r.ang_dist},
          {"per_terrain", per},     {"eval_step", r.eval_step}, {"n_sequences", r.n_sequences}};
}

// Table layout: one row per terrain tag plus "All Terrain", three metric
// columns per model.
inline std::string metrics_table_csv(const std::vector<std::pair<std::string, MetricsReport>>& models) {
  std::string out = "terrain";
  for (const auto& [name, r] : models) out += "," + name + "_rmse," + name + "_pos," + name + "_ang";
  out += '\n';
  std::vector<std::string> tags;
  if (!models.empty()) {
    for (const auto& [tag, m] : models.front().second.per_terrain) tags.push_back(tag);
  }
  auto row = [&](const std::string& label, auto&& pick) {
    out += label;
    for (const auto& [name, r] : models) {
      const TerrainMetrics m = pick(r);
      out += "," + format_double(m.rmse) + "," + format_double(m.pos) + "," + format_double(m.ang);
    }
    out += '\n';
  };
  for (const auto& tag : tags) {
    row(tag, [&](const MetricsReport& r) {
      auto it = r.per_terrain.find(tag);
      return it == r.per_terrain.end() ? TerrainMetrics{} : it->second;
    });
  }
  row("All Terrain", [](const MetricsReport& r) { return TerrainMetrics{r.rmse, r.pos_dist, r.ang_dist, r.n_sequences}; });
  return out;
}

inline std::size_t count_params(std::span<const nn::MlpSpec> specs) {
  std::size_t n = 0;
  for (const auto& s : specs) n += s.param_count();
  return n;
}
inline std::size_t count_params(const DynamicsModels& m) { return m.param_count(); }
inline std::size_t count_params(const KfnsModel& m) { return m.net.param_count(); }

// Floating-point operations of an n-step prediction from a representative
// state: every recorded scalar operation counts once, every dense layer
// 2 in out + out.
inline std::int64_t count_flops(const DynamicsModels& m, const VehicleParams& p, int n_steps) {
  ad::Tape tape;
  ad::TapeScope scope(tape);
  State<ad::Var> s0;
  s0.x = {tape.variable(0.0), tape.variable(0.0), tape.variable(0.0)};
  s0.R = lift<ad::Var>(lie::rot_z(0.3));
  for (auto& r : s0.R.a) r = tape.variable(r.val);
  s0.v = {tape.variable(2.0), tape.variable(0.1), tape.variable(0.0)};
  s0.w = {tape.variable(0.0), tape.variable(0.0), tape.variable(0.1)};
  const std::vector<Action> actions(static_cast<std::size_t>(n_steps), Action{0.5, 0.1, 0.0});
  predict(m, s0, std::span<const Action>(actions), Observation{{0.1, 0.1, 0.1, 0.1}}, p, n_steps);
  return tape.scalar_ops() + tape.block_flops();
}

}  // namespace physord
