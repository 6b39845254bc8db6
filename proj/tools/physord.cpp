#include <cmath>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "physord/physord.hpp"

namespace physord {
namespace {

using nlohmann::json;

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

void make_dir(const fs::path& d) {
  std::error_code ec;
  fs::create_directories(d, ec);
  if (ec) throw IoError("cannot create '" + d.string() + "': " + ec.message());
}

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  const json j = read_json(path);
  if (!j.is_object()) throw ConfigError("'" + path + "' must hold a JSON object");
  return j;
}

// ---- generate ---------------------------------------------------------------

struct GenerateArgs {
  std::string world;
  std::string out;
  std::uint64_t seed = 0;
  int trajectories = 60;
  int steps = 300;
};

void cmd_generate(const GenerateArgs& a) {
  const WorldSpec w = world_from_json(a.world.empty() ? json::object() : read_json(a.world));
  if (a.trajectories < 1) throw ConfigError("--trajectories must be >= 1");
  const Dataset ds = make_dataset(w, a.trajectories, a.steps, a.seed);
  write_dataset(ds, a.out);
  write_json(fs::path(a.out) / "config.json", {{"command", "generate"},
                                               {"seed", a.seed},
                                               {"trajectories", a.trajectories},
                                               {"steps", a.steps},
                                               {"world", world_to_json(w)}});
  std::cerr << "wrote " << ds.records.size() << " trajectories to " << a.out << "\n";
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string config;
  std::string out;
  std::optional<std::string> variant;
  std::string baseline = "neural";
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  bool verbose = false;
};

TrainConfig resolve_train_config(const std::string& path, const std::optional<std::string>& variant,
                                 const std::optional<std::uint64_t>& seed, const std::optional<int>& epochs) {
  TrainConfig cfg = train_config_from_json(read_config(path));
  if (variant) cfg.variant = *variant;
  if (seed) cfg.seed = *seed;
  if (epochs) cfg.epochs = *epochs;
  cfg.validate();
  return cfg;
}

void cmd_train(const TrainArgs& a) {
  const TrainConfig cfg = resolve_train_config(a.config, a.variant, a.seed, a.epochs);
  const Dataset ds = load_dataset(a.data);
  make_dir(a.out);
  json resolved = to_json(cfg);
  resolved["command"] = "train";
  resolved["baseline"] = a.baseline;
  resolved["data"] = fs::absolute(a.data).string();
  write_json(fs::path(a.out) / "config.json", resolved);

  if (a.baseline == "kfns") {
    const KfnsModel m = train_kfns(ds, cfg);
    save_kfns(fs::path(a.out) / "kfns.bin", m, {{"config", to_json(cfg)}});
    std::cerr << "kfns: " << m.net.param_count() << " params\n";
    return;
  }
  const TrainResult r = train(ds, cfg, [&](const EpochLog& e) {
    if (a.verbose) {
      std::fprintf(stderr, "epoch %d train %.6g val %.6g (%.1fs)\n", e.epoch, e.train.total, e.val.total, e.wall_seconds);
    }
  });
  save_models(fs::path(a.out) / "model.bin", r.models, {{"config", to_json(cfg)}});
  write_json(fs::path(a.out) / "train_log.json", to_json(r));
  std::cerr << cfg.variant << ": " << r.models.param_count() << " params, best val " << r.best_val << " at epoch "
            << r.best_epoch << "\n";
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string data;
  std::string checkpoint;
  int step = 20;
  int horizon = 20;
  int stride = 1;
  std::string out = "report.json";
};

struct LoadedModel {
  std::string name;
  Predictor predictor;
  std::size_t params = 0;
  std::optional<std::int64_t> flops;
  std::optional<DynamicsModels> models;
  std::optional<KfnsModel> kfns;
};

// Built-in checkpoints "builtin:cv" and "builtin:oracle" need no file; the
// oracle replays the noise-free world recorded in the dataset manifest.
void load_model(const std::string& checkpoint, const Dataset& ds, int step, LoadedModel& lm) {
  if (checkpoint == "builtin:cv") {
    lm.name = "cv";
    lm.predictor = cv_predictor();
    return;
  }
  if (checkpoint == "builtin:oracle") {
    if (!ds.world) throw SchemaMismatch("oracle needs a dataset manifest with a world spec");
    lm.name = "oracle";
    lm.predictor = oracle_predictor(*ds.world);
    return;
  }
  const fs::path path(checkpoint);
  const json side = read_json(weights_sidecar(path));
  const WeightContainer c = load_container(path);
  const std::string kind = side.value("model", std::string("physord"));
  if (kind == "kfns") {
    lm.name = "kfns";
    lm.kfns = kfns_from(side, c);
    lm.params = count_params(*lm.kfns);
    lm.predictor = kfns_predictor(*lm.kfns);
  } else if (kind == "physord") {
    lm.models = models_from(side, c);
    const TrainConfig cfg = side.contains("config") ? train_config_from_json(side.at("config")) : TrainConfig{};
    const VehicleParams p = training_params(ds, cfg);
    lm.name = lm.models->variant().name() == "full" ? "physord" : "physord_" + lm.models->variant().name();
    lm.params = lm.models->param_count();
    lm.flops = count_flops(*lm.models, p, step);
    lm.predictor = physord_predictor(*lm.models, p);
  } else {
    throw SchemaMismatch("unknown checkpoint model '" + kind + "'");
  }
}

double speed(const StateD& s) { return std::sqrt(dot(s.v, s.v)); }

// Ground truth vs prediction along one window, with speed and its rate of
// change for plotting.
std::string trajectory_plot_csv(const Sequence& gt, const Sequence& pred, const StateD& s0, double dt) {
  std::string out = "step,t,gt_x,gt_y,gt_z,pred_x,pred_y,pred_z,gt_speed,pred_speed,gt_accel,pred_accel\n";
  double gs_prev = speed(s0), ps_prev = speed(s0);
  for (std::size_t k = 0; k < gt.size(); ++k) {
    const double gs = speed(gt[k]), ps = speed(pred[k]);
    const double vals[] = {static_cast<double>(k + 1) * dt,
                           gt[k].x[0], gt[k].x[1], gt[k].x[2],
                           pred[k].x[0], pred[k].x[1], pred[k].x[2],
                           gs, ps, (gs - gs_prev) / dt, (ps - ps_prev) / dt};
    out += std::to_string(k + 1);
    for (double v : vals) out += "," + format_double(v);
    out += "\n";
    gs_prev = gs;
    ps_prev = ps;
  }
  return out;
}

void cmd_eval(const EvalArgs& a) {
  if (a.horizon < 1 || a.stride < 1) throw ConfigError("--horizon and --stride must be >= 1");
  if (a.step < 1 || a.step > a.horizon) {
    throw StepOutOfRange("step " + std::to_string(a.step) + " outside windows of " + std::to_string(a.horizon) +
                         " steps");
  }
  const Dataset ds = load_dataset(a.data);
  LoadedModel lm;
  load_model(a.checkpoint, ds, a.step, lm);
  const auto windows = test_windows(ds, a.horizon, a.stride);
  const Evaluation ev = evaluate(ds, windows, lm.predictor, a.step);

  const fs::path out(a.out);
  const fs::path dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
  make_dir(dir);
  json report = model_entry(ev.report, lm.params, lm.flops);
  report["model"] = lm.name;
  report["step"] = a.step;
  report["config"] = {{"command", "eval"},
                      {"data", fs::absolute(a.data).string()},
                      {"checkpoint", a.checkpoint},
                      {"step", a.step},
                      {"horizon", a.horizon},
                      {"stride", a.stride},
                      {"out", a.out}};
  write_json(out, report);
  const std::string stem = out.stem().string();
  write_text(dir / (stem + "_table.csv"), metrics_table_csv({{lm.name, ev.report}}));

  // One plot file per test trajectory: its first evaluated window.
  const fs::path traj_dir = dir / (stem + "_trajectories");
  make_dir(traj_dir);
  std::size_t last = static_cast<std::size_t>(-1);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (windows[i].traj == last) continue;
    last = windows[i].traj;
    write_text(traj_dir / trajectory_file_name(last),
               trajectory_plot_csv(ev.gts[i], ev.preds[i], window_state(ds, windows[i], 0), ds.vehicle.dt));
  }
  std::fprintf(stderr, "%s step %d: rmse %.4f pos %.4f ang %.4f over %zu windows\n", lm.name.c_str(), a.step,
               ev.report.rmse, ev.report.pos_dist, ev.report.ang_dist, windows.size());
}

// ---- protocol ---------------------------------------------------------------

struct ProtocolArgs {
  std::string name;
  std::string out;
  std::string data;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  int trajectories = 60;
  int steps = 300;
};

void cmd_protocol(const ProtocolArgs& a) {
  TrainConfig cfg = resolve_train_config(a.config, std::nullopt, a.seed, a.epochs);
  make_dir(a.out);
  Dataset ds;
  if (a.data.empty()) {
    ds = make_dataset(WorldSpec{}, a.trajectories, a.steps, cfg.seed);
    write_dataset(ds, fs::path(a.out) / "data");
  } else {
    ds = load_dataset(a.data);
  }
  json resolved = to_json(cfg);
  resolved["command"] = "protocol";
  resolved["name"] = a.name;
  resolved["data"] = a.data.empty() ? (fs::absolute(a.out) / "data").string() : fs::absolute(a.data).string();
  write_json(fs::path(a.out) / "config.json", resolved);

  ProtocolContext ctx;
  ctx.out_dir = fs::path(a.out) / "runs";
  ctx.progress = [](const std::string& s) { std::cerr << s << "\n"; };
  const json report = run_protocol(a.name, ds, cfg, ctx);
  write_json(fs::path(a.out) / "report.json", report);
  if (report.contains("table_csv")) write_text(fs::path(a.out) / "table.csv", report["table_csv"].get<std::string>());
  std::cerr << "wrote " << (fs::path(a.out) / "report.json").string() << "\n";
}

int run(int argc, char** argv) {
  CLI::App app{"Learned rigid-body dynamics for vehicle motion prediction"};
  app.require_subcommand(1);

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Simulate a synthetic trajectory dataset");
  gen->add_option("--world", ga.world, "World spec JSON (defaults if omitted)");
  gen->add_option("--out", ga.out, "Output directory")->required();
  gen->add_option("--seed", ga.seed, "Master seed");
  gen->add_option("--trajectories", ga.trajectories, "Number of trajectories");
  gen->add_option("--steps", ga.steps, "Recorded steps per trajectory (>= 21)");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a dynamics model or the Kalman filter baseline");
  tr->add_option("--data", ta.data, "Dataset directory")->required();
  tr->add_option("--config", ta.config, "Training config JSON");
  tr->add_option("--out", ta.out, "Output directory")->required();
  tr->add_option("--variant", ta.variant, "full|phys|f|u");
  tr->add_option("--baseline", ta.baseline, "neural|kfns")->check(CLI::IsMember({"neural", "kfns"}));
  tr->add_option("--seed", ta.seed, "Override the config seed");
  tr->add_option("--epochs", ta.epochs, "Override the config epoch count");
  tr->add_flag("--verbose", ta.verbose, "Print per-epoch losses");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  ev->add_option("--data", ea.data, "Dataset directory")->required();
  ev->add_option("--checkpoint", ea.checkpoint, "Weight file, or builtin:cv / builtin:oracle")->required();
  ev->add_option("--step", ea.step, "Evaluation step");
  ev->add_option("--horizon", ea.horizon, "Window length");
  ev->add_option("--stride", ea.stride, "Window stride");
  ev->add_option("--out", ea.out, "Report path");

  ProtocolArgs pa;
  auto* pr = app.add_subcommand("protocol", "Run an experiment protocol end to end");
  pr->add_option("--name", pa.name, "accuracy|generalization|data_efficiency|ablation")->required();
  pr->add_option("--out", pa.out, "Output directory")->required();
  pr->add_option("--data", pa.data, "Dataset directory (generated from defaults if omitted)");
  pr->add_option("--config", pa.config, "Training config JSON");
  pr->add_option("--seed", pa.seed, "Override the config seed");
  pr->add_option("--epochs", pa.epochs, "Override the config epoch count");
  pr->add_option("--trajectories", pa.trajectories, "Trajectories when generating");
  pr->add_option("--steps", pa.steps, "Steps per trajectory when generating");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) cmd_generate(ga);
    if (*tr) cmd_train(ta);
    if (*ev) cmd_eval(ea);
    if (*pr) cmd_protocol(pa);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace
}  // namespace physord

int main(int argc, char** argv) { return physord::run(argc, argv); }
