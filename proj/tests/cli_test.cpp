#include <gtest/gtest.h>

#include <cstdlib>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include "physord/dataset_io.hpp"

namespace physord {
namespace {

const fs::path& work_dir() {
  static const fs::path d = [] {
    fs::path p = fs::temp_directory_path() / ("physord_cli_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return d;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(PHYSORD_CLI) + " " + args + " 2>" + (work_dir() / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string last_stderr() { return read_text(work_dir() / "stderr.txt"); }

std::string p(const std::string& name) { return (work_dir() / name).string(); }

// Small noise-free dataset shared by the eval and train tests.
const std::string& clean_data() {
  static const std::string dir = [] {
    write_text(work_dir() / "clean_world.json", R"({"force_jitter": 0.0, "obs_jitter": 0.0})");
    const std::string d = p("clean");
    EXPECT_EQ(cli("generate --world " + p("clean_world.json") + " --out " + d + " --trajectories 10 --steps 40 --seed 4"), 0);
    return d;
  }();
  return dir;
}

TEST(Cli, GenerateDefaults) {
  ASSERT_EQ(cli("generate --out " + p("gen_a") + " --seed 7"), 0) << last_stderr();
  const auto m = read_json(p("gen_a") + "/manifest.json");
  EXPECT_EQ(m["files"].size(), 60u);
  EXPECT_EQ(m["terrain_tags"].size(), 7u);
  EXPECT_TRUE(fs::exists(p("gen_a") + "/config.json"));
  std::size_t csvs = 0;
  for (const auto& e : fs::directory_iterator(p("gen_a"))) csvs += e.path().extension() == ".csv";
  EXPECT_EQ(csvs, 60u);
}

TEST(Cli, GenerateIsByteIdenticalForSameSeed) {
  ASSERT_EQ(cli("generate --out " + p("gen_b") + " --seed 9 --trajectories 5 --steps 30"), 0);
  ASSERT_EQ(cli("generate --out " + p("gen_c") + " --seed 9 --trajectories 5 --steps 30"), 0);
  for (const auto& e : fs::directory_iterator(p("gen_b"))) {
    const fs::path other = fs::path(p("gen_c")) / e.path().filename();
    EXPECT_EQ(read_text(e.path()), read_text(other)) << e.path();
  }
}

TEST(Cli, GenerateRejectsShortTrajectories) {
  EXPECT_EQ(cli("generate --out " + p("gen_short") + " --steps 10"), 2);
  EXPECT_NE(last_stderr().find("21"), std::string::npos);
}

TEST(Cli, MissingDataDirIsIoError) {
  EXPECT_EQ(cli("train --data " + p("absent") + " --out " + p("t_absent")), 1);
  EXPECT_NE(last_stderr().find(p("absent")), std::string::npos);
}

TEST(Cli, UnknownConfigKeyIsValidationError) {
  write_text(work_dir() / "bad.json", R"({"epochz": 3})");
  EXPECT_EQ(cli("train --data " + clean_data() + " --config " + p("bad.json") + " --out " + p("t_bad")), 2);
}

TEST(Cli, StepBeyondWindowIsValidationError) {
  EXPECT_EQ(cli("eval --data " + clean_data() + " --checkpoint builtin:cv --step 25 --out " + p("e_step/r.json")), 2);
  EXPECT_NE(last_stderr().find("StepOutOfRange"), std::string::npos);
}

TEST(Cli, OracleOnNoiselessDataIsExact) {
  ASSERT_EQ(cli("eval --data " + clean_data() + " --checkpoint builtin:oracle --out " + p("e_oracle/report.json")), 0)
      << last_stderr();
  const auto r = read_json(p("e_oracle/report.json"));
  EXPECT_LT(r["rmse"].get<double>(), 1e-9);
  EXPECT_LT(r["pos_dist"].get<double>(), 1e-9);
  EXPECT_LT(r["ang_dist"].get<double>(), 1e-6);
  EXPECT_TRUE(fs::exists(p("e_oracle/report_table.csv")));
  EXPECT_TRUE(fs::exists(p("e_oracle/report_trajectories/traj_008.csv")));
  const std::string plot = read_text(p("e_oracle/report_trajectories/traj_008.csv"));
  EXPECT_EQ(plot.substr(0, plot.find('\n')),
            "step,t,gt_x,gt_y,gt_z,pred_x,pred_y,pred_z,gt_speed,pred_speed,gt_accel,pred_accel");
}

TEST(Cli, TrainThenEvalReportsParamsAndFlops) {
  write_text(work_dir() / "tiny.json", R"({"epochs": 1, "horizon": 5, "stride": 10})");
  ASSERT_EQ(cli("train --data " + clean_data() + " --config " + p("tiny.json") + " --out " + p("t_full") +
                " --variant full"),
            0)
      << last_stderr();
  const auto side = read_json(p("t_full/model.json"));
  EXPECT_EQ(side["param_count"], 5708);
  const auto resolved = read_json(p("t_full/config.json"));
  EXPECT_EQ(resolved["horizon"], 5);
  EXPECT_EQ(resolved["variant"], "full");
  ASSERT_EQ(cli("eval --data " + clean_data() + " --checkpoint " + p("t_full/model.bin") + " --out " +
                p("e_full/report.json")),
            0)
      << last_stderr();
  const auto r = read_json(p("e_full/report.json"));
  EXPECT_EQ(r["params"], 5708);
  EXPECT_GT(r["flops"].get<long>(), 0);
}

TEST(Cli, ProtocolAblationHasFourRows) {
  write_text(work_dir() / "proto.json", R"({"epochs": 1, "horizon": 5, "stride": 10, "eval_stride": 10})");
  ASSERT_EQ(cli("protocol --name ablation --data " + clean_data() + " --config " + p("proto.json") + " --out " +
                p("pr_abl")),
            0)
      << last_stderr();
  const auto r = read_json(p("pr_abl/report.json"));
  ASSERT_EQ(r["rows"].size(), 4u);
  EXPECT_EQ(r["rows"][0]["variant"], "phys");
  EXPECT_EQ(r["rows"][3]["variant"], "full");
  EXPECT_TRUE(fs::exists(p("pr_abl/config.json")));
}

TEST(Cli, UnknownProtocolIsValidationError) {
  EXPECT_EQ(cli("protocol --name bogus --data " + clean_data() + " --out " + p("pr_bogus")), 2);
}

}  // namespace
}  // namespace physord
