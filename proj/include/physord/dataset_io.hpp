#pragma once

// Trajectory CSV + JSON sidecar files, dataset manifests, trajectory-level
// splits and sliding windows.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "physord/datagen.hpp"
#include "physord/errors.hpp"
#include "physord/types.hpp"

namespace physord {

namespace fs = std::filesystem;

inline const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols{"t",   "x",   "y",   "z",   "r00", "r01",      "r02",     "r10",
                                             "r11", "r12", "r20", "r21", "r22", "vx",       "vy",      "vz",
                                             "wx",  "wy",  "wz",  "throttle", "steering", "brake"};
  return cols;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s, std::size_t line, const std::string& column) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw ParseError("line " + std::to_string(line) + ": column '" + column + "': cannot parse '" + std::string(s) +
                     "' as a number");
  }
  if (!std::isfinite(v)) throw ParseError("line " + std::to_string(line) + ": column '" + column + "' is not finite");
  return v;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

inline std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

inline std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline nlohmann::json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("'" + path.string() + "': " + e.what());
  }
}

inline std::string trajectory_csv(const TrajectoryRecord& rec) {
  std::string out;
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
  out += '\n';
  for (std::size_t k = 0; k < rec.states.size(); ++k) {
    const StateD& s = rec.states[k];
    const Action& a = rec.actions[k];
    std::vector<double> row;
    row.reserve(cols.size());
    row.push_back(static_cast<double>(k) * rec.dt);
    row.insert(row.end(), s.x.c.begin(), s.x.c.end());
    row.insert(row.end(), s.R.a.begin(), s.R.a.end());
    row.insert(row.end(), s.v.c.begin(), s.v.c.end());
    row.insert(row.end(), s.w.c.begin(), s.w.c.end());
    row.push_back(a.throttle);
    row.push_back(a.steering);
    row.push_back(a.brake);
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += format_double(row[i]);
    }
    out += '\n';
  }
  return out;
}

inline nlohmann::json trajectory_sidecar(const TrajectoryRecord& rec) {
  return {{"dt", rec.dt}, {"terrain_tag", rec.terrain_tag}, {"b0", rec.b0.wheel_disc}, {"seed", rec.seed}};
}

inline fs::path sidecar_path(const fs::path& csv) {
  fs::path p = csv;
  return p.replace_extension(".json");
}

inline void write_csv(const TrajectoryRecord& rec, const fs::path& csv_path) {
  if (rec.states.size() != rec.actions.size()) throw LengthMismatch("record has unequal state and action counts");
  write_text(csv_path, trajectory_csv(rec));
  write_text(sidecar_path(csv_path), trajectory_sidecar(rec).dump(2) + "\n");
}

// Parses CSV text; columns are located by header name and may appear in any
// order. Extra columns are ignored.
inline void parse_trajectory_csv(const std::string& text, TrajectoryRecord& rec, double rotation_tol = 1e-6) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::size_t> index;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    if (index.empty()) {
      std::map<std::string, std::size_t> header;
      const auto fields = split_csv_line(line);
      for (std::size_t i = 0; i < fields.size(); ++i) header[trim(fields[i])] = i;
      for (const auto& c : csv_columns()) {
        auto it = header.find(c);
        if (it == header.end()) throw SchemaMismatch("missing column '" + c + "'");
        index.push_back(it->second);
      }
      continue;
    }
    const auto fields = split_csv_line(line);
    std::vector<double> v(index.size());
    for (std::size_t c = 0; c < index.size(); ++c) {
      if (index[c] >= fields.size()) {
        throw ParseError("line " + std::to_string(lineno) + ": expected at least " + std::to_string(index[c] + 1) +
                         " fields, got " + std::to_string(fields.size()));
      }
      v[c] = parse_double(fields[index[c]], lineno, csv_columns()[c]);
    }
    StateD s;
    for (std::size_t i = 0; i < 3; ++i) s.x[i] = v[1 + i];
    for (std::size_t i = 0; i < 9; ++i) s.R.a[i] = v[4 + i];
    for (std::size_t i = 0; i < 3; ++i) s.v[i] = v[13 + i];
    for (std::size_t i = 0; i < 3; ++i) s.w[i] = v[16 + i];
    if (!lie::is_rotation(s.R, rotation_tol)) {
      throw ParseError("line " + std::to_string(lineno) + ": rotation entries do not form a rotation matrix");
    }
    rec.states.push_back(s);
    rec.actions.push_back(Action{v[19], v[20], v[21]}.clamped());
  }
  if (index.empty()) throw SchemaMismatch("empty file: no header line");
}

inline TrajectoryRecord read_csv(const fs::path& csv_path) {
  TrajectoryRecord rec;
  const fs::path side = sidecar_path(csv_path);
  if (fs::exists(side)) {
    const nlohmann::json j = read_json(side);
    try {
      rec.dt = j.at("dt").get<double>();
      rec.terrain_tag = j.at("terrain_tag").get<std::string>();
      rec.b0.wheel_disc = j.at("b0").get<std::array<double, 4>>();
      rec.seed = j.value("seed", std::uint64_t{0});
    } catch (const nlohmann::json::exception& e) {
      throw SchemaMismatch("'" + side.string() + "': " + e.what());
    }
  } else {
    throw IoError("missing sidecar '" + side.string() + "'");
  }
  try {
    parse_trajectory_csv(read_text(csv_path), rec);
  } catch (const ParseError& e) {
    throw ParseError(csv_path.string() + ": " + e.what());
  } catch (const SchemaMismatch& e) {
    throw SchemaMismatch(csv_path.string() + ": " + e.what());
  }
  return rec;
}

struct VehicleInfo {
  double mass = 1.0;
  std::array<double, 3> inertia{0.1, 0.15, 0.2};
  double alpha = 0.5;
  double dt = 0.1;

  VehicleParams params() const {
    return VehicleParams::make(mass, Mat3d::diag(inertia[0], inertia[1], inertia[2]), alpha, dt);
  }
};

struct Dataset {
  std::vector<TrajectoryRecord> records;
  VehicleInfo vehicle;
  std::optional<WorldSpec> world;
  std::uint64_t seed = 0;

  std::vector<std::string> tags() const {
    std::vector<std::string> t;
    for (const auto& r : records) {
      if (std::find(t.begin(), t.end(), r.terrain_tag) == t.end()) t.push_back(r.terrain_tag);
    }
    return t;
  }
};

inline Dataset make_dataset(const WorldSpec& world, int n_traj, int steps, std::uint64_t seed) {
  Dataset ds;
  ds.records = generate(world, n_traj, steps, seed);
  ds.vehicle = {world.mass, world.inertia, world.alpha, world.dt};
  ds.world = world;
  ds.seed = seed;
  return ds;
}

inline std::string trajectory_file_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "traj_%03zu.csv", i);
  return buf;
}

inline void write_dataset(const Dataset& ds, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const std::string name = trajectory_file_name(i);
    write_csv(ds.records[i], dir / name);
    files.push_back({{"csv", name},
                     {"sidecar", sidecar_path(name).string()},
                     {"terrain_tag", ds.records[i].terrain_tag},
                     {"rows", ds.records[i].size()}});
  }
  nlohmann::json manifest = {{"files", files},
                             {"terrain_tags", ds.tags()},
                             {"seed", ds.seed},
                             {"vehicle",
                              {{"mass", ds.vehicle.mass},
                               {"inertia", ds.vehicle.inertia},
                               {"alpha", ds.vehicle.alpha},
                               {"dt", ds.vehicle.dt}}}};
  if (ds.world) manifest["world"] = world_to_json(*ds.world);
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

// Loads a directory written by write_dataset. Without a manifest every *.csv
// (with sidecar) is loaded in name order and default vehicle constants apply.
inline Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("data directory '" + dir.string() + "' does not exist");
  Dataset ds;
  const fs::path manifest = dir / "manifest.json";
  if (fs::exists(manifest)) {
    const nlohmann::json j = read_json(manifest);
    try {
      if (j.contains("vehicle")) {
        const auto& v = j.at("vehicle");
        ds.vehicle.mass = v.value("mass", ds.vehicle.mass);
        ds.vehicle.inertia = v.value("inertia", ds.vehicle.inertia);
        ds.vehicle.alpha = v.value("alpha", ds.vehicle.alpha);
        ds.vehicle.dt = v.value("dt", ds.vehicle.dt);
      }
      ds.seed = j.value("seed", std::uint64_t{0});
      if (j.contains("world")) ds.world = world_from_json(j.at("world"));
      for (const auto& f : j.at("files")) ds.records.push_back(read_csv(dir / f.at("csv").get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
      throw SchemaMismatch("'" + manifest.string() + "': " + e.what());
    }
  } else {
    std::vector<fs::path> csvs;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.path().extension() == ".csv") csvs.push_back(e.path());
    }
    std::sort(csvs.begin(), csvs.end());
    for (const auto& p : csvs) ds.records.push_back(read_csv(p));
    if (!ds.records.empty()) ds.vehicle.dt = ds.records.front().dt;
  }
  if (ds.records.empty()) throw IoError("no trajectories found in '" + dir.string() + "'");
  ds.vehicle.params();
  return ds;
}

// Trajectory-level split: index mod 10 in [0, 7) train, 7 validation, 8-9 test.
enum class Split { train, validation, test };

inline Split split_of(std::size_t trajectory) {
  const std::size_t r = trajectory % 10;
  if (r < 7) return Split::train;
  if (r == 7) return Split::validation;
  return Split::test;
}

inline std::vector<std::size_t> split_indices(const Dataset& ds, Split s) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    if (split_of(i) == s) out.push_back(i);
  }
  return out;
}

// `steps` transitions starting at row `start` of trajectory `traj`.
struct Window {
  std::size_t traj = 0;
  std::size_t start = 0;
  int steps = 0;
};

inline std::vector<Window> make_windows(const Dataset& ds, std::span<const std::size_t> trajectories, int steps,
                                        int stride) {
  if (steps < 1) throw ConfigError("window horizon must be at least 1");
  if (stride < 1) throw ConfigError("window stride must be at least 1");
  std::vector<Window> out;
  for (std::size_t t : trajectories) {
    const std::size_t len = ds.records.at(t).size();
    for (std::size_t s = 0; s + static_cast<std::size_t>(steps) < len; s += static_cast<std::size_t>(stride)) {
      out.push_back({t, s, steps});
    }
  }
  return out;
}

// First ceil(fraction * W) windows in trajectory order.
inline std::vector<Window> take_fraction(const std::vector<Window>& windows, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("data_fraction must lie in (0, 1]");
  const auto n = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(windows.size()) - 1e-9));
  return {windows.begin(), windows.begin() + static_cast<std::ptrdiff_t>(std::min(n, windows.size()))};
}

inline const StateD& window_state(const Dataset& ds, const Window& w, int k) {
  return ds.records[w.traj].states[w.start + static_cast<std::size_t>(k)];
}

inline std::span<const Action> window_actions(const Dataset& ds, const Window& w) {
  return std::span<const Action>(ds.records[w.traj].actions).subspan(w.start, static_cast<std::size_t>(w.steps));
}

// Ground-truth states 1..steps.
inline std::vector<StateD> window_targets(const Dataset& ds, const Window& w) {
  const auto& st = ds.records[w.traj].states;
  return {st.begin() + static_cast<std::ptrdiff_t>(w.start + 1),
          st.begin() + static_cast<std::ptrdiff_t>(w.start + 1 + static_cast<std::size_t>(w.steps))};
}

}  // namespace physord
