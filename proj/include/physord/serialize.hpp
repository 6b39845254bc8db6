#pragma once

// Binary weight container:
//   "PHYSORD1" | u64 spec digest | u64 array count | per array: u64 length, f64[length]
// all little-endian, plus a JSON sidecar describing the networks.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "physord/dataset_io.hpp"
#include "physord/errors.hpp"
#include "physord/mlp.hpp"
#include "physord/models.hpp"

namespace physord {

inline constexpr char kWeightMagic[8] = {'P', 'H', 'Y', 'S', 'O', 'R', 'D', '1'};

// FNV-1a, 64 bit.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct WeightContainer {
  std::uint64_t digest = 0;
  std::vector<std::vector<double>> arrays;

  friend bool operator==(const WeightContainer&, const WeightContainer&) = default;
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(const std::string& in, std::size_t& pos) {
  if (pos + 8 > in.size()) throw ParseError("weight container truncated at byte " + std::to_string(pos));
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 8;
  return v;
}

}  // namespace detail

inline std::string encode_container(const WeightContainer& c) {
  std::string out(kWeightMagic, 8);
  detail::put_u64(out, c.digest);
  detail::put_u64(out, c.arrays.size());
  for (const auto& a : c.arrays) {
    detail::put_u64(out, a.size());
    for (double v : a) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline WeightContainer decode_container(const std::string& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kWeightMagic, 8) != 0) {
    throw SchemaMismatch("not a weight container (bad magic)");
  }
  std::size_t pos = 8;
  WeightContainer c;
  c.digest = detail::get_u64(bytes, pos);
  const std::uint64_t n = detail::get_u64(bytes, pos);
  if (n > bytes.size()) throw ParseError("weight container array count is implausible");
  for (std::uint64_t k = 0; k < n; ++k) {
    const std::uint64_t len = detail::get_u64(bytes, pos);
    if (len > (bytes.size() - pos) / 8) throw ParseError("weight container truncated in array " + std::to_string(k));
    std::vector<double> a(len);
    for (auto& v : a) v = std::bit_cast<double>(detail::get_u64(bytes, pos));
    c.arrays.push_back(std::move(a));
  }
  if (pos != bytes.size()) throw ParseError("trailing bytes after weight container");
  return c;
}

inline void save_container(const fs::path& path, const WeightContainer& c) { write_text(path, encode_container(c)); }

inline WeightContainer load_container(const fs::path& path) { return decode_container(read_text(path)); }

// Sidecar next to a weight file: model.bin -> model.json.
inline fs::path weights_sidecar(const fs::path& weights) {
  fs::path p = weights;
  return p.replace_extension(".json");
}

inline nlohmann::json spec_to_json(const nn::MlpSpec& s) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : s.layers) layers.push_back({l.in, l.out});
  return {{"activation", nn::to_string(s.activation)}, {"layers", layers}};
}

inline nn::MlpSpec spec_from_json(const nlohmann::json& j) {
  nn::MlpSpec s;
  s.activation = nn::activation_from_string(j.at("activation").get<std::string>());
  for (const auto& l : j.at("layers")) s.layers.push_back({l.at(0).get<int>(), l.at(1).get<int>()});
  try {
    s.validate();
  } catch (const DimMismatch& e) {
    throw SchemaMismatch(std::string("network spec: ") + e.what());
  }
  return s;
}

inline nlohmann::json norm_to_json(const nn::InputNorm& n) {
  if (n.empty()) return nullptr;
  return {{"shift", n.shift}, {"scale", n.scale}};
}

inline nn::InputNorm norm_from_json(const nlohmann::json& j) {
  if (j.is_null()) return {};
  return {j.at("shift").get<std::vector<double>>(), j.at("scale").get<std::vector<double>>()};
}

// Layer arrays in declaration order: W0, b0, W1, b1, ...
inline void append_mlp_arrays(const nn::Mlp& net, std::vector<std::vector<double>>& out) {
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    out.emplace_back(net.weights(l).begin(), net.weights(l).end());
    out.emplace_back(net.bias(l).begin(), net.bias(l).end());
  }
}

inline std::size_t read_mlp_arrays(nn::Mlp& net, const std::vector<std::vector<double>>& in, std::size_t pos) {
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    if (pos + 2 > in.size()) throw SchemaMismatch("weight container has too few arrays");
    auto w = net.weights(l);
    auto b = net.bias(l);
    if (in[pos].size() != w.size() || in[pos + 1].size() != b.size()) {
      throw SchemaMismatch("layer " + std::to_string(l) + " array sizes do not match the declared spec");
    }
    std::copy(in[pos].begin(), in[pos].end(), w.begin());
    std::copy(in[pos + 1].begin(), in[pos + 1].end(), b.begin());
    pos += 2;
  }
  return pos;
}

inline std::string models_canonical(const DynamicsModels& m) {
  std::string s = "variant=" + m.variant().name() + ";du=" + m.du_net().spec().canonical();
  s += m.has_force_net() ? ";f=" + m.f_net().spec().canonical() : std::string(";gains=3");
  return s;
}

inline nlohmann::json models_sidecar(const DynamicsModels& m) {
  nlohmann::json j = {{"format", "PHYSORD1"},
                      {"model", "physord"},
                      {"variant", m.variant().name()},
                      {"digest", fnv1a(models_canonical(m))},
                      {"param_count", m.param_count()},
                      {"du_net", spec_to_json(m.du_net().spec())},
                      {"du_norm", norm_to_json(m.du_net().input_norm())}};
  if (m.has_force_net()) {
    j["f_net"] = spec_to_json(m.f_net().spec());
    j["f_norm"] = norm_to_json(m.f_net().input_norm());
  }
  return j;
}

inline WeightContainer models_container(const DynamicsModels& m) {
  WeightContainer c;
  c.digest = fnv1a(models_canonical(m));
  append_mlp_arrays(m.du_net(), c.arrays);
  if (m.has_force_net()) {
    append_mlp_arrays(m.f_net(), c.arrays);
  } else {
    c.arrays.emplace_back(m.gains().begin(), m.gains().end());
  }
  return c;
}

// Writes `path` (binary) and its JSON sidecar; `extra` keys are merged into
// the sidecar.
inline void save_models(const fs::path& path, const DynamicsModels& m, const nlohmann::json& extra = {}) {
  save_container(path, models_container(m));
  nlohmann::json side = models_sidecar(m);
  if (extra.is_object()) side.update(extra);
  write_text(weights_sidecar(path), side.dump(2) + "\n");
}

inline DynamicsModels models_from(const nlohmann::json& side, const WeightContainer& c) {
  try {
    const Variant variant = Variant::from_name(side.at("variant").get<std::string>());
    const nn::MlpSpec du = spec_from_json(side.at("du_net"));
    DynamicsModels m(variant, du.activation);
    if (!(m.du_net().spec() == du)) throw SchemaMismatch("du_net spec does not match the variant architecture");
    if (m.has_force_net() && !(m.f_net().spec() == spec_from_json(side.at("f_net")))) {
      throw SchemaMismatch("f_net spec does not match the variant architecture");
    }
    if (c.digest != fnv1a(models_canonical(m))) throw SchemaMismatch("weight digest does not match the sidecar spec");
    std::size_t pos = read_mlp_arrays(m.du_net(), c.arrays, 0);
    if (m.has_force_net()) {
      pos = read_mlp_arrays(m.f_net(), c.arrays, pos);
      m.f_net().set_input_norm(norm_from_json(side.value("f_norm", nlohmann::json())));
    } else {
      if (pos >= c.arrays.size() || c.arrays[pos].size() != 3) throw SchemaMismatch("missing action gains");
      std::copy(c.arrays[pos].begin(), c.arrays[pos].end(), m.gains().begin());
      ++pos;
    }
    if (pos != c.arrays.size()) throw SchemaMismatch("weight container has extra arrays");
    m.du_net().set_input_norm(norm_from_json(side.value("du_norm", nlohmann::json())));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaMismatch(std::string("weight sidecar: ") + e.what());
  }
}

inline DynamicsModels load_models(const fs::path& path) {
  return models_from(read_json(weights_sidecar(path)), load_container(path));
}

}  // namespace physord
