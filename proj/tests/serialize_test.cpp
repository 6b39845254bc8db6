#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include <unistd.h>

#include "physord/baselines.hpp"
#include "physord/serialize.hpp"

namespace physord {
namespace {

fs::path temp_file(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("physord_ser_" + std::to_string(::getpid()));
  fs::create_directories(d);
  return d / name;
}

TEST(Container, RoundTripIsBitExact) {
  WeightContainer c;
  c.digest = 0x0123456789abcdefULL;
  c.arrays = {{0.1, -0.0, std::numeric_limits<double>::denorm_min(), 1e308}, {}, {std::nextafter(1.0, 2.0)}};
  const std::string bytes = encode_container(c);
  EXPECT_EQ(bytes.substr(0, 8), "PHYSORD1");
  EXPECT_EQ(bytes.size(), 8u + 8 + 8 + (8 + 32) + 8 + (8 + 8));
  const WeightContainer d = decode_container(bytes);
  EXPECT_EQ(d.digest, c.digest);
  ASSERT_EQ(d.arrays.size(), 3u);
  for (std::size_t i = 0; i < c.arrays.size(); ++i) {
    ASSERT_EQ(d.arrays[i].size(), c.arrays[i].size());
    for (std::size_t k = 0; k < c.arrays[i].size(); ++k) {
      EXPECT_EQ(std::bit_cast<std::uint64_t>(d.arrays[i][k]), std::bit_cast<std::uint64_t>(c.arrays[i][k]));
    }
  }
  EXPECT_EQ(encode_container(d), bytes);
}

TEST(Container, LittleEndianLayout) {
  WeightContainer c;
  c.digest = 1;
  c.arrays = {{1.0}};
  const std::string b = encode_container(c);
  EXPECT_EQ(static_cast<unsigned char>(b[8]), 1u);
  EXPECT_EQ(static_cast<unsigned char>(b[15]), 0u);
  // 1.0 = 0x3ff0000000000000, high byte last
  EXPECT_EQ(static_cast<unsigned char>(b[39]), 0x3fu);
  EXPECT_EQ(static_cast<unsigned char>(b[38]), 0xf0u);
}

TEST(Container, CorruptInputRejected) {
  WeightContainer c;
  c.arrays = {{1.0, 2.0}};
  std::string b = encode_container(c);
  EXPECT_THROW(decode_container("NOTMAGIC" + b.substr(8)), SchemaMismatch);
  EXPECT_THROW(decode_container(b.substr(0, b.size() - 3)), ParseError);
  EXPECT_THROW(decode_container(b + "x"), ParseError);
}

class ModelFiles : public ::testing::TestWithParam<std::string> {};

TEST_P(ModelFiles, SaveLoadRoundTrip) {
  DynamicsModels m = DynamicsModels::initialized(Variant::from_name(GetParam()), 5);
  m.du_net().set_input_norm({std::vector<double>(12, 0.5), std::vector<double>(12, 2.0)});
  const fs::path p = temp_file("model_" + GetParam() + ".bin");
  save_models(p, m, {{"note", "x"}});
  EXPECT_TRUE(fs::exists(weights_sidecar(p)));
  const DynamicsModels back = load_models(p);
  EXPECT_EQ(back.variant().name(), m.variant().name());
  EXPECT_EQ(back.flat_params(), m.flat_params());
  EXPECT_EQ(back.du_net().input_norm().scale, m.du_net().input_norm().scale);
  EXPECT_EQ(encode_container(models_container(back)), read_text(p));
  const auto side = read_json(weights_sidecar(p));
  EXPECT_EQ(side["param_count"], m.param_count());
  EXPECT_EQ(side["note"], "x");
}

INSTANTIATE_TEST_SUITE_P(Variants, ModelFiles, ::testing::Values("full", "phys", "f", "u"));

TEST(ModelFilesErrors, DigestMismatch) {
  const DynamicsModels m = DynamicsModels::initialized(Variant::from_name("full"), 1);
  auto side = models_sidecar(m);
  auto c = models_container(m);
  c.digest ^= 1;
  EXPECT_THROW(models_from(side, c), SchemaMismatch);
  c = models_container(m);
  c.arrays.pop_back();
  EXPECT_THROW(models_from(side, c), SchemaMismatch);
  side["du_net"]["layers"][0][1] = 11;
  EXPECT_THROW(models_from(side, models_container(m)), SchemaMismatch);
}

TEST(ModelFilesErrors, MissingFile) { EXPECT_THROW(load_models(temp_file("absent.bin")), IoError); }

TEST(KfnsFiles, RoundTrip) {
  KfnsModel m;
  std::mt19937_64 rng(3);
  m.net.init(rng);
  m.noise = KfNoise::uniform(1e-4, 0.3, 0.01, 1e-2, 1e-2);
  const fs::path p = temp_file("kf.bin");
  save_kfns(p, m);
  const KfnsModel back = kfns_from(read_json(weights_sidecar(p)), load_container(p));
  EXPECT_EQ(std::vector<double>(back.net.params().begin(), back.net.params().end()),
            std::vector<double>(m.net.params().begin(), m.net.params().end()));
  EXPECT_EQ(back.noise.q, m.noise.q);
  EXPECT_EQ(back.noise.rm, m.noise.rm);
}

}  // namespace
}  // namespace physord
