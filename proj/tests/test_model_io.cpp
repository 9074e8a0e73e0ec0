#include <gtest/gtest.h>

#include <random>

#include "aldsr/config.hpp"
#include "aldsr/model_io.hpp"
#include "support.hpp"

namespace aldsr {
namespace {

using test::TempDir;

ALDSRSpec small_spec() {
  ALDSRSpec spec;
  spec.n_blocks = 2;
  spec.width = 16;
  spec.reduction = 4;
  return spec;
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

TEST(WeightFile, RoundTripPreservesForwardBitExactly) {
  TempDir dir;
  ALDSR<float> a(small_spec());
  init_weights(a.parameters(), InitScheme::FanInUniform, 11);
  save_weights(dir / "m.aldw", a.parameters());

  ALDSR<float> b(small_spec());
  init_weights(b.parameters(), InitScheme::FanInUniform, 12);
  load_weights(dir / "m.aldw", b.parameters());

  std::mt19937_64 rng(1);
  const auto x = test::random_tensor<float>({1, 3, 7, 5}, rng, 0.0, 1.0);
  const auto ya = a.forward(x), yb = b.forward(x);
  ASSERT_EQ(ya.numel(), yb.numel());
  for (std::size_t i = 0; i < ya.numel(); ++i) ASSERT_EQ(ya.values()[i], yb.values()[i]);
}

TEST(WeightFile, EncodeDecodeRoundTrip) {
  const std::vector<WeightRecord> records = {{"a.weight", {2, 3}, {1, 2, 3, 4, 5, 6}},
                                             {"b", {1}, {-0.5f}}};
  const auto back = decode_weight_file(encode_weight_file(records));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].name, "a.weight");
  EXPECT_EQ(back[0].shape, (Shape{2, 3}));
  EXPECT_EQ(back[0].values, records[0].values);
  EXPECT_EQ(back[1].values, records[1].values);
  EXPECT_EQ(encode_weight_file(records).substr(0, 4), "ALDW");
}

TEST(WeightFile, CorruptHeadersAreDiagnosed) {
  std::string bytes = encode_weight_file({{"x", {1}, {1.0f}}});
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_NE(error_of([&] { decode_weight_file(bad_magic); }).find("magic"), std::string::npos);
  std::string bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_NE(error_of([&] { decode_weight_file(bad_version); }).find("version"), std::string::npos);
  EXPECT_THROW(decode_weight_file(bytes.substr(0, bytes.size() - 2)), FormatError);
  EXPECT_THROW(decode_weight_file(bytes + "zz"), FormatError);
  EXPECT_THROW(decode_weight_file(""), FormatError);
}

TEST(WeightFile, MismatchedTensorIsNamed) {
  TempDir dir;
  ALDSR<float> a(small_spec());
  save_weights(dir / "m.aldw", a.parameters());
  ALDSRSpec wider = small_spec();
  wider.width = 32;
  wider.reduction = 8;
  ALDSR<float> b(wider);
  const auto msg = error_of([&] { load_weights(dir / "m.aldw", b.parameters()); });
  EXPECT_NE(msg.find("shallow.weight"), std::string::npos) << msg;
  EXPECT_NE(msg.find("m.aldw"), std::string::npos) << msg;

  ALDSRSpec deeper = small_spec();
  deeper.n_blocks = 3;
  ALDSR<float> c(deeper);
  EXPECT_NE(error_of([&] { load_weights(dir / "m.aldw", c.parameters()); }).find("blocks.2"),
            std::string::npos);
}

TEST(WeightFile, MissingFileIsAnError) {
  TempDir dir;
  ALDSR<float> a(small_spec());
  EXPECT_ANY_THROW(load_weights(dir / "absent.aldw", a.parameters()));
}

TEST(ModelConfig, RoundTrip) {
  ModelSpec spec;
  ALDSRSpec arch = small_spec();
  arch.descriptor = DescriptorKind::Max;
  arch.scale = 3;
  arch.attention_bias = false;
  spec.arch = arch;
  spec.seed = 42;
  spec.init = InitScheme::ZeroGate;
  const auto cfg = model_spec_to_config(spec);
  const auto back = model_spec_from_config(KeyValueConfig::parse(cfg.serialize()));
  EXPECT_EQ(model_spec_to_config(back).serialize(), cfg.serialize());
  EXPECT_EQ(describe_arch(back), describe_arch(spec));
}

TEST(KeyValueConfig, ParseAndErrors) {
  const auto cfg = KeyValueConfig::parse("# comment\nB = 4\n  C=32  \nflag = yes\n\nlr = 1e-4\n");
  EXPECT_EQ(cfg.get_size("B", 0), 4u);
  EXPECT_EQ(cfg.get_size("C", 0), 32u);
  EXPECT_TRUE(cfg.get_bool("flag", false));
  EXPECT_DOUBLE_EQ(cfg.get_double("lr", 0.0), 1e-4);
  EXPECT_EQ(cfg.get("missing", "x"), "x");
  EXPECT_THROW(KeyValueConfig::parse("a = 1\na = 2\n"), ConfigError);
  EXPECT_THROW(KeyValueConfig::parse("no equals sign\n"), ConfigError);
  EXPECT_THROW(cfg.get_size("flag", 0), ConfigError);
  EXPECT_THROW(cfg.require_known({"B", "C"}), ConfigError);
  EXPECT_EQ(config_hash(cfg), config_hash(KeyValueConfig::parse(cfg.serialize())));
}

}  // namespace
}  // namespace aldsr
