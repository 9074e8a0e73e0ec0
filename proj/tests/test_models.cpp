#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "aldsr/models.hpp"
#include "aldsr/model_io.hpp"
#include "aldsr/ops.hpp"
#include "support.hpp"

namespace aldsr {
namespace {

using test::random_tensor;

std::size_t count_of(const std::string& arch) { return count_parameters(model_spec_for_arch(arch)).total; }

RDBFamilySpec rdb(RDBVariant variant) {
  RDBFamilySpec s;
  s.variant = variant;
  return s;
}

// Closed-form sizes, written out independently of the model code.
std::size_t attention_size(std::size_t c, std::size_t r, bool bias) {
  const std::size_t h = c / r;
  return 2 * c * h + (bias ? h + c : 0);
}
std::size_t ald_conv_size(std::size_t c, std::size_t r, bool bias) { return 9 * c + c * c + attention_size(c, r, bias); }
std::size_t aldb_size(std::size_t c, std::size_t r, bool bias) { return 4 * ald_conv_size(c, r, bias) + c * c + 2 * c * c; }

TEST(ParameterCounts, TableGoldens) {
  EXPECT_EQ(count_of("rdb"), 1363968u);
  EXPECT_EQ(count_of("dw-rdb"), 205056u);
  EXPECT_EQ(count_of("ldw-rdb"), 205056u);
}

TEST(ParameterCounts, SingleConv) {
  ParameterList<float> params;
  Conv2d<float>(64, 64).collect(params, "");
  EXPECT_EQ(count_values(params), 36864u);
}

TEST(ParameterCounts, RdbClosedForm) {
  std::size_t dense = 0;
  for (std::size_t i = 0; i < 8; ++i) dense += (64 + i * 64) * 64 * 9;
  EXPECT_EQ(count_of("rdb"), dense + (64 + 8 * 64) * 64);
}

TEST(ParameterCounts, AldRdbConventionReconciliation) {
  const auto rows = enumerate_attention_conventions(rdb(RDBVariant::ALD_RDB), {8, 16, 32});
  ASSERT_EQ(rows.size(), 6u);
  std::size_t hits = 0;
  for (const auto& row : rows) {
    if (row.total == 257280u) {
      ++hits;
      EXPECT_EQ(row.reduction, 32u);
      EXPECT_FALSE(row.attention_bias);
    }
  }
  EXPECT_EQ(hits, 1u);
}

TEST(ParameterCounts, AldRdbMinusLdwRdbIsAttentionOnly) {
  for (std::size_t r : {8, 16, 32})
    for (bool bias : {true, false}) {
      RDBFamilySpec ald = rdb(RDBVariant::ALD_RDB);
      ald.reduction = r;
      ald.attention_bias = bias;
      ModelSpec a;
      a.arch = ald;
      ModelSpec l;
      l.arch = rdb(RDBVariant::LDW_RDB);
      const auto ca = count_parameters(a);
      std::size_t expected = 0;
      for (std::size_t i = 0; i < 8; ++i) expected += attention_size(64 + 64 * i, r, bias);
      EXPECT_EQ(ca.total - count_parameters(l).total, expected);
      EXPECT_EQ(ca.attention, expected);
    }
}

TEST(ParameterCounts, DwEqualsLdwAcrossShapes) {
  for (std::size_t g0 : {16, 64})
    for (std::size_t g : {8, 32})
      for (std::size_t n : {2, 8}) {
        RDBFamilySpec dw = rdb(RDBVariant::DW_RDB);
        dw.in_width = g0;
        dw.growth = g;
        dw.n_layers = n;
        RDBFamilySpec ldw = dw;
        ldw.variant = RDBVariant::LDW_RDB;
        ModelSpec a, b;
        a.arch = dw;
        b.arch = ldw;
        EXPECT_EQ(count_parameters(a).total, count_parameters(b).total);
      }
}

TEST(ParameterCounts, AldbAndAldsrConstruction) {
  EXPECT_EQ(count_of("aldb"), aldb_size(64, 16, true));
  EXPECT_EQ(count_of("aldb"), 33296u);
  const std::size_t upsample = 2 * (64 * 256 * 9);
  EXPECT_EQ(count_of("aldsr"), 3 * 64 * 9 + 10 * aldb_size(64, 16, true) + upsample + 64 * 3 * 9);
}

TEST(Aldsr, OutputShapeIsScaleTimesInput) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> side(4, 16);
  for (std::size_t s : {2, 3, 4}) {
    ALDSRSpec spec;
    spec.n_blocks = 1;
    spec.width = 8;
    spec.reduction = 4;
    spec.scale = s;
    ALDSR<float> model(spec);
    init_weights(model.parameters(), InitScheme::FanInUniform, 3);
    for (int trial = 0; trial < 3; ++trial) {
      const std::size_t h = side(rng), w = side(rng);
      const auto y = model.forward(random_tensor<float>({1, 3, h, w}, rng, 0.0, 1.0));
      EXPECT_EQ(y.shape(), (Shape{1, 3, s * h, s * w}));
    }
  }
  ALDSRSpec spec;
  const auto y = ALDSR<float>(spec).forward(Tensor<float>({1, 3, 12, 12}, 0.5f));
  EXPECT_EQ(y.shape(), (Shape{1, 3, 48, 48}));
}

TEST(Aldsr, ZeroWeightsGiveZeroOutput) {
  ALDSRSpec spec;
  spec.n_blocks = 2;
  spec.width = 16;
  spec.reduction = 4;
  const ALDSR<double> model(spec);  // constructed with every tensor zero
  std::mt19937_64 rng(2);
  const auto y = model.forward(random_tensor<double>({1, 3, 6, 6}, rng, 0.0, 1.0));
  for (double v : y.values()) ASSERT_EQ(v, 0.0);
}

TEST(Aldsr, GlobalResidualIsLive) {
  ALDSRSpec spec;
  spec.n_blocks = 1;
  spec.width = 8;
  spec.reduction = 4;
  ALDSR<double> model(spec);
  init_weights(model.parameters(), InitScheme::FanInUniform, 4);
  std::mt19937_64 rng(3);
  const auto x = random_tensor<double>({1, 3, 6, 6}, rng, 0.0, 1.0);
  const auto with = model.forward(x);
  model.set_global_residual(false);
  const auto without = model.forward(x);
  double diff = 0.0;
  for (std::size_t i = 0; i < with.numel(); ++i) diff = std::max(diff, std::abs(with.values()[i] - without.values()[i]));
  EXPECT_GT(diff, 1e-6);
}

TEST(Init, SameSeedIsBitIdentical) {
  auto a = build_model<float>(model_spec_for_arch("aldsr"));
  auto b = build_model<float>(model_spec_for_arch("aldsr"));
  const auto pa = parameters_of(a), pb = parameters_of(b);
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    ASSERT_EQ(pa[i].name, pb[i].name);
    ASSERT_TRUE(std::equal(pa[i].tensor.values().begin(), pa[i].tensor.values().end(),
                           pb[i].tensor.values().begin()));
  }
  ModelSpec other = model_spec_for_arch("aldsr");
  other.seed = 2;
  const auto pc = parameters_of(build_model<float>(other));
  EXPECT_FALSE(std::equal(pa[0].tensor.values().begin(), pa[0].tensor.values().end(),
                          pc[0].tensor.values().begin()));
}

TEST(Init, FanInVarianceWithinTwentyPercent) {
  const auto params = parameters_of(build_model<double>(model_spec_for_arch("aldsr")));
  std::size_t checked = 0;
  for (const auto& p : params) {
    if (p.tensor.numel() < 2000 || p.name.find("bias") != std::string::npos) continue;
    double mean = 0.0, sq = 0.0;
    for (double v : p.tensor.values()) mean += v;
    mean /= p.tensor.numel();
    for (double v : p.tensor.values()) sq += (v - mean) * (v - mean);
    const double var = sq / (p.tensor.numel() - 1);
    const double expected = 1.0 / (3.0 * fan_in_of(p.tensor.shape()));
    EXPECT_NEAR(var / expected, 1.0, 0.2) << p.name;
    ++checked;
  }
  EXPECT_GT(checked, 10u);
}

TEST(Init, ZeroGateSchemeGivesHalfGates) {
  ALDSRSpec spec;
  spec.n_blocks = 2;
  spec.width = 16;
  spec.reduction = 4;
  ModelSpec ms;
  ms.arch = spec;
  ms.init = InitScheme::ZeroGate;
  const auto model = build_model<double>(ms);
  const ALDB<double> block(spec.block());
  init_weights([&] {
    ParameterList<double> p;
    block.collect(p, "");
    return p;
  }(), InitScheme::ZeroGate, 5);
  for (const auto& conv : block.convs()) {
    const auto s = attention_gate(*conv.attention(), describe_filters(conv.bank(), conv.descriptor()));
    for (double v : s.values()) EXPECT_EQ(v, 0.5);
  }
  std::size_t zeroed = 0;
  for (const auto& p : parameters_of(model)) {
    if (p.name.find("attention.") == std::string::npos) continue;
    for (double v : p.tensor.values()) ASSERT_EQ(v, 0.0) << p.name;
    ++zeroed;
  }
  EXPECT_GT(zeroed, 0u);
}

TEST(Aldb, PreservesSpatialShape) {
  ALDB<float> block(ALDBSpec{});
  ParameterList<float> params;
  block.collect(params, "");
  init_weights(params, InitScheme::FanInUniform, 6);
  std::mt19937_64 rng(7);
  const auto x = random_tensor<float>({1, 64, 24, 24}, rng);
  const auto out = block.forward(x, x);
  EXPECT_EQ(out.out.shape(), x.shape());
  EXPECT_EQ(out.state.shape(), x.shape());
}

// Zero ALD convs make every residual pair the identity; with identity fusion on
// the residual half and a carried state weight A, out = x + A * prev.
TEST(Aldb, LinearSanityPath) {
  ALDBSpec spec;
  spec.width = 4;
  spec.reduction = 2;
  const ALDB<double> block(spec);
  ParameterList<double> params;
  block.collect(params, "");
  std::mt19937_64 rng(8);
  Tensor<double> state_w, fusion_w;
  for (const auto& p : params) {
    if (p.name == "state.weight") state_w = p.tensor;
    if (p.name == "fusion.weight") fusion_w = p.tensor;
  }
  ASSERT_TRUE(state_w.defined() && fusion_w.defined());
  for (double& v : state_w.mutable_values()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  for (std::size_t c = 0; c < 4; ++c) {
    fusion_w.mutable_values()[c * 8 + c] = 1.0;
    fusion_w.mutable_values()[c * 8 + 4 + c] = 1.0;
  }
  const auto x = random_tensor<double>({1, 4, 3, 3}, rng);
  const auto prev = random_tensor<double>({1, 4, 3, 3}, rng);
  const auto out = block.forward(x, prev).out;
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 9; ++i) {
      double expected = x.values()[c * 9 + i];
      for (std::size_t k = 0; k < 4; ++k) expected += state_w.values()[c * 4 + k] * prev.values()[k * 9 + i];
      EXPECT_NEAR(out.values()[c * 9 + i], expected, 1e-14);
    }
}

TEST(Aldb, PrevStateReceivesGradient) {
  ALDBSpec spec;
  spec.width = 8;
  spec.reduction = 4;
  const ALDB<double> block(spec);
  ParameterList<double> params;
  block.collect(params, "");
  init_weights(params, InitScheme::FanInUniform, 9);
  std::mt19937_64 rng(10);
  const auto x = random_tensor<double>({1, 8, 4, 4}, rng);
  auto prev = random_tensor<double>({1, 8, 4, 4}, rng);
  prev.set_requires_grad();
  Tape<double> tape;
  tape.backward(sum(block.forward(x, prev).out));
  double norm = 0.0;
  for (double g : prev.grad()) norm += g * g;
  EXPECT_GT(norm, 0.0);
}

TEST(Aldb, WidthMismatchThrows) {
  ALDBSpec spec;
  spec.width = 8;
  spec.reduction = 4;
  const ALDB<double> block(spec);
  EXPECT_THROW(block.forward(Tensor<double>({1, 4, 3, 3}), Tensor<double>({1, 4, 3, 3})), DimensionError);
}

}  // namespace
}  // namespace aldsr
