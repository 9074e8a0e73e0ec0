#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "aldsr/layers.hpp"
#include "aldsr/ops.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace aldsr {
namespace {

using test::random_tensor;

double sigmoid_ref(double v) { return 1.0 / (1.0 + std::exp(-v)); }

void randomize(const ParameterList<double>& params, std::mt19937_64& rng, double amp) {
  std::uniform_real_distribution<double> dist(-amp, amp);
  for (const auto& p : params) {
    Tensor<double> t = p.tensor;
    for (double& v : t.mutable_values()) v = dist(rng);
  }
}

TEST(Descriptors, TrivialValues) {
  Tensor<double> eye({2, 3, 3});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 3; ++i) eye.mutable_values()[c * 9 + i * 4] = 1.0;
  const auto z = describe_filters(DepthwiseFilterBank<double>(eye), DescriptorKind::Determinant);
  EXPECT_EQ(std::vector<double>(z.values().begin(), z.values().end()), (std::vector<double>{1, 1}));

  const DepthwiseFilterBank<double> ones(Tensor<double>({1, 3, 3}, 1.0));
  EXPECT_EQ(describe_filters(ones, DescriptorKind::Average).item(), 1.0);
  EXPECT_EQ(describe_filters(ones, DescriptorKind::Max).item(), 1.0);
}

TEST(Descriptors, DeterminantMatchesLeibnizPerFilter) {
  std::mt19937_64 rng(1);
  const DepthwiseFilterBank<double> bank(random_tensor<double>({64, 3, 3}, rng));
  const auto z = describe_filters(bank, DescriptorKind::Determinant);
  for (std::size_t c = 0; c < 64; ++c) {
    EXPECT_LT(std::abs(z.values()[c] - test::leibniz3(bank.filters.values().data() + 9 * c)), 1e-12);
  }
}

TEST(Descriptors, DeterminantNeedsThreeByThree) {
  const DepthwiseFilterBank<double> bank(Tensor<double>({2, 5, 5}, 1.0));
  EXPECT_THROW(describe_filters(bank, DescriptorKind::Determinant), UnsupportedKernelError);
  EXPECT_NO_THROW(describe_filters(bank, DescriptorKind::Average));
  SeparableConvOptions options;
  options.kernel = 5;
  options.reduction = 2;
  EXPECT_THROW(SeparableConv<double>(LayerVariant::ALD, 4, 4, options), UnsupportedKernelError);
  options.descriptor = DescriptorKind::Max;
  EXPECT_NO_THROW(SeparableConv<double>(LayerVariant::ALD, 4, 4, options));
}

TEST(AttentionGate, ZeroBranchGivesHalf) {
  const AttentionBranch<double> branch(8, 4, true);
  std::mt19937_64 rng(2);
  const auto s = attention_gate(branch, random_tensor<double>({8}, rng));
  for (double v : s.values()) EXPECT_EQ(v, 0.5);
}

TEST(AttentionGate, LargeUpBias) {
  AttentionBranch<double> branch(4, 2, true);
  for (double& v : branch.up_bias.mutable_values()) v = 10.0;
  std::mt19937_64 rng(3);
  const auto s = attention_gate(branch, random_tensor<double>({4}, rng));
  for (double v : s.values()) EXPECT_NEAR(v, 0.99995, 1e-5);
}

TEST(AttentionGate, MatchesDenseMatrixOracle) {
  std::mt19937_64 rng(4);
  AttentionBranch<double> branch(32, 16, true);
  ParameterList<double> params;
  branch.collect(params, "");
  randomize(params, rng, 1.0);
  const auto z = random_tensor<double>({32}, rng);
  const auto s = attention_gate(branch, z);
  const std::size_t hidden = 2;
  std::vector<double> h(hidden);
  for (std::size_t j = 0; j < hidden; ++j) {
    double acc = branch.down_bias.values()[j];
    for (std::size_t i = 0; i < 32; ++i) acc += branch.down_weight.values()[j * 32 + i] * z.values()[i];
    h[j] = acc > 0 ? acc : 0.0;
  }
  for (std::size_t c = 0; c < 32; ++c) {
    double acc = branch.up_bias.values()[c];
    for (std::size_t j = 0; j < hidden; ++j) acc += branch.up_weight.values()[c * hidden + j] * h[j];
    EXPECT_LT(std::abs(s.values()[c] - sigmoid_ref(acc)), 1e-7);
  }
}

TEST(AttentionGate, IndivisibleReductionRejected) {
  EXPECT_THROW(AttentionBranch<double>(10, 4, true), ConfigError);
}

TEST(ApplyAttention, RatioIsOnePlusGate) {
  std::mt19937_64 rng(5);
  const auto f = random_tensor<double>({2, 3, 4, 4}, rng, 0.1, 1.0);
  const auto s = random_tensor<double>({3}, rng, 0.0, 1.0);
  const auto d = apply_attention(f, s);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 16; ++i) {
        const std::size_t k = (n * 3 + c) * 16 + i;
        EXPECT_NEAR(d.values()[k] / f.values()[k], 1.0 + s.values()[c], 1e-14);
      }
  const auto unchanged = apply_attention(f, Tensor<double>({3}));
  for (std::size_t i = 0; i < f.numel(); ++i) EXPECT_EQ(unchanged.values()[i], f.values()[i]);
}

TEST(ApplyAttention, HalfGateIsExactlyOnePointFive) {
  std::mt19937_64 rng(6);
  const auto f = random_tensor<double>({1, 4, 5, 5}, rng);
  const auto d = apply_attention(f, Tensor<double>({4}, 0.5));
  for (std::size_t i = 0; i < f.numel(); ++i) EXPECT_EQ(d.values()[i], 1.5 * f.values()[i]);
}

TEST(LayerVariants, DwEqualsLdwOnNonnegativePreactivations) {
  std::mt19937_64 rng(7);
  const DepthwiseFilterBank<double> bank(random_tensor<double>({6, 3, 3}, rng, 0.0, 1.0));
  const auto pw = random_tensor<double>({5, 6}, rng);
  const auto x = random_tensor<double>({2, 6, 7, 7}, rng, 0.0, 1.0);
  const auto a = dw_forward(x, bank, pw);
  const auto b = ldw_forward(x, bank, pw);
  for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a.values()[i], b.values()[i]);
}

TEST(LayerVariants, DwDiffersFromLdwWithNegativePreactivations) {
  std::mt19937_64 rng(8);
  const DepthwiseFilterBank<double> bank(random_tensor<double>({6, 3, 3}, rng));
  const auto pw = random_tensor<double>({5, 6}, rng);
  const auto x = random_tensor<double>({1, 6, 7, 7}, rng);
  const auto a = dw_forward(x, bank, pw);
  const auto b = ldw_forward(x, bank, pw);
  std::size_t differ = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) differ += a.values()[i] != b.values()[i];
  EXPECT_GT(differ, 0u);
}

TEST(LayerVariants, DwAndLdwHaveEqualParameterCounts) {
  for (std::size_t cin : {1, 8, 64})
    for (std::size_t cout : {1, 16, 64})
      for (std::size_t k : {1, 3, 5}) {
        SeparableConvOptions options;
        options.kernel = k;
        ParameterList<float> dw, ldw;
        SeparableConv<float>(LayerVariant::DW, cin, cout, options).collect(dw, "");
        SeparableConv<float>(LayerVariant::LDW, cin, cout, options).collect(ldw, "");
        EXPECT_EQ(count_values(dw), count_values(ldw));
        EXPECT_EQ(count_values(dw), cin * k * k + cin * cout);
      }
}

TEST(LayerVariants, AldGateStrictlyBetweenOneAndTwo) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    SeparableConvOptions options;
    options.reduction = 4;
    options.descriptor = static_cast<DescriptorKind>(trial % 3);
    const SeparableConv<double> layer(LayerVariant::ALD, 16, 8, options);
    ParameterList<double> params;
    layer.collect(params, "");
    randomize(params, rng, trial < 50 ? 1.0 : 30.0);  // the second half saturates the sigmoid
    const auto s = attention_gate(*layer.attention(), describe_filters(layer.bank(), options.descriptor));
    for (double v : s.values()) {
      ASSERT_GT(1.0 + v, 1.0);
      ASSERT_LT(1.0 + v, 2.0);
    }
  }
}

TEST(LayerVariants, ZeroGateAldIsLdwWithScaledDepthwise) {
  std::mt19937_64 rng(10);
  SeparableConvOptions options;
  options.reduction = 4;
  const SeparableConv<double> layer(LayerVariant::ALD, 8, 6, options);
  Tensor<double> filters = layer.bank().filters;
  for (double& v : filters.mutable_values()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  Tensor<double> pw = layer.pointwise();
  for (double& v : pw.mutable_values()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  const auto x = random_tensor<double>({1, 8, 6, 6}, rng);
  const auto ald = layer.forward(x);
  const auto dw = depthwise_conv2d(x, filters, Tensor<double>{}, 1);
  const auto ref = relu(pointwise_conv(scale(dw, 1.5), pw, Tensor<double>{}));
  for (std::size_t i = 0; i < ald.numel(); ++i) EXPECT_NEAR(ald.values()[i], ref.values()[i], 1e-14);
}

TEST(LayerVariants, GateIndependentOfInput) {
  std::mt19937_64 rng(11);
  SeparableConvOptions options;
  options.reduction = 2;
  const SeparableConv<double> layer(LayerVariant::ALD, 4, 4, options);
  ParameterList<double> params;
  layer.collect(params, "");
  randomize(params, rng, 1.0);
  const auto s1 = attention_gate(*layer.attention(), describe_filters(layer.bank(), options.descriptor));
  layer.forward(random_tensor<double>({1, 4, 5, 5}, rng));
  const auto s2 = attention_gate(*layer.attention(), describe_filters(layer.bank(), options.descriptor));
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(s1.values()[c], s2.values()[c]);
}

// With the determinant descriptor the filters also get gradient through the
// gate; freezing the gate must change their gradient.
TEST(LayerVariants, DeterminantGatePassesGradientToFilters) {
  std::mt19937_64 rng(12);
  SeparableConvOptions options;
  options.reduction = 2;
  const SeparableConv<double> layer(LayerVariant::ALD, 4, 4, options);
  ParameterList<double> params;
  layer.collect(params, "");
  randomize(params, rng, 1.0);
  const auto x = random_tensor<double>({1, 4, 5, 5}, rng);
  const auto target = random_tensor<double>({1, 4, 5, 5}, rng);
  Tensor<double> filters = layer.bank().filters;
  filters.set_requires_grad();

  {
    Tape<double> tape;
    tape.backward(l1_loss(layer.forward(x), target));
  }
  const std::vector<double> full(filters.grad().begin(), filters.grad().end());
  filters.zero_grad();

  const auto frozen_gate =
      attention_gate(*layer.attention(), describe_filters(DepthwiseFilterBank<double>(filters.clone()),
                                                          DescriptorKind::Determinant));
  {
    Tape<double> tape;
    const auto f = apply_attention(depthwise_conv2d(x, filters, Tensor<double>{}, 1), frozen_gate);
    tape.backward(l1_loss(relu(pointwise_conv(f, layer.pointwise(), Tensor<double>{})), target));
  }
  double diff = 0.0;
  for (std::size_t i = 0; i < full.size(); ++i) diff = std::max(diff, std::abs(full[i] - filters.grad()[i]));
  EXPECT_GT(diff, 1e-8);
}

}  // namespace
}  // namespace aldsr
