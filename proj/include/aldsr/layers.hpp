#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "aldsr/tensor.hpp"

namespace aldsr {

// How a depthwise filter is summarized into one scalar for the attention gate.
enum class DescriptorKind { Determinant, Average, Max };

// DW:  depthwise -> ReLU -> pointwise -> ReLU
// LDW: depthwise -> pointwise -> ReLU
// ALD: attention-aware depthwise -> pointwise -> ReLU
enum class LayerVariant { DW, LDW, ALD };

std::string_view to_string(DescriptorKind kind);
std::string_view to_string(LayerVariant variant);
DescriptorKind parse_descriptor(std::string_view text);
LayerVariant parse_layer_variant(std::string_view text);

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParameterList = std::vector<NamedParameter<T>>;

template <typename T>
std::size_t count_values(const ParameterList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

// One k x k filter per channel, stored as [C,k,k]. Bias-free.
template <typename T>
struct DepthwiseFilterBank {
  Tensor<T> filters;

  DepthwiseFilterBank(std::size_t channels, std::size_t kernel = 3);
  explicit DepthwiseFilterBank(Tensor<T> filters);

  std::size_t channels() const { return filters.dim(0); }
  std::size_t kernel() const { return filters.dim(1); }
};

// Two-layer bottleneck MLP mapping filter descriptors z [C] to gates s [C]:
//   s = sigmoid(up * relu(down * z + down_bias) + up_bias)
// The hidden width is C / reduction; reduction must divide C.
template <typename T>
struct AttentionBranch {
  Tensor<T> down_weight;  // [C/r, C]
  Tensor<T> down_bias;    // [C/r], undefined when biases are disabled
  Tensor<T> up_weight;    // [C, C/r]
  Tensor<T> up_bias;      // [C], undefined when biases are disabled
  std::size_t reduction;

  AttentionBranch(std::size_t channels, std::size_t reduction, bool bias = true);

  std::size_t channels() const { return up_weight.dim(0); }
  std::size_t hidden() const { return down_weight.dim(0); }
  bool bias_enabled() const { return down_bias.defined(); }

  void collect(ParameterList<T>& out, const std::string& prefix) const;
};

// z_c = det(W_c) | mean(W_c) | max(W_c) for every filter of the bank.
template <typename T>
Tensor<T> describe_filters(const DepthwiseFilterBank<T>& bank, DescriptorKind kind);

// s is clamped to [eps, 1 - 2 eps] of T, so 1 + s never rounds to 1 or 2.
template <typename T>
Tensor<T> attention_gate(const AttentionBranch<T>& branch, const Tensor<T>& z);

// D_c = (1 + s_c) * f_c for f [N,C,H,W] and s [C].
template <typename T>
Tensor<T> apply_attention(const Tensor<T>& features, const Tensor<T>& gate);

template <typename T>
Tensor<T> ald_forward(const Tensor<T>& x, const DepthwiseFilterBank<T>& bank,
                      const Tensor<T>& pointwise, const AttentionBranch<T>& branch,
                      DescriptorKind kind);
template <typename T>
Tensor<T> ldw_forward(const Tensor<T>& x, const DepthwiseFilterBank<T>& bank,
                      const Tensor<T>& pointwise);
template <typename T>
Tensor<T> dw_forward(const Tensor<T>& x, const DepthwiseFilterBank<T>& bank,
                     const Tensor<T>& pointwise);

struct SeparableConvOptions {
  std::size_t kernel = 3;
  DescriptorKind descriptor = DescriptorKind::Determinant;
  std::size_t reduction = 16;
  bool attention_bias = true;
};

// Depthwise-separable convolution in one of the three variants. The attention
// branch exists only for LayerVariant::ALD.
template <typename T>
class SeparableConv {
 public:
  SeparableConv(LayerVariant variant, std::size_t in_channels, std::size_t out_channels,
                const SeparableConvOptions& options = {});

  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(ParameterList<T>& out, const std::string& prefix) const;

  LayerVariant variant() const { return variant_; }
  DescriptorKind descriptor() const { return descriptor_; }
  const DepthwiseFilterBank<T>& bank() const { return bank_; }
  const Tensor<T>& pointwise() const { return pointwise_; }
  const std::optional<AttentionBranch<T>>& attention() const { return attention_; }

 private:
  LayerVariant variant_;
  DescriptorKind descriptor_;
  DepthwiseFilterBank<T> bank_;
  Tensor<T> pointwise_;  // [Cout, Cin]
  std::optional<AttentionBranch<T>> attention_;
};

// Plain k x k convolution with same padding; bias-free unless requested.
template <typename T>
struct Conv2d {
  Tensor<T> weight;  // [Cout, Cin, k, k]
  Tensor<T> bias;

  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel = 3,
         bool with_bias = false);

  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(ParameterList<T>& out, const std::string& prefix) const;
};

}  // namespace aldsr
