#include "aldsr/layers.hpp"

#include <limits>

#include "aldsr/ops.hpp"

namespace aldsr {

std::string_view to_string(DescriptorKind kind) {
  switch (kind) {
    case DescriptorKind::Determinant:
      return "determinant";
    case DescriptorKind::Average:
      return "average";
    case DescriptorKind::Max:
      return "max";
  }
  return "?";
}

std::string_view to_string(LayerVariant variant) {
  switch (variant) {
    case LayerVariant::DW:
      return "dw";
    case LayerVariant::LDW:
      return "ldw";
    case LayerVariant::ALD:
      return "ald";
  }
  return "?";
}

DescriptorKind parse_descriptor(std::string_view text) {
  if (text == "determinant" || text == "det") return DescriptorKind::Determinant;
  if (text == "average" || text == "avg" || text == "mean") return DescriptorKind::Average;
  if (text == "max") return DescriptorKind::Max;
  throw ConfigError("unknown descriptor '" + std::string(text) +
                    "' (expected determinant, average or max)");
}

LayerVariant parse_layer_variant(std::string_view text) {
  if (text == "dw") return LayerVariant::DW;
  if (text == "ldw") return LayerVariant::LDW;
  if (text == "ald") return LayerVariant::ALD;
  throw ConfigError("unknown layer variant '" + std::string(text) + "'");
}

template <typename T>
DepthwiseFilterBank<T>::DepthwiseFilterBank(std::size_t channels, std::size_t kernel)
    : DepthwiseFilterBank(Tensor<T>(Shape{channels, kernel, kernel})) {}

template <typename T>
DepthwiseFilterBank<T>::DepthwiseFilterBank(Tensor<T> f) : filters(std::move(f)) {
  if (filters.rank() != 3 || filters.dim(1) != filters.dim(2) || filters.dim(0) == 0) {
    throw DimensionError("depthwise filter bank must be [C,k,k] with C >= 1, got " +
                         shape_str(filters.shape()));
  }
}

template <typename T>
AttentionBranch<T>::AttentionBranch(std::size_t channels, std::size_t r, bool bias)
    : reduction(r) {
  if (r == 0 || channels == 0 || channels % r != 0) {
    throw ConfigError("attention branch: reduction ratio " + std::to_string(r) +
                      " does not divide " + std::to_string(channels) + " channels");
  }
  const std::size_t hidden = channels / r;
  down_weight = Tensor<T>(Shape{hidden, channels});
  up_weight = Tensor<T>(Shape{channels, hidden});
  if (bias) {
    down_bias = Tensor<T>(Shape{hidden});
    up_bias = Tensor<T>(Shape{channels});
  }
}

template <typename T>
void AttentionBranch<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + "down.weight", down_weight});
  if (down_bias.defined()) out.push_back({prefix + "down.bias", down_bias});
  out.push_back({prefix + "up.weight", up_weight});
  if (up_bias.defined()) out.push_back({prefix + "up.bias", up_bias});
}

template <typename T>
Tensor<T> describe_filters(const DepthwiseFilterBank<T>& bank, DescriptorKind kind) {
  switch (kind) {
    case DescriptorKind::Determinant:
      if (bank.kernel() != 3) {
        throw UnsupportedKernelError("determinant descriptor needs 3x3 filters, got " +
                                     std::to_string(bank.kernel()) + "x" +
                                     std::to_string(bank.kernel()));
      }
      return det3(bank.filters);
    case DescriptorKind::Average:
      return mean_trailing(bank.filters, 2);
    case DescriptorKind::Max:
      return max_trailing(bank.filters, 2);
  }
  throw ContractError("describe_filters: invalid descriptor");
}

template <typename T>
Tensor<T> attention_gate(const AttentionBranch<T>& branch, const Tensor<T>& z) {
  if (z.rank() != 1 || z.dim(0) != branch.channels()) {
    throw DimensionError("attention_gate: descriptor " + shape_str(z.shape()) + " for " +
                         std::to_string(branch.channels()) + " channels");
  }
  const Tensor<T> hidden = relu(linear(z, branch.down_weight, branch.down_bias));
  // A saturated sigmoid rounds to 0 or 1. Keep s where 1 + s is still strictly
  // inside (1, 2) in T.
  constexpr T eps = std::numeric_limits<T>::epsilon();
  return clamp(sigmoid(linear(hidden, branch.up_weight, branch.up_bias)), eps, T{1} - 2 * eps);
}

template <typename T>
Tensor<T> apply_attention(const Tensor<T>& features, const Tensor<T>& gate) {
  if (features.rank() != 4 || gate.rank() != 1 || features.dim(1) != gate.dim(0)) {
    throw DimensionError("apply_attention: gate " + shape_str(gate.shape()) + " for features " +
                         shape_str(features.shape()));
  }
  return mul(features, add_scalar(gate, T{1}));
}

namespace {

template <typename T>
Tensor<T> depthwise(const Tensor<T>& x, const DepthwiseFilterBank<T>& bank) {
  return depthwise_conv2d(x, bank.filters, Tensor<T>{}, (bank.kernel() - 1) / 2);
}

}  // namespace

template <typename T>
Tensor<T> ald_forward(const Tensor<T>& x, const DepthwiseFilterBank<T>& bank,
                      const Tensor<T>& pointwise, const AttentionBranch<T>& branch,
                      DescriptorKind kind) {
  const Tensor<T> gate = attention_gate(branch, describe_filters(bank, kind));
  return relu(pointwise_conv(apply_attention(depthwise(x, bank), gate), pointwise, Tensor<T>{}));
}

template <typename T>
Tensor<T> ldw_forward(const Tensor<T>& x, const DepthwiseFilterBank<T>& bank,
                      const Tensor<T>& pointwise) {
  return relu(pointwise_conv(depthwise(x, bank), pointwise, Tensor<T>{}));
}

template <typename T>
Tensor<T> dw_forward(const Tensor<T>& x, const DepthwiseFilterBank<T>& bank,
                     const Tensor<T>& pointwise) {
  return relu(pointwise_conv(relu(depthwise(x, bank)), pointwise, Tensor<T>{}));
}

template <typename T>
SeparableConv<T>::SeparableConv(LayerVariant variant, std::size_t in_channels,
                                std::size_t out_channels, const SeparableConvOptions& options)
    : variant_(variant),
      descriptor_(options.descriptor),
      bank_(in_channels, options.kernel),
      pointwise_(Shape{out_channels, in_channels}) {
  if (options.kernel % 2 == 0) {
    throw ConfigError("separable conv: kernel size must be odd, got " +
                      std::to_string(options.kernel));
  }
  if (variant == LayerVariant::ALD) {
    if (options.descriptor == DescriptorKind::Determinant && options.kernel != 3) {
      throw UnsupportedKernelError("determinant descriptor needs 3x3 filters");
    }
    attention_.emplace(in_channels, options.reduction, options.attention_bias);
  }
}

template <typename T>
Tensor<T> SeparableConv<T>::forward(const Tensor<T>& x) const {
  switch (variant_) {
    case LayerVariant::DW:
      return dw_forward(x, bank_, pointwise_);
    case LayerVariant::LDW:
      return ldw_forward(x, bank_, pointwise_);
    case LayerVariant::ALD:
      return ald_forward(x, bank_, pointwise_, *attention_, descriptor_);
  }
  throw ContractError("separable conv: invalid variant");
}

template <typename T>
void SeparableConv<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + "depthwise.weight", bank_.filters});
  out.push_back({prefix + "pointwise.weight", pointwise_});
  if (attention_) attention_->collect(out, prefix + "attention.");
}

template <typename T>
Conv2d<T>::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                  bool with_bias)
    : weight(Shape{out_channels, in_channels, kernel, kernel}) {
  if (kernel % 2 == 0) {
    throw ConfigError("conv2d: kernel size must be odd, got " + std::to_string(kernel));
  }
  if (with_bias) bias = Tensor<T>(Shape{out_channels});
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) const {
  return conv2d(x, weight, bias, (weight.dim(2) - 1) / 2, 1);
}

template <typename T>
void Conv2d<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + "weight", weight});
  if (bias.defined()) out.push_back({prefix + "bias", bias});
}

#define ALDSR_INSTANTIATE_LAYERS(T)                                                            \
  template struct DepthwiseFilterBank<T>;                                                      \
  template struct AttentionBranch<T>;                                                          \
  template class SeparableConv<T>;                                                             \
  template struct Conv2d<T>;                                                                   \
  template Tensor<T> describe_filters(const DepthwiseFilterBank<T>&, DescriptorKind);          \
  template Tensor<T> attention_gate(const AttentionBranch<T>&, const Tensor<T>&);              \
  template Tensor<T> apply_attention(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> ald_forward(const Tensor<T>&, const DepthwiseFilterBank<T>&,              \
                                 const Tensor<T>&, const AttentionBranch<T>&, DescriptorKind); \
  template Tensor<T> ldw_forward(const Tensor<T>&, const DepthwiseFilterBank<T>&,              \
                                 const Tensor<T>&);                                            \
  template Tensor<T> dw_forward(const Tensor<T>&, const DepthwiseFilterBank<T>&, const Tensor<T>&);

ALDSR_INSTANTIATE_LAYERS(float)
ALDSR_INSTANTIATE_LAYERS(double)

}  // namespace aldsr
