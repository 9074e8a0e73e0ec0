#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "aldsr/layers.hpp"
#include "aldsr/tensor.hpp"

namespace aldsr {

struct ALDBSpec {
  std::size_t width = 64;
  // Local residuals wrap consecutive pairs, so this must be even.
  std::size_t n_ald_convs = 4;
  DescriptorKind descriptor = DescriptorKind::Determinant;
  std::size_t reduction = 16;
  bool attention_bias = true;

  void validate() const;
};

struct ALDSRSpec {
  std::size_t n_blocks = 10;
  std::size_t width = 64;
  std::size_t scale = 4;
  std::size_t n_ald_convs = 4;
  DescriptorKind descriptor = DescriptorKind::Determinant;
  std::size_t reduction = 16;
  bool attention_bias = true;
  // Adds the shallow feature to the deep-feature output before upsampling.
  bool global_residual = true;

  ALDBSpec block() const;
  void validate() const;
};

enum class RDBVariant { RDB, DW_RDB, LDW_RDB, ALD_RDB };

std::string_view to_string(RDBVariant variant);

// Residual dense block: n_layers dense layers of growth G over an input of
// width G0, a 1x1 local fusion back to G0 and a local residual. Bias-free.
struct RDBFamilySpec {
  RDBVariant variant = RDBVariant::RDB;
  std::size_t in_width = 64;  // G0
  std::size_t growth = 64;    // G
  std::size_t n_layers = 8;
  DescriptorKind descriptor = DescriptorKind::Determinant;
  std::size_t reduction = 16;
  bool attention_bias = true;

  void validate() const;
};

enum class InitScheme { FanInUniform, ZeroGate };

std::string_view to_string(InitScheme scheme);
InitScheme parse_init_scheme(std::string_view text);

struct ModelSpec {
  std::variant<ALDSRSpec, ALDBSpec, RDBFamilySpec> arch = ALDSRSpec{};
  InitScheme init = InitScheme::FanInUniform;
  std::uint64_t seed = 1;
};

template <typename T>
class ALDB {
 public:
  explicit ALDB(const ALDBSpec& spec);

  struct Output {
    Tensor<T> out;
    Tensor<T> state;
  };

  // The preceding block's state goes through a 1x1 conv, is concatenated with
  // this block's residual chain output and fused back to C channels by a 1x1
  // bottleneck. The fused map is both the output and the next block's state.
  Output forward(const Tensor<T>& x, const Tensor<T>& prev_state) const;
  void collect(ParameterList<T>& out, const std::string& prefix) const;

  const ALDBSpec& spec() const { return spec_; }
  const std::vector<SeparableConv<T>>& convs() const { return convs_; }

 private:
  ALDBSpec spec_;
  std::vector<SeparableConv<T>> convs_;
  Tensor<T> state_weight_;   // [C, C]
  Tensor<T> fusion_weight_;  // [C, 2C]
};

template <typename T>
class ALDSR {
 public:
  explicit ALDSR(const ALDSRSpec& spec);

  // [N,3,h,w] in [0,1] -> [N,3,s*h,s*w], unclamped.
  Tensor<T> forward(const Tensor<T>& lr) const;
  void collect(ParameterList<T>& out, const std::string& prefix = "") const;
  ParameterList<T> parameters() const;

  const ALDSRSpec& spec() const { return spec_; }
  void set_global_residual(bool on) { spec_.global_residual = on; }

 private:
  ALDSRSpec spec_;
  Conv2d<T> shallow_;
  std::vector<ALDB<T>> blocks_;
  // Each stage is a 3x3 conv to C*f*f channels followed by pixel_shuffle(f).
  std::vector<std::pair<Conv2d<T>, std::size_t>> upsample_;
  Conv2d<T> reconstruction_;
};

template <typename T>
class RDB {
 public:
  explicit RDB(const RDBFamilySpec& spec);

  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(ParameterList<T>& out, const std::string& prefix = "") const;

  const RDBFamilySpec& spec() const { return spec_; }

 private:
  RDBFamilySpec spec_;
  std::vector<Conv2d<T>> dense_convs_;
  std::vector<SeparableConv<T>> dense_separable_;
  Tensor<T> fusion_weight_;  // [G0, G0 + n*G]
};

template <typename T>
using AnyModel = std::variant<ALDSR<T>, ALDB<T>, RDB<T>>;

template <typename T>
AnyModel<T> build_model(const ModelSpec& spec);

template <typename T>
ParameterList<T> parameters_of(const AnyModel<T>& model);

// Deterministic in the seed. FanInUniform draws every tensor from
// U(-1/sqrt(fan_in), 1/sqrt(fan_in)); ZeroGate additionally zeroes the
// attention MLPs so every gate starts at sigmoid(0) = 0.5.
template <typename T>
void init_weights(const ParameterList<T>& params, InitScheme scheme, std::uint64_t seed);

// Fan-in implied by a parameter's shape: Cin*k*k for convs, k*k for depthwise
// filters, In for [Out,In] matrices. Biases take their sibling weight's fan-in.
std::size_t fan_in_of(const Shape& weight_shape);

struct ParameterCount {
  std::size_t total = 0;
  std::size_t attention = 0;
  std::vector<std::pair<std::string, std::size_t>> components;
};

// Counts are read off a constructed model, never from a closed-form formula.
ParameterCount count_parameters(const ModelSpec& spec);

// ALD-RDB totals for every reduction ratio in `reductions` with the attention
// biases on and off; every other field comes from `base`.
struct ConventionCount {
  std::size_t reduction = 0;
  bool attention_bias = false;
  std::size_t total = 0;
};
std::vector<ConventionCount> enumerate_attention_conventions(
    const RDBFamilySpec& base, const std::vector<std::size_t>& reductions);

std::string describe_arch(const ModelSpec& spec);

}  // namespace aldsr
