#include "aldsr/models.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "aldsr/ops.hpp"

namespace aldsr {

void ALDBSpec::validate() const {
  if (width == 0) throw ConfigError("ALDB: width must be positive");
  if (n_ald_convs == 0 || n_ald_convs % 2 != 0) {
    throw ConfigError("ALDB: number of ALD convolutions must be even and positive, got " +
                      std::to_string(n_ald_convs));
  }
  if (reduction == 0 || width % reduction != 0) {
    throw ConfigError("ALDB: reduction ratio " + std::to_string(reduction) +
                      " does not divide width " + std::to_string(width));
  }
}

ALDBSpec ALDSRSpec::block() const {
  return ALDBSpec{width, n_ald_convs, descriptor, reduction, attention_bias};
}

void ALDSRSpec::validate() const {
  if (scale < 2 || scale > 4) {
    throw ConfigError("ALDSR: scale must be 2, 3 or 4, got " + std::to_string(scale));
  }
  block().validate();
}

std::string_view to_string(RDBVariant variant) {
  switch (variant) {
    case RDBVariant::RDB:
      return "rdb";
    case RDBVariant::DW_RDB:
      return "dw-rdb";
    case RDBVariant::LDW_RDB:
      return "ldw-rdb";
    case RDBVariant::ALD_RDB:
      return "ald-rdb";
  }
  return "?";
}

void RDBFamilySpec::validate() const {
  if (in_width == 0 || growth == 0 || n_layers == 0) {
    throw ConfigError("RDB: widths and layer count must be positive");
  }
  if (variant == RDBVariant::ALD_RDB) {
    for (std::size_t i = 0; i < n_layers; ++i) {
      const std::size_t cin = in_width + i * growth;
      if (reduction == 0 || cin % reduction != 0) {
        throw ConfigError("ALD-RDB: reduction ratio " + std::to_string(reduction) +
                          " does not divide layer width " + std::to_string(cin));
      }
    }
  }
}

std::string_view to_string(InitScheme scheme) {
  return scheme == InitScheme::FanInUniform ? "fan-in" : "zero-gate";
}

InitScheme parse_init_scheme(std::string_view text) {
  if (text == "fan-in" || text == "fanin" || text == "uniform") return InitScheme::FanInUniform;
  if (text == "zero-gate") return InitScheme::ZeroGate;
  throw ConfigError("unknown init scheme '" + std::string(text) +
                    "' (expected fan-in or zero-gate)");
}

template <typename T>
ALDB<T>::ALDB(const ALDBSpec& spec)
    : spec_(spec),
      state_weight_(Shape{spec.width, spec.width}),
      fusion_weight_(Shape{spec.width, 2 * spec.width}) {
  spec_.validate();
  const SeparableConvOptions options{3, spec.descriptor, spec.reduction, spec.attention_bias};
  convs_.reserve(spec.n_ald_convs);
  for (std::size_t i = 0; i < spec.n_ald_convs; ++i) {
    convs_.emplace_back(LayerVariant::ALD, spec.width, spec.width, options);
  }
}

template <typename T>
typename ALDB<T>::Output ALDB<T>::forward(const Tensor<T>& x, const Tensor<T>& prev_state) const {
  if (x.rank() != 4 || x.dim(1) != spec_.width || prev_state.shape() != x.shape()) {
    throw DimensionError("ALDB: expected input and state [N," + std::to_string(spec_.width) +
                         ",H,W], got " + shape_str(x.shape()) + " and " +
                         shape_str(prev_state.shape()));
  }
  Tensor<T> h = x;
  for (std::size_t i = 0; i < convs_.size(); i += 2) {
    h = add(convs_[i + 1].forward(convs_[i].forward(h)), h);
  }
  const Tensor<T> carried = pointwise_conv(prev_state, state_weight_, Tensor<T>{});
  const Tensor<T> fused = pointwise_conv(concat(carried, h, 1), fusion_weight_, Tensor<T>{});
  return {fused, fused};
}

template <typename T>
void ALDB<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    convs_[i].collect(out, prefix + "convs." + std::to_string(i) + ".");
  }
  out.push_back({prefix + "state.weight", state_weight_});
  out.push_back({prefix + "fusion.weight", fusion_weight_});
}

template <typename T>
ALDSR<T>::ALDSR(const ALDSRSpec& spec)
    : spec_(spec), shallow_(3, spec.width), reconstruction_(spec.width, 3) {
  spec_.validate();
  blocks_.reserve(spec.n_blocks);
  for (std::size_t i = 0; i < spec.n_blocks; ++i) blocks_.emplace_back(spec.block());
  if (spec.scale == 4) {
    for (int stage = 0; stage < 2; ++stage) {
      upsample_.emplace_back(Conv2d<T>(spec.width, spec.width * 4), 2);
    }
  } else {
    upsample_.emplace_back(Conv2d<T>(spec.width, spec.width * spec.scale * spec.scale),
                           spec.scale);
  }
}

template <typename T>
Tensor<T> ALDSR<T>::forward(const Tensor<T>& lr) const {
  if (lr.rank() != 4 || lr.dim(1) != 3 || lr.dim(2) < 1 || lr.dim(3) < 1) {
    throw DimensionError("ALDSR: expected [N,3,h,w] with h,w >= 1, got " + shape_str(lr.shape()));
  }
  const Tensor<T> shallow = shallow_.forward(lr);
  Tensor<T> h = shallow;
  Tensor<T> state = shallow;
  for (const auto& block : blocks_) {
    auto result = block.forward(h, state);
    h = std::move(result.out);
    state = std::move(result.state);
  }
  if (spec_.global_residual) h = add(h, shallow);
  for (const auto& [conv, factor] : upsample_) h = pixel_shuffle(conv.forward(h), factor);
  return reconstruction_.forward(h);
}

template <typename T>
void ALDSR<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
  shallow_.collect(out, prefix + "shallow.");
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect(out, prefix + "blocks." + std::to_string(i) + ".");
  }
  for (std::size_t i = 0; i < upsample_.size(); ++i) {
    upsample_[i].first.collect(out, prefix + "upsample." + std::to_string(i) + ".");
  }
  reconstruction_.collect(out, prefix + "reconstruction.");
}

template <typename T>
ParameterList<T> ALDSR<T>::parameters() const {
  ParameterList<T> out;
  collect(out);
  return out;
}

template <typename T>
RDB<T>::RDB(const RDBFamilySpec& spec) : spec_(spec) {
  spec_.validate();
  const SeparableConvOptions options{3, spec.descriptor, spec.reduction, spec.attention_bias};
  for (std::size_t i = 0; i < spec.n_layers; ++i) {
    const std::size_t cin = spec.in_width + i * spec.growth;
    switch (spec.variant) {
      case RDBVariant::RDB:
        dense_convs_.emplace_back(cin, spec.growth);
        break;
      case RDBVariant::DW_RDB:
        dense_separable_.emplace_back(LayerVariant::DW, cin, spec.growth, options);
        break;
      case RDBVariant::LDW_RDB:
        dense_separable_.emplace_back(LayerVariant::LDW, cin, spec.growth, options);
        break;
      case RDBVariant::ALD_RDB:
        dense_separable_.emplace_back(LayerVariant::ALD, cin, spec.growth, options);
        break;
    }
  }
  fusion_weight_ = Tensor<T>(Shape{spec.in_width, spec.in_width + spec.n_layers * spec.growth});
}

template <typename T>
Tensor<T> RDB<T>::forward(const Tensor<T>& x) const {
  if (x.rank() != 4 || x.dim(1) != spec_.in_width) {
    throw DimensionError("RDB: expected [N," + std::to_string(spec_.in_width) + ",H,W], got " +
                         shape_str(x.shape()));
  }
  Tensor<T> features = x;
  for (std::size_t i = 0; i < spec_.n_layers; ++i) {
    const Tensor<T> grown = spec_.variant == RDBVariant::RDB
                                ? relu(dense_convs_[i].forward(features))
                                : dense_separable_[i].forward(features);
    features = concat(features, grown, 1);
  }
  return add(pointwise_conv(features, fusion_weight_, Tensor<T>{}), x);
}

template <typename T>
void RDB<T>::collect(ParameterList<T>& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < spec_.n_layers; ++i) {
    const std::string layer = prefix + "layers." + std::to_string(i) + ".";
    if (spec_.variant == RDBVariant::RDB) {
      dense_convs_[i].collect(out, layer);
    } else {
      dense_separable_[i].collect(out, layer);
    }
  }
  out.push_back({prefix + "fusion.weight", fusion_weight_});
}

template <typename T>
AnyModel<T> build_model(const ModelSpec& spec) {
  AnyModel<T> model = std::visit(
      [](const auto& arch) -> AnyModel<T> {
        using Arch = std::decay_t<decltype(arch)>;
        if constexpr (std::is_same_v<Arch, ALDSRSpec>) {
          return ALDSR<T>(arch);
        } else if constexpr (std::is_same_v<Arch, ALDBSpec>) {
          return ALDB<T>(arch);
        } else {
          return RDB<T>(arch);
        }
      },
      spec.arch);
  init_weights(parameters_of(model), spec.init, spec.seed);
  return model;
}

template <typename T>
ParameterList<T> parameters_of(const AnyModel<T>& model) {
  ParameterList<T> out;
  std::visit([&](const auto& m) { m.collect(out, ""); }, model);
  return out;
}

std::size_t fan_in_of(const Shape& shape) {
  switch (shape.size()) {
    case 4:
      return shape[1] * shape[2] * shape[3];
    case 3:
      return shape[1] * shape[2];
    case 2:
      return shape[1];
    default:
      throw ContractError("fan_in_of: no fan-in for weight shape " + shape_str(shape));
  }
}

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::size_t parameter_fan_in(const std::string& name, const Shape& shape,
                             const std::map<std::string, Shape>& shapes) {
  if (ends_with(name, "bias")) {
    const std::string sibling = name.substr(0, name.size() - 4) + "weight";
    const auto it = shapes.find(sibling);
    if (it == shapes.end()) throw ContractError("init: bias '" + name + "' has no weight");
    return fan_in_of(it->second);
  }
  return fan_in_of(shape);
}

}  // namespace

template <typename T>
void init_weights(const ParameterList<T>& params, InitScheme scheme, std::uint64_t seed) {
  std::map<std::string, Shape> shapes;
  for (const auto& p : params) shapes[p.name] = p.tensor.shape();

  std::mt19937_64 rng(seed);
  for (const auto& p : params) {
    Tensor<T> tensor = p.tensor;
    auto values = tensor.mutable_values();
    const double bound =
        1.0 / std::sqrt(static_cast<double>(parameter_fan_in(p.name, tensor.shape(), shapes)));
    for (T& v : values) {
      // 53 random bits mapped to [0,1); avoids implementation-defined distributions.
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      v = static_cast<T>((2.0 * u - 1.0) * bound);
    }
    if (scheme == InitScheme::ZeroGate && p.name.find("attention.") != std::string::npos) {
      std::fill(values.begin(), values.end(), T{0});
    }
  }
}

namespace {

// "blocks.3.convs.1.depthwise.weight" -> "blocks.3"; "shallow.weight" -> "shallow".
std::string component_of(const std::string& name) {
  const auto first = name.find('.');
  if (first == std::string::npos) return name;
  const auto second = name.find('.', first + 1);
  const std::string index = name.substr(first + 1, second - first - 1);
  const bool numeric = !index.empty() && std::all_of(index.begin(), index.end(), [](char c) {
    return std::isdigit(static_cast<unsigned char>(c)) != 0;
  });
  return numeric ? name.substr(0, second) : name.substr(0, first);
}

}  // namespace

ParameterCount count_parameters(const ModelSpec& spec) {
  const AnyModel<float> model = std::visit(
      [](const auto& arch) -> AnyModel<float> {
        using Arch = std::decay_t<decltype(arch)>;
        if constexpr (std::is_same_v<Arch, ALDSRSpec>) {
          return ALDSR<float>(arch);
        } else if constexpr (std::is_same_v<Arch, ALDBSpec>) {
          return ALDB<float>(arch);
        } else {
          return RDB<float>(arch);
        }
      },
      spec.arch);

  ParameterCount count;
  for (const auto& p : parameters_of(model)) {
    const std::size_t n = p.tensor.numel();
    count.total += n;
    if (p.name.find("attention.") != std::string::npos) count.attention += n;
    const std::string component = component_of(p.name);
    if (count.components.empty() || count.components.back().first != component) {
      count.components.emplace_back(component, 0);
    }
    count.components.back().second += n;
  }
  return count;
}

std::vector<ConventionCount> enumerate_attention_conventions(
    const RDBFamilySpec& base, const std::vector<std::size_t>& reductions) {
  std::vector<ConventionCount> out;
  for (const std::size_t r : reductions) {
    for (const bool bias : {true, false}) {
      RDBFamilySpec arch = base;
      arch.variant = RDBVariant::ALD_RDB;
      arch.reduction = r;
      arch.attention_bias = bias;
      ModelSpec spec;
      spec.arch = arch;
      out.push_back({r, bias, count_parameters(spec).total});
    }
  }
  return out;
}

std::string describe_arch(const ModelSpec& spec) {
  std::ostringstream os;
  std::visit(
      [&](const auto& arch) {
        using Arch = std::decay_t<decltype(arch)>;
        if constexpr (std::is_same_v<Arch, ALDSRSpec>) {
          os << "ALDSR(B=" << arch.n_blocks << ", C=" << arch.width << ", x" << arch.scale
             << ", convs/block=" << arch.n_ald_convs << ", r=" << arch.reduction
             << ", descriptor=" << to_string(arch.descriptor)
             << ", attention bias=" << (arch.attention_bias ? "on" : "off") << ")";
        } else if constexpr (std::is_same_v<Arch, ALDBSpec>) {
          os << "ALDB(C=" << arch.width << ", convs=" << arch.n_ald_convs
             << ", r=" << arch.reduction << ", descriptor=" << to_string(arch.descriptor)
             << ", attention bias=" << (arch.attention_bias ? "on" : "off") << ")";
        } else {
          os << to_string(arch.variant) << "(G0=" << arch.in_width << ", G=" << arch.growth
             << ", layers=" << arch.n_layers;
          if (arch.variant == RDBVariant::ALD_RDB) {
            os << ", r=" << arch.reduction
               << ", attention bias=" << (arch.attention_bias ? "on" : "off");
          }
          os << ")";
        }
      },
      spec.arch);
  return os.str();
}

#define ALDSR_INSTANTIATE_MODELS(T)                                             \
  template class ALDB<T>;                                                       \
  template class ALDSR<T>;                                                      \
  template class RDB<T>;                                                        \
  template AnyModel<T> build_model<T>(const ModelSpec&);                        \
  template ParameterList<T> parameters_of<T>(const AnyModel<T>&);               \
  template void init_weights<T>(const ParameterList<T>&, InitScheme, std::uint64_t);

ALDSR_INSTANTIATE_MODELS(float)
ALDSR_INSTANTIATE_MODELS(double)

}  // namespace aldsr
