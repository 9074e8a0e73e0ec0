#include "aldsr/gradcheck_suite.hpp"

#include <cmath>
#include <random>

#include "aldsr/errors.hpp"
#include "aldsr/layers.hpp"
#include "aldsr/models.hpp"
#include "aldsr/ops.hpp"

namespace aldsr {
namespace {

using D = Tensor<double>;

D random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  D t(std::move(shape));
  for (double& v : t.mutable_values()) v = dist(rng);
  return t;
}

void randomize(const ParameterList<double>& params, std::mt19937_64& rng, double amplitude) {
  std::uniform_real_distribution<double> dist(-amplitude, amplitude);
  for (const auto& p : params) {
    D t = p.tensor;
    for (double& v : t.mutable_values()) v = dist(rng);
  }
}

std::vector<D> with_params(std::vector<D> inputs, const ParameterList<double>& params) {
  for (const auto& p : params) inputs.push_back(p.tensor);
  return inputs;
}

GradCheckOptions make_options(double tolerance, std::size_t coords = 0, std::uint64_t seed = 0x5eed) {
  GradCheckOptions options;
  options.tolerance = tolerance;
  options.max_coords_per_input = coords;
  options.seed = seed;
  return options;
}

// Uniform +-sqrt(3 / fan_in), variance 1 / fan_in. Keeps the network's
// activations O(1); at the narrower training init many gradients shrink below
// what central differences at h = 1e-5 resolve in f64.
void unit_variance_uniform(const ParameterList<double>& params, std::uint64_t seed) {
  init_weights(params, InitScheme::FanInUniform, seed);
  const double gain = std::sqrt(3.0);
  for (const auto& p : params) {
    D t = p.tensor;
    for (double& v : t.mutable_values()) v *= gain;
  }
}

AttentionBranch<double> random_branch(std::size_t channels, std::size_t r, bool bias,
                                      std::mt19937_64& rng) {
  AttentionBranch<double> branch(channels, r, bias);
  ParameterList<double> params;
  branch.collect(params, "");
  randomize(params, rng, 1.0);
  return branch;
}

}  // namespace

std::vector<GradCheckCase> gradcheck_suite(const std::string& suite, std::uint64_t seed,
                                           double tolerance) {
  if (suite != "all" && suite != "ops" && suite != "layers" && suite != "models") {
    throw ConfigError("unknown gradcheck suite '" + suite + "' (expected all, ops, layers or models)");
  }
  std::vector<GradCheckCase> cases;
  const auto add = [&](std::string name, std::string group, std::function<GradCheckResult()> run) {
    if (suite == "all" || suite == group) cases.push_back({std::move(name), std::move(group), std::move(run)});
  };

  add("conv2d", "ops", [seed, tolerance] {
    std::mt19937_64 rng(seed);
    const D x = random_tensor({2, 3, 6, 5}, rng);
    const D w = random_tensor({12, 3, 3, 3}, rng);
    const D b = random_tensor({12}, rng);
    return grad_check([](const std::vector<D>& in) { return conv2d(in[0], in[1], in[2], 1); },
                      {x, w, b}, make_options(tolerance));
  });
  add("conv2d_few_outputs", "ops", [seed, tolerance] {
    std::mt19937_64 rng(seed + 1);
    const D x = random_tensor({2, 4, 5, 6}, rng);
    const D w = random_tensor({3, 4, 3, 3}, rng);
    return grad_check([](const std::vector<D>& in) { return conv2d(in[0], in[1], D{}, 1); },
                      {x, w}, make_options(tolerance));
  });
  add("conv2d_strided", "ops", [seed, tolerance] {
    std::mt19937_64 rng(seed + 2);
    const D x = random_tensor({1, 3, 7, 7}, rng);
    const D w = random_tensor({10, 3, 3, 3}, rng);
    return grad_check([](const std::vector<D>& in) { return conv2d(in[0], in[1], D{}, 1, 2); },
                      {x, w}, make_options(tolerance));
  });
  add("depthwise_conv2d", "ops", [seed, tolerance] {
    std::mt19937_64 rng(seed + 3);
    const D x = random_tensor({2, 4, 6, 5}, rng);
    const D w = random_tensor({4, 3, 3}, rng);
    const D b = random_tensor({4}, rng);
    return grad_check(
        [](const std::vector<D>& in) { return depthwise_conv2d(in[0], in[1], in[2], 1); },
        {x, w, b}, make_options(tolerance));
  });
  add("pointwise_conv", "ops", [seed, tolerance] {
    std::mt19937_64 rng(seed + 4);
    const D x = random_tensor({2, 5, 4, 3}, rng);
    const D w = random_tensor({7, 5}, rng);
    const D b = random_tensor({7}, rng);
    return grad_check(
        [](const std::vector<D>& in) { return pointwise_conv(in[0], in[1], in[2]); }, {x, w, b}, make_options(tolerance));
  });
  add("pixel_shuffle", "ops", [seed, tolerance] {
    std::mt19937_64 rng(seed + 5);
    const D x = random_tensor({2, 8, 3, 2}, rng);
    return grad_check([](const std::vector<D>& in) { return pixel_shuffle(in[0], 2); }, {x}, make_options(tolerance));
  });
  add("det3", "ops", [seed, tolerance] {
    std::mt19937_64 rng(seed + 6);
    const D m = random_tensor({6, 3, 3}, rng);
    return grad_check([](const std::vector<D>& in) { return det3(in[0]); }, {m}, make_options(tolerance));
  });
  add("l1_loss", "ops", [seed, tolerance] {
    std::mt19937_64 rng(seed + 7);
    const D a = random_tensor({2, 3, 4, 4}, rng);
    const D b = random_tensor({2, 3, 4, 4}, rng);
    return grad_check([](const std::vector<D>& in) { return l1_loss(in[0], in[1]); }, {a, b}, make_options(tolerance));
  });

  add("attention_gate", "layers", [seed, tolerance] {
    std::mt19937_64 rng(seed + 10);
    const auto branch = random_branch(16, 4, true, rng);
    const D z = random_tensor({16}, rng);
    return grad_check(
        [branch](const std::vector<D>& in) { return attention_gate(branch, in[0]); },
        {z, branch.down_weight, branch.down_bias, branch.up_weight, branch.up_bias}, make_options(tolerance));
  });
  add("apply_attention", "layers", [seed, tolerance] {
    std::mt19937_64 rng(seed + 11);
    const D f = random_tensor({2, 4, 3, 3}, rng);
    const D s = random_tensor({4}, rng, 0.05, 0.95);
    return grad_check([](const std::vector<D>& in) { return apply_attention(in[0], in[1]); },
                      {f, s}, make_options(tolerance));
  });
  for (const auto kind : {DescriptorKind::Determinant, DescriptorKind::Average, DescriptorKind::Max}) {
    add("ald_layer_" + std::string(to_string(kind)), "layers", [seed, kind, tolerance] {
      std::mt19937_64 rng(seed + 12 + static_cast<std::uint64_t>(kind));
      SeparableConvOptions options;
      options.descriptor = kind;
      options.reduction = 4;
      const SeparableConv<double> layer(LayerVariant::ALD, 8, 6, options);
      ParameterList<double> params;
      layer.collect(params, "");
      randomize(params, rng, 0.8);
      const D x = random_tensor({2, 8, 5, 5}, rng);
      return grad_check([layer](const std::vector<D>& in) { return layer.forward(in[0]); },
                        with_params({x}, params), make_options(tolerance));
    });
  }

  add("aldb", "models", [seed, tolerance] {
    std::mt19937_64 rng(seed + 20);
    ALDBSpec spec;
    spec.width = 8;
    spec.reduction = 4;
    const ALDB<double> block(spec);
    ParameterList<double> params;
    block.collect(params, "");
    unit_variance_uniform(params, seed + 21);
    const D x = random_tensor({1, 8, 5, 5}, rng);
    const D state = random_tensor({1, 8, 5, 5}, rng);
    return grad_check(
        [block](const std::vector<D>& in) { return block.forward(in[0], in[1]).out; },
        with_params({x, state}, params), make_options(tolerance, 60, seed + 22));
  });
  add("aldsr_micro", "models", [seed, tolerance] {
    std::mt19937_64 rng(seed + 30);
    ALDSRSpec spec;
    spec.n_blocks = 1;
    spec.width = 16;
    spec.reduction = 4;
    spec.scale = 4;
    const ALDSR<double> model(spec);
    const ParameterList<double> params = model.parameters();
    unit_variance_uniform(params, seed + 31);
    const D x = random_tensor({1, 3, 8, 8}, rng, 0.0, 1.0);
    return grad_check([&model](const std::vector<D>& in) { return model.forward(in[0]); },
                      with_params({x}, params), make_options(tolerance, 40, seed + 32));
  });
  return cases;
}

}  // namespace aldsr
