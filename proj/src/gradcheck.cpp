#include "aldsr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "aldsr/ops.hpp"

namespace aldsr {
namespace {

double project(const Tensor<double>& out, const std::vector<double>& weights) {
  double acc = 0.0;
  auto v = out.values();
  for (std::size_t i = 0; i < v.size(); ++i) acc += v[i] * weights[i];
  return acc;
}

}  // namespace

GradCheckResult grad_check(const GradFunction& fn, const std::vector<Tensor<double>>& inputs,
                           const GradCheckOptions& options) {
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  std::vector<bool> previously_tracked;
  for (const auto& t : inputs) {
    previously_tracked.push_back(t.requires_grad());
    Tensor<double> handle = t;
    handle.zero_grad();
    handle.set_requires_grad(true);
  }

  std::vector<double> projection;
  std::uint64_t base_branches = 0;
  {
    Tape<double> tape;
    BranchFingerprint branches;
    const Tensor<double> out = fn(inputs);
    base_branches = branches.value();
    projection.resize(out.numel());
    for (double& w : projection) w = unit(rng);
    const Tensor<double> loss = sum(mul(out, Tensor<double>(out.shape(), projection)));
    tape.backward(loss);
  }

  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor<double> input = inputs[k];
    const std::vector<double> analytic = input.has_grad()
                                             ? std::vector<double>(input.grad().begin(),
                                                                   input.grad().end())
                                             : std::vector<double>(input.numel(), 0.0);

    std::vector<std::size_t> coords(input.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_input > 0 && coords.size() > options.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }

    auto values = input.mutable_values();
    for (std::size_t idx : coords) {
      const double saved = values[idx];
      const auto evaluate = [&](double value, std::uint64_t& branches) {
        values[idx] = value;
        BranchFingerprint fingerprint;
        const double projected = project(fn(inputs), projection);
        branches = fingerprint.value();
        return projected;
      };
      const auto central = [&](double h, bool& kink) {
        std::uint64_t plus_branches = 0;
        std::uint64_t minus_branches = 0;
        const double plus = evaluate(saved + h, plus_branches);
        const double minus = evaluate(saved - h, minus_branches);
        values[idx] = saved;
        kink = plus_branches != base_branches || minus_branches != base_branches;
        return (plus - minus) / (2.0 * h);
      };
      bool kink = false;
      const double numeric = central(options.step, kink);
      if (kink) {
        ++result.kinks;
        continue;
      }
      const double a = std::abs(analytic[idx]);
      const double n = std::abs(numeric);
      if (a < options.skip_below && n < options.skip_below) {
        ++result.skipped;
        continue;
      }
      bool wide_kink = false;
      const double wide = central(2.0 * options.step, wide_kink);
      if (wide_kink || std::abs(wide - numeric) >
                           options.resolution_fraction * options.tolerance * n) {
        ++result.unresolved;
        continue;
      }
      const double rel = std::abs(analytic[idx] - numeric) / std::max(a, n);
      ++result.checked;
      if (rel >= result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_input = k;
        result.worst_index = idx;
        result.worst_analytic = analytic[idx];
        result.worst_numeric = numeric;
      }
    }
  }

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor<double> handle = inputs[k];
    handle.zero_grad();
    handle.set_requires_grad(previously_tracked[k]);
  }
  return result;
}

}  // namespace aldsr
