#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "aldsr/tensor.hpp"

namespace aldsr {

struct GradCheckOptions {
  double step = 1e-5;
  // Elements where both |analytic| and |numeric| fall below this are skipped.
  double skip_below = 1e-8;
  // Per-input cap on the number of probed coordinates; 0 probes every element.
  std::size_t max_coords_per_input = 0;
  // A coordinate is scored only when the central difference at `step` agrees
  // with the one at 2*step to within resolution_fraction * tolerance (relative).
  // Otherwise roundoff in the reference exceeds what the tolerance can judge
  // and the coordinate is counted as unresolved.
  double tolerance = 1e-4;
  double resolution_fraction = 0.25;
  std::uint64_t seed = 0x5eed;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  // Coordinates whose +-step evaluations straddle a ReLU/max/L1 kink; central
  // differences are meaningless there, so they are excluded.
  std::size_t kinks = 0;
  std::size_t unresolved = 0;
  // Input index and flat element index of the worst coordinate.
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

using GradFunction = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

// Compares reverse-mode gradients of <fn(inputs), R> against central
// differences, where R is a fixed random projection of the output. Inputs are
// perturbed in place and restored, so they may alias model parameters.
// Relative error is |a - n| / max(|a|, |n|).
GradCheckResult grad_check(const GradFunction& fn, const std::vector<Tensor<double>>& inputs,
                           const GradCheckOptions& options = {});

}  // namespace aldsr
