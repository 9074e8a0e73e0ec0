#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "aldsr/gradcheck.hpp"

namespace aldsr {

struct GradCheckCase {
  std::string name;
  std::string group;  // ops, layers or models
  std::function<GradCheckResult()> run;
};

// Finite-difference checks over every differentiable building block, in f64
// with random inputs drawn from `seed`. `suite` is all, ops, layers or models.
std::vector<GradCheckCase> gradcheck_suite(const std::string& suite, std::uint64_t seed = 7,
                                           double tolerance = 1e-4);

}  // namespace aldsr
