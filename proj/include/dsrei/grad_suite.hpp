#pragma once

// Finite-difference suite over every differentiable op, each composite
// block and the tiny full model, all in 64-bit.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "dsrei/tensor.hpp"

namespace dsrei {

struct GradCase {
  std::string name;
  std::function<double(std::uint64_t seed)> run;  // returns the relative error
};

/// `inject_fault` appends an op whose backward is deliberately wrong.
std::vector<GradCase> gradient_suite(bool include_model = true, bool inject_fault = false);

struct GradResult {
  std::string name;
  double max_error = 0;
  bool pass = false;
};

/// Worst error per case over `seeds`; one line per case goes to `log`.
std::vector<GradResult> run_gradient_suite(const std::vector<GradCase>& cases,
                                           const std::vector<std::uint64_t>& seeds,
                                           double tolerance, std::ostream* log = nullptr);

/// Uniform values in [lo, hi] with magnitude at least `min_abs`.
Tensor<double> random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0,
                             double hi = 1.0, double min_abs = 0.0);

/// y = 2x with a backward that reports 3 dy.
Tensor<double> faulty_double(const Tensor<double>& x);

}  // namespace dsrei
