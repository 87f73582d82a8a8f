#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dsrei/tensor.hpp"

namespace dsrei {

/// Compares reverse-mode gradients against central differences in 64-bit.
///
/// Non-scalar outputs are reduced with a fixed pseudo-random projection
/// (seeded by `seed`) so that every output coordinate contributes. The
/// returned value is max |analytic - numeric| / max(1, |numeric|) over the
/// checked coordinates. Where the second difference reveals a kink inside
/// the stencil, the step is refined (h/10, h/100, h/1000) until successive
/// estimates agree. Throws HarnessError when `op` is not deterministic.
double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& op,
                  const Tensor<double>& x, double h = 1e-4, std::uint64_t seed = 17);

/// Same metric for a scalar loss closure over parameter leaves. When
/// `max_coords` is non-zero, a seeded random subset of that many parameter
/// coordinates (across all tensors) is checked.
double grad_check_params(const std::function<Tensor<double>()>& loss,
                         std::vector<Tensor<double>> params, double h = 1e-4,
                         std::size_t max_coords = 0, std::uint64_t seed = 17);

}  // namespace dsrei
