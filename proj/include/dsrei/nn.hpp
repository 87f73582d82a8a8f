#pragma once

// Parameter construction and bookkeeping shared by every module.

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dsrei/ops.hpp"

namespace dsrei {

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

/// Seeded source of initial weights. Values are drawn in 64-bit and then
/// rounded, so float and double models built from one seed agree.
class ParamInit {
 public:
  explicit ParamInit(std::uint64_t seed) : rng_(seed) {}

  /// Fan-in scaled uniform with unit gain: U(-sqrt(3/fan_in), sqrt(3/fan_in)),
  /// variance 1/fan_in.
  std::vector<double> fan_in_uniform(std::size_t count, std::int64_t fan_in);
  std::vector<double> uniform(std::size_t count, double lo, double hi);

 private:
  std::mt19937_64 rng_;
};

/// k x k convolution, stride `stride`, "same" padding (k - 1) / 2.
template <typename T>
ConvParams<T> make_conv(ParamInit& init, std::int64_t in_c, std::int64_t out_c, int k,
                        int stride = 1);

/// Last projection of a residual branch. Fan-in weights scaled by
/// kResidualGain so deep stacks of blocks start close to the identity.
inline constexpr double kResidualGain = 0.1;
template <typename T>
ConvParams<T> make_residual_conv(ParamInit& init, std::int64_t in_c, std::int64_t out_c, int k);

template <typename T>
LinearParams<T> make_linear(ParamInit& init, std::int64_t in_f, std::int64_t out_f);

template <typename T>
void append_params(NamedParams<T>& out, const std::string& name, const ConvParams<T>& p) {
  out.emplace_back(name + ".weight", p.weight);
  if (p.bias.defined()) out.emplace_back(name + ".bias", p.bias);
}

template <typename T>
void append_params(NamedParams<T>& out, const std::string& name, const LinearParams<T>& p) {
  out.emplace_back(name + ".weight", p.weight);
  if (p.bias.defined()) out.emplace_back(name + ".bias", p.bias);
}

/// Sets weight and bias to zero in place.
template <typename T>
void zero_params(ConvParams<T>& p);

template <typename T>
std::int64_t count_params(const NamedParams<T>& params) {
  std::int64_t total = 0;
  for (const auto& [name, t] : params) total += t.numel();
  return total;
}

}  // namespace dsrei
