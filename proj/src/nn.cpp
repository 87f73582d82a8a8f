#include "dsrei/nn.hpp"

#include <algorithm>
#include <cmath>

#include "dsrei/error.hpp"

namespace dsrei {

std::vector<double> ParamInit::fan_in_uniform(std::size_t count, std::int64_t fan_in) {
  if (fan_in < 1) throw InvalidParameter("fan_in_uniform: fan_in must be positive");
  const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
  return uniform(count, -bound, bound);
}

std::vector<double> ParamInit::uniform(std::size_t count, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(count);
  for (auto& x : v) x = dist(rng_);
  return v;
}

namespace {

template <typename T>
Tensor<T> leaf(Shape s, const std::vector<double>& v) {
  Tensor<T> t(s, std::vector<T>(v.begin(), v.end()));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
ConvParams<T> conv_with_gain(ParamInit& init, std::int64_t in_c, std::int64_t out_c, int k,
                             int stride, double gain) {
  if (in_c < 1 || out_c < 1 || k < 1) throw InvalidConfig("make_conv: bad geometry");
  ConvParams<T> p;
  const Shape ws{out_c, in_c, k, k};
  std::vector<double> w = init.fan_in_uniform(static_cast<std::size_t>(ws.numel()), in_c * k * k);
  for (auto& v : w) v *= gain;
  p.weight = leaf<T>(ws, w);
  p.bias = leaf<T>(Shape{out_c, 1, 1, 1}, std::vector<double>(static_cast<std::size_t>(out_c), 0.0));
  p.stride = stride;
  p.padding = (k - 1) / 2;
  return p;
}

}  // namespace

template <typename T>
ConvParams<T> make_conv(ParamInit& init, std::int64_t in_c, std::int64_t out_c, int k,
                        int stride) {
  return conv_with_gain<T>(init, in_c, out_c, k, stride, 1.0);
}

template <typename T>
ConvParams<T> make_residual_conv(ParamInit& init, std::int64_t in_c, std::int64_t out_c, int k) {
  return conv_with_gain<T>(init, in_c, out_c, k, 1, kResidualGain);
}

template <typename T>
LinearParams<T> make_linear(ParamInit& init, std::int64_t in_f, std::int64_t out_f) {
  if (in_f < 1 || out_f < 1) throw InvalidConfig("make_linear: bad geometry");
  LinearParams<T> p;
  const Shape ws{out_f, in_f, 1, 1};
  p.weight = leaf<T>(ws, init.fan_in_uniform(static_cast<std::size_t>(ws.numel()), in_f));
  p.bias = leaf<T>(Shape{out_f, 1, 1, 1}, std::vector<double>(static_cast<std::size_t>(out_f), 0.0));
  return p;
}

template <typename T>
void zero_params(ConvParams<T>& p) {
  auto w = p.weight.mutable_values();
  std::fill(w.begin(), w.end(), T(0));
  if (p.bias.defined()) {
    auto b = p.bias.mutable_values();
    std::fill(b.begin(), b.end(), T(0));
  }
}

template ConvParams<float> make_conv(ParamInit&, std::int64_t, std::int64_t, int, int);
template ConvParams<double> make_conv(ParamInit&, std::int64_t, std::int64_t, int, int);
template ConvParams<float> make_residual_conv(ParamInit&, std::int64_t, std::int64_t, int);
template ConvParams<double> make_residual_conv(ParamInit&, std::int64_t, std::int64_t, int);
template LinearParams<float> make_linear(ParamInit&, std::int64_t, std::int64_t);
template LinearParams<double> make_linear(ParamInit&, std::int64_t, std::int64_t);
template void zero_params(ConvParams<float>&);
template void zero_params(ConvParams<double>&);

}  // namespace dsrei
