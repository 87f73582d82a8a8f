#include "dsrei/frequency.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dsrei/error.hpp"

namespace dsrei {

std::vector<double> dct_basis(int N) {
  if (N < 1) throw InvalidParameter("dct_basis: N must be >= 1, got " + std::to_string(N));
  std::vector<double> b(static_cast<std::size_t>(N) * N);
  for (int k = 0; k < N; ++k) {
    const double alpha = std::sqrt((k == 0 ? 1.0 : 2.0) / N);
    for (int i = 0; i < N; ++i) {
      b[k * N + i] = alpha * std::cos(std::numbers::pi * (2 * i + 1) * k / (2.0 * N));
    }
  }
  return b;
}

std::vector<std::pair<int, int>> zigzag_frequencies(int N, int count) {
  if (N < 1 || count < 0 || count > N * N) {
    throw InvalidParameter("zigzag_frequencies: need 0 <= count <= N*N");
  }
  std::vector<std::pair<int, int>> out;
  for (int s = 0; s <= 2 * (N - 1) && static_cast<int>(out.size()) < count; ++s) {
    const int lo = std::max(0, s - (N - 1)), hi = std::min(s, N - 1);
    for (int k = 0; k <= hi - lo && static_cast<int>(out.size()) < count; ++k) {
      // Odd diagonals run with increasing row, even ones with decreasing row.
      const int u = (s % 2 == 1) ? lo + k : hi - k;
      out.emplace_back(u, s - u);
    }
  }
  return out;
}

DctPlan make_dct_plan(int block, int groups) {
  DctPlan plan;
  plan.block = block;
  plan.basis = dct_basis(block);
  plan.frequencies = zigzag_frequencies(block, groups);
  return plan;
}

namespace {

std::int64_t tile_multiple(std::int64_t side, int N) {
  if (side % N == 0) return side;
  const auto k = std::max<std::int64_t>(1, std::llround(static_cast<double>(side) / N));
  return k * N;
}

template <typename T>
Tensor<T> to_tile_grid(const Tensor<T>& x, int N) {
  const Shape s = x.shape();
  const auto h = tile_multiple(s.h, N), w = tile_multiple(s.w, N);
  if (h == s.h && w == s.w) return x;
  return resize(x, h, w, ResizeMode::kBilinear);
}

}  // namespace

template <typename T>
Tensor<T> spectral_component(const Tensor<T>& x, int u, int v, const DctPlan& plan) {
  const int N = plan.block;
  if (u < 0 || u >= N || v < 0 || v >= N) {
    throw InvalidParameter("spectral_component: (u,v) outside [0," + std::to_string(N) + ")^2");
  }
  if (x.shape().h < 1 || x.shape().w < 1) throw InvalidShape("spectral_component: empty input");
  const std::vector<std::pair<int, int>> freqs(static_cast<std::size_t>(x.shape().c), {u, v});
  return dct_squeeze(to_tile_grid(x, N), freqs, plan.basis, N);
}

template <typename T>
MultiSpectralAttention<T>::MultiSpectralAttention(ParamInit& init, std::int64_t channels,
                                                  int groups, int block)
    : channels_(channels), groups_(groups) {
  if (groups < 1 || channels % groups != 0) {
    throw InvalidConfig("MultiSpectralAttention: " + std::to_string(channels) +
                        " channels not divisible into " + std::to_string(groups) + " groups");
  }
  plan_ = make_dct_plan(block, groups);
  fc = make_linear<T>(init, channels, channels);
}

template <typename T>
Tensor<T> MultiSpectralAttention<T>::descriptor(const Tensor<T>& x) const {
  if (x.shape().c != channels_) {
    throw InvalidConfig("MultiSpectralAttention: expected " + std::to_string(channels_) +
                        " channels, got " + std::to_string(x.shape().c));
  }
  const std::int64_t per_group = channels_ / groups_;
  std::vector<std::pair<int, int>> freqs;
  freqs.reserve(static_cast<std::size_t>(channels_));
  for (std::int64_t c = 0; c < channels_; ++c) freqs.push_back(plan_.frequencies[c / per_group]);
  return dct_squeeze(to_tile_grid(x, plan_.block), freqs, plan_.basis, plan_.block);
}

template <typename T>
Tensor<T> MultiSpectralAttention<T>::forward(const Tensor<T>& x) const {
  return sigmoid(linear(descriptor(x), fc));
}

template <typename T>
void MultiSpectralAttention<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  append_params(out, prefix + ".fc", fc);
}

template <typename T>
LowCutParts<T> low_cut(const Tensor<T>& features, const Tensor<T>& att) {
  LowCutParts<T> parts;
  parts.features = features;
  parts.high = sub(features, mul(features, att));
  parts.low = sub(features, parts.high);
  return parts;
}

template <typename T>
Lcf<T>::Lcf(ParamInit& init, std::int64_t in_channels, std::int64_t channels, int groups,
            int block)
    : proj(make_conv<T>(init, in_channels, channels, 1)),
      attention(init, channels, groups, block) {}

template <typename T>
LowCutParts<T> Lcf<T>::decompose(const Tensor<T>& x) const {
  const Tensor<T> features = conv2d(x, proj);
  return low_cut(features, attention.forward(features));
}

template <typename T>
void Lcf<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  append_params(out, prefix + ".proj", proj);
  attention.collect(prefix + ".attention", out);
}

template <typename T>
Cab<T>::Cab(ParamInit& init, std::int64_t channels, int reduction)
    : conv1(make_conv<T>(init, channels, channels, 3)),
      conv2(make_residual_conv<T>(init, channels, channels, 3)),
      squeeze(make_linear<T>(init, channels, std::max<std::int64_t>(1, channels / reduction))),
      excite(make_linear<T>(init, std::max<std::int64_t>(1, channels / reduction), channels)) {
  if (reduction < 1) throw InvalidConfig("Cab: reduction must be >= 1");
}

template <typename T>
Tensor<T> Cab<T>::body(const Tensor<T>& x) const {
  return conv2d(relu(conv2d(x, conv1)), conv2);
}

template <typename T>
Tensor<T> Cab<T>::channel_scale(const Tensor<T>& body) const {
  return sigmoid(linear(relu(linear(global_avg_pool(body), squeeze)), excite));
}

template <typename T>
Tensor<T> Cab<T>::forward(const Tensor<T>& x) const {
  const Tensor<T> b = body(x);
  return add(x, mul(b, channel_scale(b)));
}

template <typename T>
void Cab<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  append_params(out, prefix + ".conv1", conv1);
  append_params(out, prefix + ".conv2", conv2);
  append_params(out, prefix + ".squeeze", squeeze);
  append_params(out, prefix + ".excite", excite);
}

template Tensor<float> spectral_component(const Tensor<float>&, int, int, const DctPlan&);
template Tensor<double> spectral_component(const Tensor<double>&, int, int, const DctPlan&);
template class MultiSpectralAttention<float>;
template class MultiSpectralAttention<double>;
template LowCutParts<float> low_cut(const Tensor<float>&, const Tensor<float>&);
template LowCutParts<double> low_cut(const Tensor<double>&, const Tensor<double>&);
template class Lcf<float>;
template class Lcf<double>;
template class Cab<float>;
template class Cab<double>;

}  // namespace dsrei
