#pragma once

// Frequency-domain guidance: orthonormal DCT-II, multi-spectral channel
// attention, the low-cut filter and the channel-attention block.

#include <utility>
#include <vector>

#include "dsrei/nn.hpp"

namespace dsrei {

/// Orthonormal DCT-II basis, row-major N x N:
/// B[k][i] = a_k cos(pi (2i + 1) k / 2N), a_0 = sqrt(1/N), a_k = sqrt(2/N).
std::vector<double> dct_basis(int N);

/// First `count` (u, v) pairs of the JPEG zigzag scan, starting at (0, 0).
std::vector<std::pair<int, int>> zigzag_frequencies(int N, int count);

struct DctPlan {
  int block = 8;
  std::vector<double> basis;
  std::vector<std::pair<int, int>> frequencies;  // one per channel group
};

DctPlan make_dct_plan(int block = 8, int groups = 16);

/// Per-channel (u, v) coefficient averaged over N x N tiles. Inputs whose
/// sides are not multiples of N (or are smaller than N) are first resized
/// bilinearly to the nearest multiple. Output (n, c, 1, 1).
template <typename T>
Tensor<T> spectral_component(const Tensor<T>& x, int u, int v, const DctPlan& plan);

/// Channel attention in (0, 1) from grouped DCT descriptors, (n, C, 1, 1).
template <typename T>
class MultiSpectralAttention {
 public:
  MultiSpectralAttention(ParamInit& init, std::int64_t channels, int groups, int block = 8);

  Tensor<T> forward(const Tensor<T>& x) const;
  /// Grouped DCT descriptor fed to the fully connected layer.
  Tensor<T> descriptor(const Tensor<T>& x) const;
  void collect(const std::string& prefix, NamedParams<T>& out) const;

  const DctPlan& plan() const { return plan_; }

  LinearParams<T> fc;

 private:
  std::int64_t channels_;
  int groups_;
  DctPlan plan_;
};

template <typename T>
struct LowCutParts {
  Tensor<T> features;  // conv1x1 projection
  Tensor<T> low;       // attention-weighted low-frequency part
  Tensor<T> high;      // features - low
};

/// high = features - features * att; low = features - high. The second
/// subtraction is exact, so low + high == features bit for bit.
template <typename T>
LowCutParts<T> low_cut(const Tensor<T>& features, const Tensor<T>& att);

template <typename T>
class Lcf {
 public:
  Lcf(ParamInit& init, std::int64_t in_channels, std::int64_t channels, int groups, int block = 8);

  Tensor<T> forward(const Tensor<T>& x) const { return decompose(x).high; }
  LowCutParts<T> decompose(const Tensor<T>& x) const;
  void collect(const std::string& prefix, NamedParams<T>& out) const;

  ConvParams<T> proj;
  MultiSpectralAttention<T> attention;
};

/// conv3x3 -> relu -> conv3x3 -> squeeze-excitation scaling -> + input.
template <typename T>
class Cab {
 public:
  Cab(ParamInit& init, std::int64_t channels, int reduction = 4);

  Tensor<T> forward(const Tensor<T>& x) const;
  /// Squeeze-excitation scale of the residual body, (n, C, 1, 1).
  Tensor<T> channel_scale(const Tensor<T>& body) const;
  Tensor<T> body(const Tensor<T>& x) const;
  void collect(const std::string& prefix, NamedParams<T>& out) const;

  ConvParams<T> conv1, conv2;
  LinearParams<T> squeeze, excite;
};

}  // namespace dsrei
