#pragma once

// Forward operations with reverse-mode rules. All ops are pure: identical
// inputs give bit-identical outputs.

#include <utility>
#include <vector>

#include "dsrei/tensor.hpp"

namespace dsrei {

template <typename T>
struct ConvParams {
  Tensor<T> weight;  // (out_c, in_c, kh, kw)
  Tensor<T> bias;    // (out_c, 1, 1, 1)
  int stride = 1;
  int padding = 0;

  std::int64_t in_channels() const { return weight.shape().c; }
  std::int64_t out_channels() const { return weight.shape().n; }
};

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // (out_features, in_features, 1, 1)
  Tensor<T> bias;    // (out_features, 1, 1, 1)
};

enum class Activation { kSigmoid, kRelu, kLeakyRelu };
enum class ResizeMode { kNearest, kBilinear };

// Elementwise binary ops broadcast any operand dimension of size 1.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.2));
template <typename T> Tensor<T> activation(const Tensor<T>& x, Activation kind);

/// Zero-padded cross-correlation plus bias.
template <typename T> Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& p);

/// Window mean. Padding cells are excluded from each window's count.
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, int k, int stride, int padding = 0);
template <typename T> Tensor<T> global_avg_pool(const Tensor<T>& x);

/// Half-pixel-centred resampling (align_corners = false).
template <typename T>
Tensor<T> resize(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w, ResizeMode mode);
/// Keys cubic (a = -0.5), clamped border samples.
template <typename T>
Tensor<T> resize_bicubic(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w);
double keys_cubic(double t);

template <typename T> Tensor<T> pixel_shuffle(const Tensor<T>& x, int r);
template <typename T> Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r);

/// y = x W^T + b on x viewed as (n, c*h*w). Output shape (n, out, 1, 1).
template <typename T> Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p);

template <typename T> Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs);
template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x, const std::vector<std::int64_t>& sizes);

/// [1,2,1]/4 separable blur with clamped borders, then stride-2 subsampling.
template <typename T> Tensor<T> blur_downsample(const Tensor<T>& x);

/// (n, C, h, w) -> (n * windows, heads, wh * ww, C / heads); windows are
/// enumerated row-major per image, tokens row-major within a window.
template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, std::int64_t wh, std::int64_t ww, int heads);
/// Inverse of window_partition for an image of shape `image`.
template <typename T>
Tensor<T> window_merge(const Tensor<T>& t, const Shape& image, std::int64_t wh, std::int64_t ww,
                       int heads);

/// Batched over (n, c): (.., T, K) x (.., K, S) or (.., T, K) x (.., S, K)^T.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);
/// Softmax along the last (w) axis.
template <typename T> Tensor<T> softmax_last(const Tensor<T>& x);
/// Tiles a batch-1 tensor n times along the batch axis.
template <typename T> Tensor<T> repeat_batch(const Tensor<T>& x, std::int64_t n);

/// Per-channel 2-D DCT coefficient averaged over N x N tiles. `freqs[c]` is
/// the (u, v) pair for channel c; `basis` is the N x N row-major DCT-II
/// matrix. h and w must be multiples of N. Output (n, c, 1, 1).
template <typename T>
Tensor<T> dct_squeeze(const Tensor<T>& x, const std::vector<std::pair<int, int>>& freqs,
                      const std::vector<double>& basis, int N);

/// Mean of |pred - target| over sites where mask != 0 (all sites when mask
/// is undefined). Gradient flows to pred only. Throws DegenerateBatch for an
/// all-zero mask.
template <typename T>
Tensor<T> masked_l1_mean(const Tensor<T>& pred, const Tensor<T>& target,
                         const Tensor<T>& mask = Tensor<T>());

}  // namespace dsrei
