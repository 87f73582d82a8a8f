#pragma once

// High-frequency supervision targets extracted from ground-truth depth.
// All outputs are (n, 1, H, W), non-negative and carry no gradient record.

#include <string>

#include "dsrei/tensor.hpp"

namespace dsrei {

enum class HfTarget { kGradient, kCanny, kGaussian, kDct, kWavelet };

/// "gradient", "canny", "gaussian", "dct" or "wavelet".
HfTarget parse_hf_target(const std::string& name);
std::string hf_target_name(HfTarget t);

/// Sobel magnitude with kernels [[-1,0,1],[-2,0,2],[-1,0,1]] / 8 and its
/// transpose, replicate padding.
template <typename T>
Tensor<T> extract_gradient_gt(const Tensor<T>& depth);

/// Binary Canny edges: Gaussian sigma 1, Sobel, non-maximum suppression,
/// hysteresis at 0.1 and 0.2 of the maximum magnitude.
template <typename T>
Tensor<T> extract_canny(const Tensor<T>& depth);

/// |d - G_2 * d| with a sigma-2 Gaussian, replicate padding.
template <typename T>
Tensor<T> extract_gaussian_highpass(const Tensor<T>& depth);

/// |IDCT(mask * DCT(block))| over 8x8 blocks keeping bins with u + v >= 4.
template <typename T>
Tensor<T> extract_dct_highpass(const Tensor<T>& depth);

/// Single-level Haar detail magnitude sqrt(LH^2 + HL^2 + HH^2), held over
/// each 2x2 block.
template <typename T>
Tensor<T> extract_haar_detail(const Tensor<T>& depth);

template <typename T>
Tensor<T> extract_hf_target(const Tensor<T>& depth, HfTarget kind);

}  // namespace dsrei
