#pragma once

// High-frequency extraction branch: stem, stacked DSP blocks, a windowed
// local/global attention tail and a supervised-attention head that emits the
// predicted gradient map and the edge guidance features.

#include <array>
#include <string>
#include <vector>

#include "dsrei/nn.hpp"

namespace dsrei {

struct HfebConfig {
  std::int64_t channels = 64;
  int dsp_depth = 4;
  int window = 8;
  int heads = 2;
  int n_global = 8;
};

/// Dynamic self-calibrated convolution with pixel attention.
///
/// Three 1x1 convolutions split the input into a dynamic-scale branch (C/4,
/// run at half resolution), a flat branch (C/4) and a pixel-attention branch
/// (C/2). The first two are widened to C/2, summed and passed through a 3x3;
/// the attention branch is gated by a sigmoid map and fused by a 3x3. The
/// concatenation goes through a final 1x1 and is added to the input.
template <typename T>
class DspBlock {
 public:
  DspBlock(ParamInit& init, std::int64_t channels);

  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(const std::string& prefix, NamedParams<T>& out) const;

  std::int64_t channels() const { return channels_; }
  /// Channel widths of the (dynamic, flat, attention) branches.
  std::array<std::int64_t, 3> split_sizes() const {
    return {channels_ / 4, channels_ / 4, channels_ / 2};
  }

  ConvParams<T> split_dynamic, split_flat, split_attention;
  ConvParams<T> dynamic_conv3, dynamic_conv1;
  ConvParams<T> flat_conv3, flat_conv1;
  ConvParams<T> attention_conv3, attention_gate, attention_fuse;
  ConvParams<T> merge_conv3;
  ConvParams<T> out_proj;  // closes the residual

 private:
  std::int64_t channels_;
};

/// Sequential composition; an empty list is the identity.
template <typename T>
Tensor<T> stack_dsp(const Tensor<T>& x, const std::vector<DspBlock<T>>& blocks);

/// Windowed multi-head self-attention followed by a small set of learnable
/// global tokens that gather from every local token and broadcast back.
template <typename T>
class LightAttention {
 public:
  LightAttention(ParamInit& init, std::int64_t channels, int window, int heads, int n_global);

  Tensor<T> forward(const Tensor<T>& x) const;
  /// Output of the windowed stage only.
  Tensor<T> local_stage(const Tensor<T>& x) const;
  /// Softmax weights of the windowed stage, (windows*n, heads, tokens, tokens).
  Tensor<T> local_attention_weights(const Tensor<T>& x) const;

  void collect(const std::string& prefix, NamedParams<T>& out) const;

  ConvParams<T> qkv;
  ConvParams<T> global_kv;
  Tensor<T> global_tokens;  // (1, heads, n_global, C / heads)
  ConvParams<T> out_proj;

 private:
  void check(const Tensor<T>& x) const;

  std::int64_t channels_;
  int window_;
  int heads_;
};

template <typename T>
struct SamOutput {
  Tensor<T> features;
  Tensor<T> image;
  Tensor<T> attention;
};

/// Supervised attention head: image = conv(f) + img, A = sigmoid(conv(image)),
/// features = f + conv(f) * A.
template <typename T>
class Sam {
 public:
  Sam(ParamInit& init, std::int64_t channels, std::int64_t image_channels);

  SamOutput<T> forward(const Tensor<T>& f, const Tensor<T>& img) const;
  void collect(const std::string& prefix, NamedParams<T>& out) const;

  ConvParams<T> image_head;
  ConvParams<T> attention_head;
  ConvParams<T> feature_head;
};

template <typename T>
struct HfebOutput {
  Tensor<T> gradient_map;   // (n, 1, H, W)
  Tensor<T> edge_features;  // (n, C, H, W)
};

template <typename T>
class Hfeb {
 public:
  Hfeb(ParamInit& init, const HfebConfig& cfg);

  /// `depth_up` is the bicubic-upsampled depth, `color` the HR image.
  HfebOutput<T> forward(const Tensor<T>& depth_up, const Tensor<T>& color) const;
  void collect(const std::string& prefix, NamedParams<T>& out) const;

  const HfebConfig& config() const { return cfg_; }

  ConvParams<T> stem;
  std::vector<DspBlock<T>> blocks;
  LightAttention<T> attention;
  Sam<T> sam;

 private:
  HfebConfig cfg_;
};

}  // namespace dsrei
