#pragma once

// Guided depth restoration branch and the full network forward pass.
//
// Layout: the LR depth is bicubic-upsampled to the colour resolution. The
// HFEB turns (depth, colour) into a predicted gradient map and edge
// features. Depth and colour each pass through a stem conv + CAB, in
// parallel with an LCF on the raw image; the two are summed. A stack of
// three-scale U-net stages follows: with two or more stages the first runs
// at half resolution on pixel-unshuffled inputs, the rest at full
// resolution. Each stage's encoder receives guidance features at every
// scale, its decoder receives AFFM outputs through the skips, and a SAM
// emits the stage depth and forwards features to the next stage. The final
// depth is a 3x3 conv of the last decoder features added to the upsampled input.

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dsrei/frequency.hpp"
#include "dsrei/hfeb.hpp"

namespace dsrei {

struct ModelConfig {
  std::string preset = "default";
  std::int64_t channels = 32;  // GDRB width at the top scale; doubles per scale
  HfebConfig hfeb;
  int stages = 2;
  int scales = 3;
  int freq_groups = 16;
  int dct_block = 8;
  int cab_reduction = 4;
  std::array<bool, 3> affm_scales{true, true, false};

  /// "tiny", "default" or "paper".
  static ModelConfig from_preset(const std::string& name);
  void validate() const;
};

template <typename T>
class ResConvBlock {
 public:
  ResConvBlock(ParamInit& init, std::int64_t channels);
  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(const std::string& prefix, NamedParams<T>& out) const;

  ConvParams<T> conv1, conv2;
};

/// Blur-then-subsample followed by a 3x3 conv doubling the channels.
template <typename T>
class AntialiasDown {
 public:
  AntialiasDown(ParamInit& init, std::int64_t in_channels);
  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(const std::string& prefix, NamedParams<T>& out) const;

  ConvParams<T> conv;
};

template <typename T>
struct ScaleFusion {
  Tensor<T> fused;                // F'
  std::array<Tensor<T>, 3> pi;    // per (batch, channel) weights, (n, C, 1, 1)
};

template <typename T>
struct EdgeAttention {
  Tensor<T> out;        // F_out
  Tensor<T> attention;  // F_att, same shape as F'
};

/// Adaptive feature fusion at one target scale.
template <typename T>
class Affm {
 public:
  /// `scale_channels[i]` is the encoder width at scale i.
  Affm(ParamInit& init, int target, const std::array<std::int64_t, 3>& scale_channels,
       std::int64_t edge_channels);

  /// Inputs must already share the target width. Resamples to the target
  /// scale, derives sigmoid weights from the pooled fused features and
  /// returns their weighted sum.
  ScaleFusion<T> fuse_scales(const Tensor<T>& f0, const Tensor<T>& f1, const Tensor<T>& f2) const;
  /// Edge-guided per-pixel attention on F' followed by a 1x1 projection.
  EdgeAttention<T> edge_attention(const Tensor<T>& fused, const Tensor<T>& edge) const;
  /// Width alignment, fuse_scales, then edge_attention.
  Tensor<T> forward(const std::array<Tensor<T>, 3>& encoder, const Tensor<T>& edge) const;

  void collect(const std::string& prefix, NamedParams<T>& out) const;
  int target() const { return target_; }

  std::array<ConvParams<T>, 3> align;  // undefined at the target scale
  ConvParams<T> cat_conv1, cat_conv3;
  ConvParams<T> edge_conv;
  ConvParams<T> res_conv1, res_conv2, res_skip;
  ConvParams<T> out_proj;

 private:
  int target_;
  std::int64_t width_;
};

/// enc2[s] = enc2_in[s] + conv1x1(enc1[s]) + conv1x1(dec1[s]), with the
/// stage-1 terms bilinearly upsampled 2x when that stage ran at half
/// resolution.
template <typename T>
class CrossStageFusion {
 public:
  CrossStageFusion(ParamInit& init, const std::array<std::int64_t, 3>& scale_channels);
  Tensor<T> apply(int scale, const Tensor<T>& enc1, const Tensor<T>& dec1,
                  const Tensor<T>& enc2_in) const;
  void collect(const std::string& prefix, NamedParams<T>& out) const;

  std::array<ConvParams<T>, 3> enc_conv, dec_conv;
};

template <typename T>
struct StageOutput {
  std::array<Tensor<T>, 3> encoder;
  std::array<Tensor<T>, 3> decoder;
  SamOutput<T> sam;
};

template <typename T>
class Stage {
 public:
  Stage(ParamInit& init, const ModelConfig& cfg, int image_channels, bool fuse_previous);

  /// `depth` and `guidance` are top-scale features at the stage resolution,
  /// `edge` the full-resolution HFEB features, `image` the depth image the
  /// SAM refines. `previous` enables cross-stage fusion.
  StageOutput<T> forward(const Tensor<T>& depth, const Tensor<T>& guidance, const Tensor<T>& edge,
                         const Tensor<T>& image, const StageOutput<T>* previous) const;
  void collect(const std::string& prefix, NamedParams<T>& out) const;

  std::array<std::vector<ResConvBlock<T>>, 3> encoder_blocks;
  std::array<AntialiasDown<T>, 2> down, guidance_down;
  std::array<std::optional<Affm<T>>, 3> affm;
  std::array<ConvParams<T>, 2> up_conv;  // scale s + 1 -> s
  std::array<ResConvBlock<T>, 3> decoder_blocks;
  std::optional<CrossStageFusion<T>> fusion;
  Sam<T> sam;
};

template <typename T>
struct ModelOutput {
  Tensor<T> d_sr;     // final depth
  Tensor<T> d_sr_s1;  // first-stage SAM depth
  Tensor<T> d_sr_s2;  // last-stage SAM depth
  Tensor<T> e_pred;   // predicted gradient map
};

template <typename T>
class DsrEi {
 public:
  DsrEi(const ModelConfig& cfg, std::uint64_t seed);

  /// `depth_lr` (n,1,h,w) and `color` (n,3,H,W), H = s h, W = s w with
  /// s in {4, 8, 16} and H, W multiples of 16.
  ModelOutput<T> forward(const Tensor<T>& depth_lr, const Tensor<T>& color) const;

  NamedParams<T> parameters() const;
  std::int64_t parameter_count() const { return count_params(parameters()); }
  const ModelConfig& config() const { return cfg_; }
  bool first_stage_half_resolution() const { return cfg_.stages >= 2; }

  Hfeb<T> hfeb;
  ConvParams<T> depth_stem, color_stem;
  Cab<T> depth_cab, color_cab;
  Lcf<T> depth_lcf, color_lcf;
  ConvParams<T> half_depth_proj, half_guidance_proj;  // only with a half-res stage
  std::vector<Stage<T>> stages;
  std::vector<ConvParams<T>> transitions;  // SAM features of stage k -> input of k + 1
  ConvParams<T> final_head;

 private:
  DsrEi(const ModelConfig& cfg, ParamInit&& init);

  ModelConfig cfg_;
};

/// Validates the (LR, HR) geometry and returns the scale factor.
int check_geometry(const Shape& depth_lr, const Shape& color);

}  // namespace dsrei
