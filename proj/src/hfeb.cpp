#include "dsrei/hfeb.hpp"

#include <cmath>

#include "dsrei/error.hpp"

namespace dsrei {

template <typename T>
DspBlock<T>::DspBlock(ParamInit& init, std::int64_t channels) : channels_(channels) {
  if (channels < 4 || channels % 4 != 0) {
    throw InvalidConfig("DspBlock: channels must be a positive multiple of 4, got " +
                        std::to_string(channels));
  }
  const std::int64_t q = channels / 4, h = channels / 2;
  split_dynamic = make_conv<T>(init, channels, q, 1);
  split_flat = make_conv<T>(init, channels, q, 1);
  split_attention = make_conv<T>(init, channels, h, 1);
  dynamic_conv3 = make_conv<T>(init, q, q, 3);
  dynamic_conv1 = make_conv<T>(init, q, h, 1);
  flat_conv3 = make_conv<T>(init, q, q, 3);
  flat_conv1 = make_conv<T>(init, q, h, 1);
  attention_conv3 = make_conv<T>(init, h, h, 3);
  attention_gate = make_conv<T>(init, h, h, 1);
  attention_fuse = make_conv<T>(init, h, h, 3);
  merge_conv3 = make_conv<T>(init, h, h, 3);
  out_proj = make_residual_conv<T>(init, channels, channels, 1);
}

template <typename T>
Tensor<T> DspBlock<T>::forward(const Tensor<T>& x) const {
  const Shape s = x.shape();
  if (s.c != channels_) {
    throw InvalidConfig("DspBlock: expected " + std::to_string(channels_) + " channels, got " +
                        std::to_string(s.c));
  }
  if (s.h < 2 || s.w < 2) throw InvalidShape("DspBlock: spatial size must be >= 2, got " + s.str());

  // Dynamic-scale branch at half resolution (floor for odd sizes).
  const Tensor<T> down = avg_pool2d(x, 2, 2);
  Tensor<T> dyn = conv2d(down, split_dynamic);
  dyn = conv2d(conv2d(dyn, dynamic_conv3), dynamic_conv1);
  dyn = resize(dyn, s.h, s.w, ResizeMode::kBilinear);

  Tensor<T> flat = conv2d(x, split_flat);
  flat = conv2d(conv2d(flat, flat_conv3), flat_conv1);

  const Tensor<T> pa = conv2d(x, split_attention);
  const Tensor<T> gated = mul(conv2d(pa, attention_conv3), sigmoid(conv2d(pa, attention_gate)));
  const Tensor<T> attn_out = conv2d(gated, attention_fuse);

  const Tensor<T> merged = conv2d(add(dyn, flat), merge_conv3);
  return add(conv2d(concat_channels<T>({attn_out, merged}), out_proj), x);
}

template <typename T>
void DspBlock<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  append_params(out, prefix + ".split_dynamic", split_dynamic);
  append_params(out, prefix + ".split_flat", split_flat);
  append_params(out, prefix + ".split_attention", split_attention);
  append_params(out, prefix + ".dynamic_conv3", dynamic_conv3);
  append_params(out, prefix + ".dynamic_conv1", dynamic_conv1);
  append_params(out, prefix + ".flat_conv3", flat_conv3);
  append_params(out, prefix + ".flat_conv1", flat_conv1);
  append_params(out, prefix + ".attention_conv3", attention_conv3);
  append_params(out, prefix + ".attention_gate", attention_gate);
  append_params(out, prefix + ".attention_fuse", attention_fuse);
  append_params(out, prefix + ".merge_conv3", merge_conv3);
  append_params(out, prefix + ".out_proj", out_proj);
}

template <typename T>
Tensor<T> stack_dsp(const Tensor<T>& x, const std::vector<DspBlock<T>>& blocks) {
  for (std::size_t i = 1; i < blocks.size(); ++i) {
    if (blocks[i].channels() != blocks[0].channels()) {
      throw InvalidConfig("stack_dsp: block " + std::to_string(i) + " has " +
                          std::to_string(blocks[i].channels()) + " channels, block 0 has " +
                          std::to_string(blocks[0].channels()));
    }
  }
  Tensor<T> y = x;
  for (const auto& b : blocks) y = b.forward(y);
  return y;
}

// ---------------------------------------------------------------------------

template <typename T>
LightAttention<T>::LightAttention(ParamInit& init, std::int64_t channels, int window, int heads,
                                  int n_global)
    : channels_(channels), window_(window), heads_(heads) {
  if (window < 1 || heads < 1 || n_global < 1 || channels % heads != 0) {
    throw InvalidConfig("LightAttention: bad window/heads/global-token configuration");
  }
  const std::int64_t d = channels / heads;
  qkv = make_conv<T>(init, channels, 3 * channels, 1);
  global_kv = make_conv<T>(init, channels, 2 * channels, 1);
  const Shape gs{1, heads, n_global, d};
  const auto g = init.fan_in_uniform(static_cast<std::size_t>(gs.numel()), d);
  global_tokens = Tensor<T>(gs, std::vector<T>(g.begin(), g.end()));
  global_tokens.set_requires_grad(true);
  out_proj = make_residual_conv<T>(init, channels, channels, 1);
}

template <typename T>
void LightAttention<T>::check(const Tensor<T>& x) const {
  const Shape s = x.shape();
  if (s.c != channels_) throw InvalidShape("LightAttention: channel mismatch " + s.str());
  if (s.h % window_ != 0 || s.w % window_ != 0) {
    throw InvalidShape("LightAttention: " + s.str() + " not divisible by window " +
                       std::to_string(window_));
  }
}

template <typename T>
Tensor<T> LightAttention<T>::local_attention_weights(const Tensor<T>& x) const {
  check(x);
  const auto parts = split_channels(conv2d(x, qkv), {channels_, channels_, channels_});
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(channels_ / heads_));
  const Tensor<T> q = window_partition(parts[0], window_, window_, heads_);
  const Tensor<T> k = window_partition(parts[1], window_, window_, heads_);
  return softmax_last(scale(matmul(q, k, true), inv_sqrt_d));
}

template <typename T>
Tensor<T> LightAttention<T>::local_stage(const Tensor<T>& x) const {
  check(x);
  const auto parts = split_channels(conv2d(x, qkv), {channels_, channels_, channels_});
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(channels_ / heads_));
  const Tensor<T> q = window_partition(parts[0], window_, window_, heads_);
  const Tensor<T> k = window_partition(parts[1], window_, window_, heads_);
  const Tensor<T> v = window_partition(parts[2], window_, window_, heads_);
  const Tensor<T> attn = softmax_last(scale(matmul(q, k, true), inv_sqrt_d));
  return window_merge(matmul(attn, v), x.shape(), window_, window_, heads_);
}

template <typename T>
Tensor<T> LightAttention<T>::forward(const Tensor<T>& x) const {
  const Shape s = x.shape();
  const Tensor<T> local = local_stage(x);
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(channels_ / heads_));

  // Global tokens gather from every local token...
  const auto kv = split_channels(conv2d(local, global_kv), {channels_, channels_});
  const Tensor<T> keys = window_partition(kv[0], s.h, s.w, heads_);
  const Tensor<T> vals = window_partition(kv[1], s.h, s.w, heads_);
  const Tensor<T> tokens = repeat_batch(global_tokens, s.n);
  const Tensor<T> gathered =
      matmul(softmax_last(scale(matmul(tokens, keys, true), inv_sqrt_d)), vals);

  // ...and broadcast back to each of them.
  const Tensor<T> queries = window_partition(local, s.h, s.w, heads_);
  const Tensor<T> back =
      matmul(softmax_last(scale(matmul(queries, gathered, true), inv_sqrt_d)), gathered);
  const Tensor<T> mixed = add(local, window_merge(back, s, s.h, s.w, heads_));
  return add(x, conv2d(mixed, out_proj));
}

template <typename T>
void LightAttention<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  append_params(out, prefix + ".qkv", qkv);
  append_params(out, prefix + ".global_kv", global_kv);
  out.emplace_back(prefix + ".global_tokens", global_tokens);
  append_params(out, prefix + ".out_proj", out_proj);
}

// ---------------------------------------------------------------------------

template <typename T>
Sam<T>::Sam(ParamInit& init, std::int64_t channels, std::int64_t image_channels)
    : image_head(make_residual_conv<T>(init, channels, image_channels, 1)),
      attention_head(make_conv<T>(init, image_channels, channels, 1)),
      feature_head(make_residual_conv<T>(init, channels, channels, 1)) {}

template <typename T>
SamOutput<T> Sam<T>::forward(const Tensor<T>& f, const Tensor<T>& img) const {
  if (f.shape().h != img.shape().h || f.shape().w != img.shape().w || f.shape().n != img.shape().n) {
    throw InvalidShape("Sam: features " + f.shape().str() + " vs image " + img.shape().str());
  }
  SamOutput<T> out;
  out.image = add(conv2d(f, image_head), img);
  out.attention = sigmoid(conv2d(out.image, attention_head));
  out.features = add(f, mul(conv2d(f, feature_head), out.attention));
  return out;
}

template <typename T>
void Sam<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  append_params(out, prefix + ".image_head", image_head);
  append_params(out, prefix + ".attention_head", attention_head);
  append_params(out, prefix + ".feature_head", feature_head);
}

// ---------------------------------------------------------------------------

template <typename T>
Hfeb<T>::Hfeb(ParamInit& init, const HfebConfig& cfg)
    : stem(make_conv<T>(init, 4, cfg.channels, 3)),
      blocks([&] {
        std::vector<DspBlock<T>> b;
        for (int i = 0; i < cfg.dsp_depth; ++i) b.emplace_back(init, cfg.channels);
        return b;
      }()),
      attention(init, cfg.channels, cfg.window, cfg.heads, cfg.n_global),
      sam(init, cfg.channels, 1),
      cfg_(cfg) {}

template <typename T>
HfebOutput<T> Hfeb<T>::forward(const Tensor<T>& depth_up, const Tensor<T>& color) const {
  const Shape ds = depth_up.shape(), cs = color.shape();
  if (ds.c != 1 || cs.c != 3 || ds.n != cs.n || ds.h != cs.h || ds.w != cs.w) {
    throw InvalidShape("Hfeb: depth " + ds.str() + " and color " + cs.str() + " do not match");
  }
  Tensor<T> f = conv2d(concat_channels<T>({depth_up, color}), stem);
  f = stack_dsp(f, blocks);
  f = attention.forward(f);
  SamOutput<T> head = sam.forward(f, depth_up);
  return {head.image, head.features};
}

template <typename T>
void Hfeb<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  append_params(out, prefix + ".stem", stem);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].collect(prefix + ".dsp." + std::to_string(i), out);
  }
  attention.collect(prefix + ".attention", out);
  sam.collect(prefix + ".sam", out);
}

template class DspBlock<float>;
template class DspBlock<double>;
template class LightAttention<float>;
template class LightAttention<double>;
template class Sam<float>;
template class Sam<double>;
template class Hfeb<float>;
template class Hfeb<double>;
template Tensor<float> stack_dsp(const Tensor<float>&, const std::vector<DspBlock<float>>&);
template Tensor<double> stack_dsp(const Tensor<double>&, const std::vector<DspBlock<double>>&);

}  // namespace dsrei
