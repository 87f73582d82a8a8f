#include "dsrei/gdrb.hpp"

#include "dsrei/error.hpp"

namespace dsrei {

ModelConfig ModelConfig::from_preset(const std::string& name) {
  ModelConfig cfg;
  cfg.preset = name;
  if (name == "tiny") {
    cfg.channels = 8;
    cfg.hfeb = HfebConfig{8, 1, 4, 2, 4};
    cfg.freq_groups = 8;
  } else if (name == "default") {
    cfg.channels = 32;
    cfg.hfeb = HfebConfig{64, 4, 8, 2, 8};
  } else if (name == "paper") {
    cfg.channels = 80;
    cfg.hfeb = HfebConfig{64, 4, 8, 2, 8};
  } else {
    throw InvalidConfig("unknown preset '" + name + "' (expected tiny, default or paper)");
  }
  return cfg;
}

void ModelConfig::validate() const {
  if (stages < 1 || stages > 3) throw InvalidConfig("stages must be 1, 2 or 3");
  if (scales != 3) throw InvalidConfig("scales is fixed at 3");
  if (channels < 1) throw InvalidConfig("channels must be positive");
  if (freq_groups < 1 || channels % freq_groups != 0) {
    throw InvalidConfig("channels (" + std::to_string(channels) +
                        ") must be divisible by freq_groups (" + std::to_string(freq_groups) + ")");
  }
  if (freq_groups > dct_block * dct_block) throw InvalidConfig("more frequency groups than DCT bins");
  if (hfeb.channels % 4 != 0 || hfeb.channels % hfeb.heads != 0) {
    throw InvalidConfig("HFEB channels must be divisible by 4 and by the head count");
  }
  if (hfeb.dsp_depth < 0 || hfeb.window < 1 || hfeb.n_global < 1) {
    throw InvalidConfig("bad HFEB depth/window/global-token settings");
  }
  if (cab_reduction < 1) throw InvalidConfig("cab_reduction must be >= 1");
}

int check_geometry(const Shape& lr, const Shape& hr) {
  if (lr.c != 1 || hr.c != 3 || lr.n != hr.n) {
    throw InvalidShape("expected depth (n,1,h,w) and colour (n,3,H,W), got " + lr.str() + " and " +
                       hr.str());
  }
  if (lr.h < 1 || lr.w < 1 || hr.h % lr.h != 0 || hr.w % lr.w != 0 ||
      hr.h / lr.h != hr.w / lr.w) {
    throw InvalidShape("inconsistent scale between " + lr.str() + " and " + hr.str());
  }
  const int s = static_cast<int>(hr.h / lr.h);
  if (s != 4 && s != 8 && s != 16) {
    throw InvalidShape("scale factor must be 4, 8 or 16, got " + std::to_string(s));
  }
  if (hr.h % 16 != 0 || hr.w % 16 != 0) {
    throw InvalidShape("HR size must be a multiple of 16, got " + hr.str());
  }
  return s;
}

// ---------------------------------------------------------------------------

template <typename T>
ResConvBlock<T>::ResConvBlock(ParamInit& init, std::int64_t channels)
    : conv1(make_conv<T>(init, channels, channels, 3)),
      conv2(make_residual_conv<T>(init, channels, channels, 3)) {}

template <typename T>
Tensor<T> ResConvBlock<T>::forward(const Tensor<T>& x) const {
  return add(x, conv2d(relu(conv2d(x, conv1)), conv2));
}

template <typename T>
void ResConvBlock<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  append_params(out, prefix + ".conv1", conv1);
  append_params(out, prefix + ".conv2", conv2);
}

template <typename T>
AntialiasDown<T>::AntialiasDown(ParamInit& init, std::int64_t in_channels)
    : conv(make_conv<T>(init, in_channels, 2 * in_channels, 3)) {}

template <typename T>
Tensor<T> AntialiasDown<T>::forward(const Tensor<T>& x) const {
  return conv2d(blur_downsample(x), conv);
}

template <typename T>
void AntialiasDown<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  append_params(out, prefix + ".conv", conv);
}

// ---------------------------------------------------------------------------

namespace {

// Brings x to (h, w): average pooling by an integer factor when shrinking,
// bilinear when growing.
template <typename T>
Tensor<T> to_size(const Tensor<T>& x, std::int64_t h, std::int64_t w) {
  const Shape s = x.shape();
  if (s.h == h && s.w == w) return x;
  if (s.h > h) {
    if (s.h % h != 0 || s.w % w != 0 || s.h / h != s.w / w) {
      throw InvalidShape("cannot pool " + s.str() + " down to " + std::to_string(h) + "x" +
                         std::to_string(w));
    }
    const int k = static_cast<int>(s.h / h);
    return avg_pool2d(x, k, k);
  }
  return resize(x, h, w, ResizeMode::kBilinear);
}

}  // namespace

template <typename T>
Affm<T>::Affm(ParamInit& init, int target, const std::array<std::int64_t, 3>& scale_channels,
              std::int64_t edge_channels)
    : target_(target), width_(scale_channels.at(static_cast<std::size_t>(target))) {
  if (target < 0 || target > 2) throw InvalidConfig("Affm: target scale must be 0, 1 or 2");
  const std::int64_t c = width_;
  for (int i = 0; i < 3; ++i) {
    if (i != target) align[i] = make_conv<T>(init, scale_channels[i], c, 1);
  }
  cat_conv1 = make_conv<T>(init, 3 * c, 3 * c, 1);
  cat_conv3 = make_conv<T>(init, 3 * c, 3 * c, 3);
  edge_conv = make_conv<T>(init, edge_channels, c, 3);
  res_conv1 = make_conv<T>(init, 2 * c, c, 3);
  res_conv2 = make_conv<T>(init, c, c, 3);
  res_skip = make_conv<T>(init, 2 * c, c, 1);
  out_proj = make_residual_conv<T>(init, c, c, 1);
}

template <typename T>
ScaleFusion<T> Affm<T>::fuse_scales(const Tensor<T>& f0, const Tensor<T>& f1,
                                    const Tensor<T>& f2) const {
  const Shape s0 = f0.shape(), s1 = f1.shape(), s2 = f2.shape();
  if (s0.h != 2 * s1.h || s0.w != 2 * s1.w || s1.h != 2 * s2.h || s1.w != 2 * s2.w) {
    throw InvalidShape("Affm: scales must be in 1 : 1/2 : 1/4 ratio, got " + s0.str() + ", " +
                       s1.str() + ", " + s2.str());
  }
  if (s0.c != width_ || s1.c != width_ || s2.c != width_) {
    throw InvalidShape("Affm: all scales must carry " + std::to_string(width_) + " channels");
  }
  const std::array<const Tensor<T>*, 3> in{&f0, &f1, &f2};
  const Shape& ts = in[static_cast<std::size_t>(target_)]->shape();
  std::array<Tensor<T>, 3> r;
  for (int i = 0; i < 3; ++i) r[i] = to_size(*in[i], ts.h, ts.w);

  const Tensor<T> cat = conv2d(conv2d(concat_channels<T>({r[0], r[1], r[2]}), cat_conv1), cat_conv3);
  const auto pis = split_channels(sigmoid(global_avg_pool(cat)), {width_, width_, width_});
  ScaleFusion<T> out;
  for (int i = 0; i < 3; ++i) out.pi[i] = pis[i];
  out.fused = add(add(mul(r[0], pis[0]), mul(r[1], pis[1])), mul(r[2], pis[2]));
  return out;
}

template <typename T>
EdgeAttention<T> Affm<T>::edge_attention(const Tensor<T>& fused, const Tensor<T>& edge) const {
  const Shape fs = fused.shape();
  const Tensor<T> e = to_size(conv2d(edge, edge_conv), fs.h, fs.w);
  const Tensor<T> cat = concat_channels<T>({e, fused});
  const Tensor<T> res =
      add(conv2d(relu(conv2d(cat, res_conv1)), res_conv2), conv2d(cat, res_skip));
  EdgeAttention<T> out;
  out.attention = sigmoid(avg_pool2d(res, 3, 1, 1));
  out.out = conv2d(mul(fused, out.attention), out_proj);
  return out;
}

template <typename T>
Tensor<T> Affm<T>::forward(const std::array<Tensor<T>, 3>& encoder, const Tensor<T>& edge) const {
  std::array<Tensor<T>, 3> a;
  for (int i = 0; i < 3; ++i) a[i] = (i == target_) ? encoder[i] : conv2d(encoder[i], align[i]);
  return edge_attention(fuse_scales(a[0], a[1], a[2]).fused, edge).out;
}

template <typename T>
void Affm<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  for (int i = 0; i < 3; ++i) {
    if (align[i].weight.defined()) append_params(out, prefix + ".align" + std::to_string(i), align[i]);
  }
  append_params(out, prefix + ".cat_conv1", cat_conv1);
  append_params(out, prefix + ".cat_conv3", cat_conv3);
  append_params(out, prefix + ".edge_conv", edge_conv);
  append_params(out, prefix + ".res_conv1", res_conv1);
  append_params(out, prefix + ".res_conv2", res_conv2);
  append_params(out, prefix + ".res_skip", res_skip);
  append_params(out, prefix + ".out_proj", out_proj);
}

// ---------------------------------------------------------------------------

template <typename T>
CrossStageFusion<T>::CrossStageFusion(ParamInit& init,
                                      const std::array<std::int64_t, 3>& scale_channels) {
  for (int s = 0; s < 3; ++s) {
    enc_conv[s] = make_residual_conv<T>(init, scale_channels[s], scale_channels[s], 1);
    dec_conv[s] = make_residual_conv<T>(init, scale_channels[s], scale_channels[s], 1);
  }
}

template <typename T>
Tensor<T> CrossStageFusion<T>::apply(int scale, const Tensor<T>& enc1, const Tensor<T>& dec1,
                                     const Tensor<T>& enc2_in) const {
  if (scale < 0 || scale > 2) throw InvalidShape("CrossStageFusion: scale must be 0, 1 or 2");
  const Shape target = enc2_in.shape();
  auto bring = [&](const Tensor<T>& x, const ConvParams<T>& p) {
    const Shape s = x.shape();
    const bool same = s.h == target.h && s.w == target.w;
    const bool half = 2 * s.h == target.h && 2 * s.w == target.w;
    if (s.n != target.n || s.c != target.c || !(same || half)) {
      throw InvalidShape("CrossStageFusion: " + s.str() + " cannot feed " + target.str());
    }
    const Tensor<T> y = conv2d(x, p);
    return same ? y : resize(y, target.h, target.w, ResizeMode::kBilinear);
  };
  return add(add(enc2_in, bring(enc1, enc_conv[scale])), bring(dec1, dec_conv[scale]));
}

template <typename T>
void CrossStageFusion<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  for (int s = 0; s < 3; ++s) {
    append_params(out, prefix + ".enc" + std::to_string(s), enc_conv[s]);
    append_params(out, prefix + ".dec" + std::to_string(s), dec_conv[s]);
  }
}

// ---------------------------------------------------------------------------

namespace {

std::array<std::int64_t, 3> widths(std::int64_t c) { return {c, 2 * c, 4 * c}; }

}  // namespace

template <typename T>
Stage<T>::Stage(ParamInit& init, const ModelConfig& cfg, int image_channels, bool fuse_previous)
    : encoder_blocks([&] {
        std::array<std::vector<ResConvBlock<T>>, 3> b;
        const auto w = widths(cfg.channels);
        for (int s = 0; s < 3; ++s)
          for (int k = 0; k < 2; ++k) b[s].emplace_back(init, w[s]);
        return b;
      }()),
      down{AntialiasDown<T>(init, cfg.channels), AntialiasDown<T>(init, 2 * cfg.channels)},
      guidance_down{AntialiasDown<T>(init, cfg.channels), AntialiasDown<T>(init, 2 * cfg.channels)},
      affm([&] {
        std::array<std::optional<Affm<T>>, 3> a;
        for (int s = 0; s < 3; ++s) {
          if (cfg.affm_scales[s]) a[s].emplace(init, s, widths(cfg.channels), cfg.hfeb.channels);
        }
        return a;
      }()),
      up_conv{make_conv<T>(init, 2 * cfg.channels, cfg.channels, 3),
              make_conv<T>(init, 4 * cfg.channels, 2 * cfg.channels, 3)},
      decoder_blocks{ResConvBlock<T>(init, cfg.channels), ResConvBlock<T>(init, 2 * cfg.channels),
                     ResConvBlock<T>(init, 4 * cfg.channels)},
      fusion([&]() -> std::optional<CrossStageFusion<T>> {
        if (!fuse_previous) return std::nullopt;
        return CrossStageFusion<T>(init, widths(cfg.channels));
      }()),
      sam(init, cfg.channels, image_channels) {}

template <typename T>
StageOutput<T> Stage<T>::forward(const Tensor<T>& depth, const Tensor<T>& guidance,
                                 const Tensor<T>& edge, const Tensor<T>& image,
                                 const StageOutput<T>* previous) const {
  if (previous && !fusion) throw InvalidConfig("Stage: built without cross-stage fusion");
  std::array<Tensor<T>, 3> g;
  g[0] = guidance;
  g[1] = guidance_down[0].forward(g[0]);
  g[2] = guidance_down[1].forward(g[1]);

  StageOutput<T> out;
  Tensor<T> h = add(depth, g[0]);
  for (int s = 0; s < 3; ++s) {
    if (s > 0) h = add(down[s - 1].forward(h), g[s]);
    for (const auto& b : encoder_blocks[s]) h = b.forward(h);
    if (previous) h = fusion->apply(s, previous->encoder[s], previous->decoder[s], h);
    out.encoder[s] = h;
  }

  std::array<Tensor<T>, 3> skip;
  for (int s = 0; s < 3; ++s) {
    skip[s] = affm[s] ? add(out.encoder[s], affm[s]->forward(out.encoder, edge)) : out.encoder[s];
  }
  out.decoder[2] = decoder_blocks[2].forward(skip[2]);
  for (int s = 1; s >= 0; --s) {
    const Shape t = skip[s].shape();
    const Tensor<T> up =
        conv2d(resize(out.decoder[s + 1], t.h, t.w, ResizeMode::kBilinear), up_conv[s]);
    out.decoder[s] = decoder_blocks[s].forward(add(up, skip[s]));
  }
  out.sam = sam.forward(out.decoder[0], image);
  return out;
}

template <typename T>
void Stage<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  for (int s = 0; s < 3; ++s)
    for (std::size_t k = 0; k < encoder_blocks[s].size(); ++k)
      encoder_blocks[s][k].collect(prefix + ".enc" + std::to_string(s) + "." + std::to_string(k), out);
  for (int s = 0; s < 2; ++s) {
    down[s].collect(prefix + ".down" + std::to_string(s), out);
    guidance_down[s].collect(prefix + ".guide_down" + std::to_string(s), out);
  }
  for (int s = 0; s < 3; ++s) {
    if (affm[s]) affm[s]->collect(prefix + ".affm" + std::to_string(s), out);
  }
  for (int s = 0; s < 2; ++s) append_params(out, prefix + ".up" + std::to_string(s), up_conv[s]);
  for (int s = 0; s < 3; ++s) decoder_blocks[s].collect(prefix + ".dec" + std::to_string(s), out);
  if (fusion) fusion->collect(prefix + ".fusion", out);
  sam.collect(prefix + ".sam", out);
}

// ---------------------------------------------------------------------------

namespace {

const ModelConfig& validated(const ModelConfig& cfg) {
  cfg.validate();
  return cfg;
}

}  // namespace

template <typename T>
DsrEi<T>::DsrEi(const ModelConfig& cfg, std::uint64_t seed)
    : DsrEi(validated(cfg), ParamInit(seed)) {}

template <typename T>
DsrEi<T>::DsrEi(const ModelConfig& cfg, ParamInit&& init)
    : hfeb(init, cfg.hfeb),
      depth_stem(make_conv<T>(init, 1, cfg.channels, 3)),
      color_stem(make_conv<T>(init, 3, cfg.channels, 3)),
      depth_cab(init, cfg.channels, cfg.cab_reduction),
      color_cab(init, cfg.channels, cfg.cab_reduction),
      depth_lcf(init, 1, cfg.channels, cfg.freq_groups, cfg.dct_block),
      color_lcf(init, 3, cfg.channels, cfg.freq_groups, cfg.dct_block),
      cfg_(cfg) {
  const bool half_first = cfg.stages >= 2;
  if (half_first) {
    half_depth_proj = make_conv<T>(init, 4 * cfg.channels, cfg.channels, 1);
    half_guidance_proj = make_conv<T>(init, 4 * cfg.channels, cfg.channels, 1);
  }
  for (int k = 0; k < cfg.stages; ++k) {
    const bool half = half_first && k == 0;
    stages.emplace_back(init, cfg, half ? 4 : 1, k > 0);
    if (k > 0) {
      const bool from_half = half_first && k == 1;
      transitions.push_back(
          make_residual_conv<T>(init, cfg.channels, from_half ? 4 * cfg.channels : cfg.channels, 1));
    }
  }
  final_head = make_residual_conv<T>(init, cfg.channels, 1, 3);
}

template <typename T>
ModelOutput<T> DsrEi<T>::forward(const Tensor<T>& depth_lr, const Tensor<T>& color) const {
  const Shape hr = color.shape();
  check_geometry(depth_lr.shape(), hr);

  const Tensor<T> depth_up = resize_bicubic(depth_lr, hr.h, hr.w);
  const HfebOutput<T> hf = hfeb.forward(depth_up, color);
  const Tensor<T> depth0 =
      add(depth_cab.forward(conv2d(depth_up, depth_stem)), depth_lcf.forward(depth_up));
  const Tensor<T> guide0 =
      add(color_cab.forward(conv2d(color, color_stem)), color_lcf.forward(color));

  ModelOutput<T> out;
  out.e_pred = hf.gradient_map;
  std::optional<StageOutput<T>> prev;
  for (int k = 0; k < cfg_.stages; ++k) {
    const bool half = first_stage_half_resolution() && k == 0;
    Tensor<T> x, g, img;
    if (half) {
      x = conv2d(pixel_unshuffle(depth0, 2), half_depth_proj);
      g = conv2d(pixel_unshuffle(guide0, 2), half_guidance_proj);
      img = pixel_unshuffle(depth_up, 2);
    } else {
      x = depth0;
      g = guide0;
      img = depth_up;
    }
    if (k > 0) {
      Tensor<T> carried = conv2d(prev->sam.features, transitions[static_cast<std::size_t>(k - 1)]);
      if (first_stage_half_resolution() && k == 1) carried = pixel_shuffle(carried, 2);
      x = add(x, carried);
    }
    StageOutput<T> cur = stages[static_cast<std::size_t>(k)].forward(
        x, g, hf.edge_features, img, prev ? &*prev : nullptr);
    if (k == 0) out.d_sr_s1 = half ? pixel_shuffle(cur.sam.image, 2) : cur.sam.image;
    prev = std::move(cur);
  }
  out.d_sr_s2 = prev->sam.image;
  out.d_sr = add(conv2d(prev->decoder[0], final_head), depth_up);
  return out;
}

template <typename T>
NamedParams<T> DsrEi<T>::parameters() const {
  NamedParams<T> out;
  hfeb.collect("hfeb", out);
  append_params(out, "depth_stem", depth_stem);
  append_params(out, "color_stem", color_stem);
  depth_cab.collect("depth_cab", out);
  color_cab.collect("color_cab", out);
  depth_lcf.collect("depth_lcf", out);
  color_lcf.collect("color_lcf", out);
  if (half_depth_proj.weight.defined()) {
    append_params(out, "half_depth_proj", half_depth_proj);
    append_params(out, "half_guidance_proj", half_guidance_proj);
  }
  for (std::size_t k = 0; k < stages.size(); ++k) {
    stages[k].collect("stage" + std::to_string(k), out);
  }
  for (std::size_t k = 0; k < transitions.size(); ++k) {
    append_params(out, "transition" + std::to_string(k), transitions[k]);
  }
  append_params(out, "final_head", final_head);
  return out;
}

template class ResConvBlock<float>;
template class ResConvBlock<double>;
template class AntialiasDown<float>;
template class AntialiasDown<double>;
template class Affm<float>;
template class Affm<double>;
template class CrossStageFusion<float>;
template class CrossStageFusion<double>;
template class Stage<float>;
template class Stage<double>;
template class DsrEi<float>;
template class DsrEi<double>;

}  // namespace dsrei
