#include "dsrei/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numbers>
#include <numeric>

#include "dsrei/error.hpp"

namespace dsrei {

void TrainConfig::validate() const {
  if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
  if (!(base_lr >= 0) || !(min_lr >= 0)) throw InvalidConfig("learning rates must be >= 0");
  if (!(warmup_epochs >= 0) || !(total_epochs > 0)) {
    throw InvalidConfig("need warmup_epochs >= 0 and total_epochs > 0");
  }
  if (crop < 16 || crop % 16 != 0) throw InvalidConfig("crop must be a multiple of 16");
  if (!(max_depth > 0)) throw InvalidConfig("max_depth must be positive");
}

template <typename T>
Tensor<T> depth_loss(const ModelOutput<T>& out, const Tensor<T>& d_gt, const Tensor<T>& mask,
                     const LossConfig& cfg) {
  const T ld = static_cast<T>(cfg.lambda_d);
  Tensor<T> loss = masked_l1_mean(out.d_sr, d_gt, mask);
  loss = add(loss, scale(masked_l1_mean(out.d_sr_s1, d_gt, mask), ld));
  return add(loss, scale(masked_l1_mean(out.d_sr_s2, d_gt, mask), ld));
}

template <typename T>
Tensor<T> gradient_loss(const Tensor<T>& e_pred, const Tensor<T>& e_gt) {
  return masked_l1_mean(e_pred, e_gt);
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& l_d, const Tensor<T>& l_g, const LossConfig& cfg) {
  return add(l_d, scale(l_g, static_cast<T>(cfg.lambda_g)));
}

double total_loss(double l_d, double l_g, const LossConfig& cfg) { return l_d + cfg.lambda_g * l_g; }

double lr_at(double epoch, const TrainConfig& cfg) {
  if (!(epoch >= 0.0) || epoch > cfg.total_epochs) {
    throw InvalidParameter("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                           std::to_string(cfg.total_epochs) + "]");
  }
  const double warm = std::min(cfg.warmup_epochs, cfg.total_epochs);
  if (epoch < warm) return cfg.min_lr + (cfg.base_lr - cfg.min_lr) * epoch / warm;
  if (cfg.total_epochs <= warm) return cfg.base_lr;
  const double t = (epoch - warm) / (cfg.total_epochs - warm);
  return cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

template <typename T>
void adam_step(const NamedParams<T>& params, AdamState<T>& state, double lr) {
  if (state.m.empty()) {
    for (const auto& [name, p] : params) {
      state.m.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
      state.v.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
    }
  }
  if (state.m.size() != params.size()) throw InvalidParameter("adam_step: parameter list changed");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor<T>& p = params[k].second;
    if (static_cast<std::int64_t>(state.m[k].size()) != p.numel()) {
      throw InvalidParameter("adam_step: shape of " + params[k].first + " changed");
    }
    if (!p.has_grad()) continue;
    for (T g : p.grad()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw AbortStep("adam_step: non-finite gradient in " + params[k].first);
      }
    }
  }

  ++state.step;
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(state.beta1, static_cast<double>(state.step)));
  const T c2 = static_cast<T>(1.0 - std::pow(state.beta2, static_cast<double>(state.step)));
  const T eps = static_cast<T>(state.eps), rate = static_cast<T>(lr);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T> p = params[k].second;
    auto& m = state.m[k];
    auto& v = state.v[k];
    const bool has = p.has_grad();
    const auto g = has ? p.grad() : std::span<const T>();
    auto w = p.mutable_values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T gi = has ? g[i] : T(0);
      m[i] = b1 * m[i] + (T(1) - b1) * gi;
      v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
      const T mhat = m[i] / c1, vhat = v[i] / c2;
      w[i] -= rate * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

// ---------------------------------------------------------------------------

AugmentDraw draw_augment(std::mt19937_64& rng, bool square) {
  AugmentDraw d;
  d.hflip = (rng() & 1u) != 0;
  d.vflip = (rng() & 1u) != 0;
  d.rot90 = square ? static_cast<int>(rng() % 4u) : 0;
  return d;
}

Image apply_augment(const Image& img, const AugmentDraw& draw) {
  if (draw.rot90 % 2 != 0 && img.h != img.w) throw InvalidShape("augment: rotation needs a square image");
  Image cur = img;
  if (draw.hflip || draw.vflip) {
    Image out(cur.c, cur.h, cur.w);
    for (std::int64_t c = 0; c < cur.c; ++c)
      for (std::int64_t y = 0; y < cur.h; ++y)
        for (std::int64_t x = 0; x < cur.w; ++x)
          out.at(c, y, x) = cur.at(c, draw.vflip ? cur.h - 1 - y : y, draw.hflip ? cur.w - 1 - x : x);
    cur = std::move(out);
  }
  for (int r = 0; r < ((draw.rot90 % 4) + 4) % 4; ++r) {
    // Counter-clockwise quarter turn: out(y, x) = in(x, W - 1 - y).
    Image out(cur.c, cur.w, cur.h);
    for (std::int64_t c = 0; c < cur.c; ++c)
      for (std::int64_t y = 0; y < out.h; ++y)
        for (std::int64_t x = 0; x < out.w; ++x) out.at(c, y, x) = cur.at(c, x, cur.w - 1 - y);
    cur = std::move(out);
  }
  return cur;
}

SamplePair augment(const SamplePair& s, const AugmentDraw& draw) {
  SamplePair out;
  out.name = s.name;
  out.scale = s.scale;
  out.d_gt = apply_augment(s.d_gt, draw);
  out.i_hr = apply_augment(s.i_hr, draw);
  out.d_lr = apply_augment(s.d_lr, draw);
  out.mask = apply_augment(s.mask, draw);
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
Batch<T> make_batch(const std::vector<const SamplePair*>& samples, const Normalizer& norm,
                    HfTarget target) {
  if (samples.empty()) throw InvalidShape("make_batch: empty batch");
  std::vector<Image> lr, gt;
  lr.reserve(samples.size());
  gt.reserve(samples.size());
  std::vector<const Image*> lr_p, gt_p, rgb_p, mask_p;
  for (const SamplePair* s : samples) {
    lr.push_back(norm.normalize(s->d_lr));
    gt.push_back(norm.normalize(s->d_gt));
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    lr_p.push_back(&lr[i]);
    gt_p.push_back(&gt[i]);
    rgb_p.push_back(&samples[i]->i_hr);
    mask_p.push_back(&samples[i]->mask);
  }
  Batch<T> b;
  b.d_lr = stack_images<T>(lr_p);
  b.d_gt = stack_images<T>(gt_p);
  b.color = stack_images<T>(rgb_p);
  b.mask = stack_images<T>(mask_p);
  b.e_gt = extract_hf_target(b.d_gt, target);
  return b;
}

template <typename T>
Trainer<T>::Trainer(DsrEi<T>& model, TrainConfig cfg, LossConfig loss)
    : model_(model), cfg_(cfg), loss_(loss), params_(model.parameters()), rng_(cfg.seed) {
  cfg_.validate();
}

template <typename T>
StepLoss Trainer<T>::step(const Batch<T>& batch, double lr) {
  for (auto& [name, p] : params_) p.zero_grad();
  const ModelOutput<T> out = model_.forward(batch.d_lr, batch.color);
  const Tensor<T> ld = depth_loss(out, batch.d_gt, batch.mask, loss_);
  const Tensor<T> lg = gradient_loss(out.e_pred, batch.e_gt);
  const Tensor<T> total = total_loss(ld, lg, loss_);
  total.backward();
  adam_step(params_, adam_, lr);
  return {static_cast<double>(ld.item()), static_cast<double>(lg.item()),
          static_cast<double>(total.item())};
}

template <typename T>
StepLoss Trainer<T>::evaluate(const Batch<T>& batch) const {
  NoGradGuard guard;
  const ModelOutput<T> out = model_.forward(batch.d_lr, batch.color);
  const double ld = depth_loss(out, batch.d_gt, batch.mask, loss_).item();
  const double lg = gradient_loss(out.e_pred, batch.e_gt).item();
  return {ld, lg, total_loss(ld, lg, loss_)};
}

template <typename T>
SamplePair Trainer<T>::prepare(const SamplePair& s, std::int64_t crop_size) {
  const std::int64_t y = static_cast<std::int64_t>(rng_() % static_cast<std::uint64_t>(s.d_gt.h - crop_size + 1));
  const std::int64_t x = static_cast<std::int64_t>(rng_() % static_cast<std::uint64_t>(s.d_gt.w - crop_size + 1));
  SamplePair c;
  c.name = s.name;
  c.scale = s.scale;
  c.d_gt = crop(s.d_gt, y, x, crop_size, crop_size);
  c.i_hr = crop(s.i_hr, y, x, crop_size, crop_size);
  c.mask = crop(s.mask, y, x, crop_size, crop_size);
  c.d_lr = make_lr(c.d_gt, c.scale);
  if (cfg_.augment) c = augment(c, draw_augment(rng_, true));
  return c;
}

template <typename T>
EpochStats Trainer<T>::train_epoch(const std::vector<SamplePair>& data) {
  if (data.empty()) throw InvalidParameter("train_epoch: empty dataset");
  const Normalizer norm(cfg_.max_depth);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Fisher-Yates with raw engine draws keeps the order identical across
  // standard library implementations.
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng_() % i]);

  const std::size_t bs = static_cast<std::size_t>(cfg_.batch_size);
  const std::size_t steps = (data.size() + bs - 1) / bs;
  EpochStats stats;
  stats.epoch = epoch_ + 1;
  for (std::size_t k = 0; k < steps; ++k) {
    std::vector<const SamplePair*> members;
    for (std::size_t i = k * bs; i < std::min(data.size(), (k + 1) * bs); ++i) members.push_back(&data[order[i]]);
    std::int64_t side = cfg_.crop;
    for (const SamplePair* s : members) side = std::min({side, s->d_gt.h, s->d_gt.w});
    side -= side % 16;
    if (side < 16) throw InvalidShape("train_epoch: samples smaller than 16 pixels");
    std::vector<SamplePair> crops;
    crops.reserve(members.size());
    for (const SamplePair* s : members) crops.push_back(prepare(*s, side));
    std::vector<const SamplePair*> ptrs;
    for (const auto& c : crops) ptrs.push_back(&c);

    const double e = std::min(cfg_.total_epochs, epoch_ + static_cast<double>(k) / steps);
    const double lr = lr_at(e, cfg_);
    try {
      const StepLoss l = step(make_batch<T>(ptrs, norm, cfg_.hf_target), lr);
      stats.l_d += l.l_d;
      stats.l_g += l.l_g;
      stats.l_total += l.l_total;
      ++stats.steps;
    } catch (const DegenerateBatch& err) {
      std::cerr << "warning: skipped batch: " << err.what() << "\n";
      ++stats.skipped;
    } catch (const AbortStep& err) {
      std::cerr << "warning: skipped step: " << err.what() << "\n";
      ++stats.skipped;
    }
    stats.lr = lr;
  }
  if (stats.steps > 0) {
    stats.l_d /= stats.steps;
    stats.l_g /= stats.steps;
    stats.l_total /= stats.steps;
  }
  ++epoch_;
  return stats;
}

// ---------------------------------------------------------------------------

std::string log_header() { return "epoch,lr,L_d,L_g,L_total,val_mse,val_mae"; }

std::string log_row(const EpochRecord& r) {
  char buf[256];
  if (r.has_val) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", r.epoch, r.lr, r.l_d, r.l_g,
                  r.l_total, r.val_mse, r.val_mae);
  } else {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,,", r.epoch, r.lr, r.l_d, r.l_g,
                  r.l_total);
  }
  return buf;
}

template <typename T>
Image predict_depth(const DsrEi<T>& model, const SamplePair& sample, const Normalizer& norm, int tile) {
  const Tensor<T> lr = norm.normalize(sample.d_lr).template to_tensor<T>();
  const Tensor<T> rgb = sample.i_hr.to_tensor<T>();
  return norm.denormalize(Image::from_tensor(tiled_inference(model, lr, rgb, tile)));
}

template <typename T>
EvalReport evaluate_model(const DsrEi<T>& model, const std::vector<SamplePair>& samples,
                          const Normalizer& norm, int tile) {
  std::vector<Image> preds;
  preds.reserve(samples.size());
  for (const auto& s : samples) preds.push_back(predict_depth(model, s, norm, tile));
  return evaluate_predictions(samples, preds);
}

EvalReport evaluate_bicubic(const std::vector<SamplePair>& samples) {
  std::vector<Image> preds;
  preds.reserve(samples.size());
  for (const auto& s : samples) preds.push_back(bicubic_upsample(s.d_lr, s.d_gt.h, s.d_gt.w));
  return evaluate_predictions(samples, preds);
}

EvalReport evaluate_predictions(const std::vector<SamplePair>& samples,
                                const std::vector<Image>& predictions) {
  if (samples.size() != predictions.size()) throw InvalidParameter("evaluate: count mismatch");
  EvalReport report;
  MetricSums all;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    MetricSums one;
    one.add(predictions[i], samples[i].d_gt, samples[i].mask);
    all.add(predictions[i], samples[i].d_gt, samples[i].mask);
    report.rows.push_back({samples[i].name, one.finish()});
  }
  report.aggregate = all.finish();
  return report;
}

#define DSREI_INSTANTIATE(T)                                                                      \
  template Tensor<T> depth_loss(const ModelOutput<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                const LossConfig&);                                               \
  template Tensor<T> gradient_loss(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> total_loss(const Tensor<T>&, const Tensor<T>&, const LossConfig&);          \
  template void adam_step(const NamedParams<T>&, AdamState<T>&, double);                          \
  template Batch<T> make_batch(const std::vector<const SamplePair*>&, const Normalizer&, HfTarget); \
  template class Trainer<T>;                                                                      \
  template Image predict_depth(const DsrEi<T>&, const SamplePair&, const Normalizer&, int);       \
  template EvalReport evaluate_model(const DsrEi<T>&, const std::vector<SamplePair>&,            \
                                     const Normalizer&, int);

DSREI_INSTANTIATE(float)
DSREI_INSTANTIATE(double)
#undef DSREI_INSTANTIATE

}  // namespace dsrei
