#pragma once

// Losses, learning-rate schedule, Adam, augmentation and the training loop.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dsrei/data.hpp"
#include "dsrei/gdrb.hpp"
#include "dsrei/hf_targets.hpp"

namespace dsrei {

struct LossConfig {
  double lambda_d = 0.2;   // weight of each intermediate depth term
  double lambda_g = 0.01;  // weight of the gradient-map term
};

struct TrainConfig {
  int batch_size = 4;
  double base_lr = 1e-4;
  double warmup_epochs = 5;
  double total_epochs = 100;
  double min_lr = 1e-6;
  std::uint64_t seed = 1;
  int crop = 256;
  HfTarget hf_target = HfTarget::kGradient;
  bool augment = true;
  double max_depth = 1000.0;  // cm, depth normalization constant

  void validate() const;
};

/// m(|d_sr - gt|) + lambda_d m(|d_sr_s1 - gt|) + lambda_d m(|d_sr_s2 - gt|),
/// m the mean over mask > 0.5. Throws DegenerateBatch on an empty mask.
template <typename T>
Tensor<T> depth_loss(const ModelOutput<T>& out, const Tensor<T>& d_gt, const Tensor<T>& mask,
                     const LossConfig& cfg);
/// Mean absolute difference over every site.
template <typename T>
Tensor<T> gradient_loss(const Tensor<T>& e_pred, const Tensor<T>& e_gt);
template <typename T>
Tensor<T> total_loss(const Tensor<T>& l_d, const Tensor<T>& l_g, const LossConfig& cfg);
double total_loss(double l_d, double l_g, const LossConfig& cfg);

/// Linear warm-up from min_lr to base_lr, then cosine decay to min_lr at
/// total_epochs. Epoch is fractional.
double lr_at(double epoch, const TrainConfig& cfg);

template <typename T>
struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<T>> m, v;
};

/// One Adam update from the gradients held by `params`. Parameters without
/// a gradient count as zero gradient. A non-finite gradient throws AbortStep
/// before anything is modified.
template <typename T>
void adam_step(const NamedParams<T>& params, AdamState<T>& state, double lr);

struct AugmentDraw {
  bool hflip = false;
  bool vflip = false;
  int rot90 = 0;  // counter-clockwise quarter turns
};

/// Rotations are drawn only for square samples.
AugmentDraw draw_augment(std::mt19937_64& rng, bool square);
Image apply_augment(const Image& img, const AugmentDraw& draw);
SamplePair augment(const SamplePair& sample, const AugmentDraw& draw);

struct EpochStats {
  int epoch = 0;
  double lr = 0;  // rate used by the last step
  double l_d = 0, l_g = 0, l_total = 0;
  int steps = 0;
  int skipped = 0;
};

struct StepLoss {
  double l_d = 0, l_g = 0, l_total = 0;
};

/// Normalized network inputs and targets for one batch.
template <typename T>
struct Batch {
  Tensor<T> d_lr, color, d_gt, mask, e_gt;
};

template <typename T>
Batch<T> make_batch(const std::vector<const SamplePair*>& samples, const Normalizer& norm,
                    HfTarget target);

template <typename T>
class Trainer {
 public:
  Trainer(DsrEi<T>& model, TrainConfig cfg, LossConfig loss = {});

  /// Forward, backward and one Adam update at `lr`.
  StepLoss step(const Batch<T>& batch, double lr);
  /// Losses without an update.
  StepLoss evaluate(const Batch<T>& batch) const;

  /// One pass over shuffled, cropped and augmented samples.
  EpochStats train_epoch(const std::vector<SamplePair>& data);

  int epoch() const { return epoch_; }
  const TrainConfig& config() const { return cfg_; }
  const AdamState<T>& optimizer() const { return adam_; }

 private:
  SamplePair prepare(const SamplePair& s, std::int64_t crop);

  DsrEi<T>& model_;
  TrainConfig cfg_;
  LossConfig loss_;
  NamedParams<T> params_;
  AdamState<T> adam_;
  std::mt19937_64 rng_;
  int epoch_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0, l_d = 0, l_g = 0, l_total = 0;
  double val_mse = 0, val_mae = 0;
  bool has_val = false;
};

std::string log_header();
std::string log_row(const EpochRecord& r);

/// Predicted depth in cm for one sample via tiled inference.
template <typename T>
Image predict_depth(const DsrEi<T>& model, const SamplePair& sample, const Normalizer& norm,
                    int tile = 256);
template <typename T>
EvalReport evaluate_model(const DsrEi<T>& model, const std::vector<SamplePair>& samples,
                          const Normalizer& norm, int tile = 256);
EvalReport evaluate_bicubic(const std::vector<SamplePair>& samples);
EvalReport evaluate_predictions(const std::vector<SamplePair>& samples,
                                const std::vector<Image>& predictions);

}  // namespace dsrei
