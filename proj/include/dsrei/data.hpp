#pragma once

// Samples, LR synthesis, normalization, metrics, tiled inference and the
// synthetic scene generator.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dsrei/gdrb.hpp"

namespace dsrei {

/// Planar (c, h, w) map in 64-bit.
struct Image {
  std::int64_t c = 0, h = 0, w = 0;
  std::vector<double> data;

  Image() = default;
  Image(std::int64_t c, std::int64_t h, std::int64_t w, double fill = 0.0)
      : c(c), h(h), w(w), data(static_cast<std::size_t>(c * h * w), fill) {}

  double& at(std::int64_t ch, std::int64_t y, std::int64_t x) {
    return data[static_cast<std::size_t>((ch * h + y) * w + x)];
  }
  double at(std::int64_t ch, std::int64_t y, std::int64_t x) const {
    return data[static_cast<std::size_t>((ch * h + y) * w + x)];
  }
  bool same_shape(const Image& o) const { return c == o.c && h == o.h && w == o.w; }

  /// (1, c, h, w) tensor.
  template <typename T>
  Tensor<T> to_tensor() const {
    return Tensor<T>(Shape{1, c, h, w}, std::vector<T>(data.begin(), data.end()));
  }
  template <typename T>
  static Image from_tensor(const Tensor<T>& t, std::int64_t n = 0);
};

/// Stacks same-shaped images into an (n, c, h, w) tensor.
template <typename T>
Tensor<T> stack_images(const std::vector<const Image*>& images);

struct SamplePair {
  std::string name;
  Image d_gt;  // (1, H, W), cm
  Image i_hr;  // (3, H, W), [0, 1]
  Image d_lr;  // (1, h, w), cm
  Image mask;  // (1, H, W), 1 where d_gt > 0
  int scale = 4;
};

/// Mask of strictly positive depth.
Image validity_mask(const Image& depth);

/// Bicubic (Keys a = -0.5) downsampling by `s`; sides must divide by s.
Image make_lr(const Image& d_gt, int s);
/// Bicubic upsampling to (h, w).
Image bicubic_upsample(const Image& lr, std::int64_t h, std::int64_t w);

/// Builds a sample from HR depth and colour; LR is synthesized.
SamplePair make_sample(std::string name, Image d_gt, Image i_hr, int scale);

/// Depth scaling into [0, 1] by a dataset-wide maximum.
class Normalizer {
 public:
  explicit Normalizer(double max_depth);
  double max_depth() const { return max_depth_; }
  /// Clamps to [0, 1].
  Image normalize(const Image& depth) const;
  Image denormalize(const Image& depth) const;

 private:
  double max_depth_;
};

/// Crop of rows [y, y + h) and columns [x, x + w).
Image crop(const Image& img, std::int64_t y, std::int64_t x, std::int64_t h, std::int64_t w);

struct Metrics {
  double mse = 0, mae = 0, rmse = 0;
  std::int64_t count = 0;
};

/// Running sums over valid pixels; aggregates pool every pixel of every
/// sample before dividing.
struct MetricSums {
  double squared = 0, absolute = 0;
  std::int64_t count = 0;

  void add(const Image& pred, const Image& gt, const Image& mask);
  Metrics finish() const;
};

/// Means over pixels with mask > 0.5; cm^2, cm, cm.
Metrics compute_metrics(const Image& pred, const Image& gt, const Image& mask);

struct EvalReport {
  struct Row {
    std::string name;
    Metrics metrics;
  };
  std::vector<Row> rows;
  Metrics aggregate;

  void write_csv(const std::string& path) const;
};

/// Non-overlapping tiles of `tile` HR pixels; ragged borders are reflect
/// padded and cropped back. Runs without recording gradients.
template <typename T>
Tensor<T> tiled_inference(const DsrEi<T>& model, const Tensor<T>& d_lr, const Tensor<T>& color,
                          int tile = 256);

struct SynthOptions {
  int size = 64;
  int n_shapes = 6;
  double min_depth = 50.0;   // cm
  double max_depth = 500.0;  // cm
  double noise = 0.03;       // colour texture amplitude
  int scale = 4;
};

/// Piecewise-constant depth from random rectangles and ellipses, colour
/// shaded by depth plus per-shape tint and independent texture.
SamplePair synth_scene(std::mt19937_64& rng, const SynthOptions& opt, std::string name = "synth");

/// Directory layout: <stem>_depth.png (16-bit mm) and <stem>_color.png.
std::vector<SamplePair> load_dataset(const std::string& dir, int scale);
void save_sample(const std::string& dir, const SamplePair& sample);

}  // namespace dsrei
