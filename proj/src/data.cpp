#include "dsrei/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "dsrei/error.hpp"
#include "dsrei/image_io.hpp"

namespace dsrei {

template <typename T>
Image Image::from_tensor(const Tensor<T>& t, std::int64_t n) {
  const Shape s = t.shape();
  if (n < 0 || n >= s.n) throw InvalidParameter("Image::from_tensor: batch index out of range");
  Image img(s.c, s.h, s.w);
  const auto v = t.values();
  const auto base = static_cast<std::size_t>(n * s.c * s.h * s.w);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<double>(v[base + i]);
  return img;
}

template <typename T>
Tensor<T> stack_images(const std::vector<const Image*>& images) {
  if (images.empty()) throw InvalidShape("stack_images: no images");
  const Image& first = *images[0];
  std::vector<T> data;
  data.reserve(first.data.size() * images.size());
  for (const Image* img : images) {
    if (!img->same_shape(first)) throw InvalidShape("stack_images: shape mismatch");
    data.insert(data.end(), img->data.begin(), img->data.end());
  }
  return Tensor<T>(Shape{static_cast<std::int64_t>(images.size()), first.c, first.h, first.w},
                   std::move(data));
}

Image validity_mask(const Image& depth) {
  Image m(depth.c, depth.h, depth.w);
  for (std::size_t i = 0; i < depth.data.size(); ++i) m.data[i] = depth.data[i] > 0.0 ? 1.0 : 0.0;
  return m;
}

Image make_lr(const Image& d_gt, int s) {
  if (s < 1 || d_gt.h % s != 0 || d_gt.w % s != 0) {
    throw InvalidShape("make_lr: " + std::to_string(d_gt.h) + "x" + std::to_string(d_gt.w) +
                       " is not divisible by " + std::to_string(s));
  }
  NoGradGuard guard;
  return Image::from_tensor(resize_bicubic(d_gt.to_tensor<double>(), d_gt.h / s, d_gt.w / s));
}

Image bicubic_upsample(const Image& lr, std::int64_t h, std::int64_t w) {
  NoGradGuard guard;
  return Image::from_tensor(resize_bicubic(lr.to_tensor<double>(), h, w));
}

SamplePair make_sample(std::string name, Image d_gt, Image i_hr, int scale) {
  if (d_gt.c != 1 || i_hr.c != 3 || d_gt.h != i_hr.h || d_gt.w != i_hr.w) {
    throw InvalidShape("make_sample: depth and colour sizes disagree for " + name);
  }
  SamplePair s;
  s.name = std::move(name);
  s.d_lr = make_lr(d_gt, scale);
  s.mask = validity_mask(d_gt);
  s.d_gt = std::move(d_gt);
  s.i_hr = std::move(i_hr);
  s.scale = scale;
  return s;
}

Normalizer::Normalizer(double max_depth) : max_depth_(max_depth) {
  if (!(max_depth > 0.0) || !std::isfinite(max_depth)) {
    throw InvalidConfig("max_depth must be positive, got " + std::to_string(max_depth));
  }
}

Image Normalizer::normalize(const Image& depth) const {
  Image out = depth;
  for (double& v : out.data) v = std::clamp(v / max_depth_, 0.0, 1.0);
  return out;
}

Image Normalizer::denormalize(const Image& depth) const {
  Image out = depth;
  for (double& v : out.data) v *= max_depth_;
  return out;
}

Image crop(const Image& img, std::int64_t y, std::int64_t x, std::int64_t h, std::int64_t w) {
  if (y < 0 || x < 0 || h < 0 || w < 0 || y + h > img.h || x + w > img.w) {
    throw InvalidShape("crop: window outside the image");
  }
  Image out(img.c, h, w);
  for (std::int64_t c = 0; c < img.c; ++c)
    for (std::int64_t r = 0; r < h; ++r)
      std::copy_n(&img.data[static_cast<std::size_t>((c * img.h + y + r) * img.w + x)], w,
                  &out.data[static_cast<std::size_t>((c * h + r) * w)]);
  return out;
}

void MetricSums::add(const Image& pred, const Image& gt, const Image& mask) {
  if (!pred.same_shape(gt) || !mask.same_shape(gt)) throw InvalidShape("metrics: shape mismatch");
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    if (mask.data[i] <= 0.5) continue;
    const double e = pred.data[i] - gt.data[i];
    squared += e * e;
    absolute += std::abs(e);
    ++count;
  }
}

Metrics MetricSums::finish() const {
  if (count == 0) throw DegenerateInput("metrics: no valid pixels");
  Metrics m;
  m.count = count;
  m.mse = squared / static_cast<double>(count);
  m.mae = absolute / static_cast<double>(count);
  m.rmse = std::sqrt(m.mse);
  return m;
}

Metrics compute_metrics(const Image& pred, const Image& gt, const Image& mask) {
  MetricSums s;
  s.add(pred, gt, mask);
  return s.finish();
}

void EvalReport::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot create " + path);
  out.precision(10);
  out << "sample,pixels,mse_cm2,mae_cm,rmse_cm\n";
  for (const auto& r : rows) {
    out << r.name << ',' << r.metrics.count << ',' << r.metrics.mse << ',' << r.metrics.mae << ','
        << r.metrics.rmse << '\n';
  }
  out << "ALL," << aggregate.count << ',' << aggregate.mse << ',' << aggregate.mae << ','
      << aggregate.rmse << '\n';
  if (!out) throw IoError("failed writing " + path);
}

// ---------------------------------------------------------------------------

namespace {

// Mirror index without repeating the edge sample, valid for any offset.
std::int64_t reflect(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

template <typename T>
std::vector<T> reflect_pad(const Tensor<T>& x, std::int64_t n, std::int64_t y0, std::int64_t x0,
                           std::int64_t tile_h, std::int64_t tile_w) {
  const Shape s = x.shape();
  const auto v = x.values();
  std::vector<T> out(static_cast<std::size_t>(s.c * tile_h * tile_w));
  for (std::int64_t c = 0; c < s.c; ++c)
    for (std::int64_t r = 0; r < tile_h; ++r) {
      const std::int64_t sy = reflect(y0 + r, s.h);
      for (std::int64_t q = 0; q < tile_w; ++q) {
        const std::int64_t sx = reflect(x0 + q, s.w);
        out[static_cast<std::size_t>((c * tile_h + r) * tile_w + q)] = v[offset(s, n, c, sy, sx)];
      }
    }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> tiled_inference(const DsrEi<T>& model, const Tensor<T>& d_lr, const Tensor<T>& color,
                          int tile) {
  if (tile < 16 || tile % 16 != 0) {
    throw InvalidParameter("tiled_inference: tile must be a multiple of 16 and >= 16, got " +
                           std::to_string(tile));
  }
  const Shape ls = d_lr.shape(), hs = color.shape();
  if (ls.c != 1 || hs.c != 3 || ls.n != hs.n || ls.h < 1 || ls.w < 1 || hs.h % ls.h != 0 ||
      hs.w % ls.w != 0 || hs.h / ls.h != hs.w / ls.w) {
    throw InvalidShape("tiled_inference: inconsistent inputs " + ls.str() + " and " + hs.str());
  }
  const std::int64_t s = hs.h / ls.h;
  if (tile % s != 0) {
    throw InvalidParameter("tiled_inference: tile " + std::to_string(tile) +
                           " is not divisible by the scale " + std::to_string(s));
  }
  NoGradGuard guard;
  const std::int64_t lt = tile / s;
  Tensor<T> result(Shape{hs.n, 1, hs.h, hs.w});
  auto out = result.mutable_values();
  for (std::int64_t n = 0; n < hs.n; ++n) {
    for (std::int64_t ty = 0; ty < hs.h; ty += tile) {
      for (std::int64_t tx = 0; tx < hs.w; tx += tile) {
        const Tensor<T> lr_tile(Shape{1, 1, lt, lt},
                                reflect_pad(d_lr, n, ty / s, tx / s, lt, lt));
        const Tensor<T> rgb_tile(Shape{1, 3, tile, tile},
                                 reflect_pad(color, n, ty, tx, tile, tile));
        const Tensor<T> pred = model.forward(lr_tile, rgb_tile).d_sr;
        const auto pv = pred.values();
        const std::int64_t rows = std::min<std::int64_t>(tile, hs.h - ty);
        const std::int64_t cols = std::min<std::int64_t>(tile, hs.w - tx);
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t q = 0; q < cols; ++q)
            out[static_cast<std::size_t>(offset(result.shape(), n, 0, ty + r, tx + q))] =
                pv[static_cast<std::size_t>(r * tile + q)];
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------------

SamplePair synth_scene(std::mt19937_64& rng, const SynthOptions& opt, std::string name) {
  if (opt.size < 16 || opt.size % 16 != 0) {
    throw InvalidShape("synth_scene: size must be a positive multiple of 16");
  }
  if (!(opt.min_depth > 0.0) || !(opt.max_depth > opt.min_depth)) {
    throw InvalidConfig("synth_scene: need 0 < min_depth < max_depth");
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const std::int64_t S = opt.size;
  const double span = opt.max_depth - opt.min_depth;

  struct Region {
    double depth;
    double tint[3];
    double freq, angle, phase;
  };
  auto random_region = [&](double depth) {
    Region r{depth, {uniform(0, 1), uniform(0, 1), uniform(0, 1)}, uniform(0.3, 1.2),
             uniform(0, std::numbers::pi), uniform(0, 2 * std::numbers::pi)};
    return r;
  };

  std::vector<Region> regions{random_region(uniform(opt.min_depth + 0.5 * span, opt.max_depth))};
  std::vector<int> label(static_cast<std::size_t>(S * S), 0);
  for (int k = 0; k < opt.n_shapes; ++k) {
    const bool ellipse = unit(rng) < 0.5;
    const double cy = uniform(0, S), cx = uniform(0, S);
    const double ry = uniform(S / 10.0, S / 3.0), rx = uniform(S / 10.0, S / 3.0);
    regions.push_back(random_region(uniform(opt.min_depth, opt.max_depth)));
    const int id = static_cast<int>(regions.size()) - 1;
    for (std::int64_t y = 0; y < S; ++y) {
      for (std::int64_t x = 0; x < S; ++x) {
        const double dy = (y + 0.5 - cy) / ry, dx = (x + 0.5 - cx) / rx;
        const bool inside =
            ellipse ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        if (inside) label[static_cast<std::size_t>(y * S + x)] = id;
      }
    }
  }

  Image depth(1, S, S), color(3, S, S);
  for (std::int64_t y = 0; y < S; ++y) {
    for (std::int64_t x = 0; x < S; ++x) {
      const Region& r = regions[static_cast<std::size_t>(label[static_cast<std::size_t>(y * S + x)])];
      depth.at(0, y, x) = r.depth;
      const double shade = 1.0 - (r.depth - opt.min_depth) / span;
      const double texture =
          2.0 * opt.noise *
          std::sin(r.freq * (x * std::cos(r.angle) + y * std::sin(r.angle)) + r.phase);
      for (int c = 0; c < 3; ++c) {
        const double v =
            0.45 * r.tint[c] + 0.45 * shade + texture + uniform(-opt.noise, opt.noise);
        color.at(c, y, x) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return make_sample(std::move(name), std::move(depth), std::move(color), opt.scale);
}

std::vector<SamplePair> load_dataset(const std::string& dir, int scale) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
  std::vector<std::string> stems;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string f = entry.path().filename().string();
    for (const std::string suffix : {"_depth.png", "_depth.pfm"}) {
      if (f.size() > suffix.size() && f.compare(f.size() - suffix.size(), suffix.size(), suffix) == 0) {
        stems.push_back(f.substr(0, f.size() - suffix.size()) + "|" + suffix);
      }
    }
  }
  std::sort(stems.begin(), stems.end());
  std::vector<SamplePair> out;
  for (const auto& key : stems) {
    const auto bar = key.find('|');
    const std::string stem = key.substr(0, bar);
    const fs::path base = fs::path(dir) / stem;
    const DepthMap d = load_depth(base.string() + key.substr(bar + 1));
    Image rgb = load_color(base.string() + "_color.png");
    out.push_back(make_sample(stem, d.depth, std::move(rgb), scale));
  }
  if (out.empty()) throw IoError("no *_depth.png or *_depth.pfm samples in " + dir);
  return out;
}

void save_sample(const std::string& dir, const SamplePair& sample) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::string base = (fs::path(dir) / sample.name).string();
  save_depth_png16(base + "_depth.png", sample.d_gt);
  save_png8(base + "_color.png", sample.i_hr);
}

template Image Image::from_tensor(const Tensor<float>&, std::int64_t);
template Image Image::from_tensor(const Tensor<double>&, std::int64_t);
template Tensor<float> stack_images(const std::vector<const Image*>&);
template Tensor<double> stack_images(const std::vector<const Image*>&);
template Tensor<float> tiled_inference(const DsrEi<float>&, const Tensor<float>&,
                                       const Tensor<float>&, int);
template Tensor<double> tiled_inference(const DsrEi<double>&, const Tensor<double>&,
                                        const Tensor<double>&, int);

}  // namespace dsrei
