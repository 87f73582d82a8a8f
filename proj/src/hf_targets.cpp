#include "dsrei/hf_targets.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <vector>

#include "dsrei/error.hpp"
#include "dsrei/frequency.hpp"

namespace dsrei {

HfTarget parse_hf_target(const std::string& name) {
  if (name == "gradient") return HfTarget::kGradient;
  if (name == "canny") return HfTarget::kCanny;
  if (name == "gaussian") return HfTarget::kGaussian;
  if (name == "dct") return HfTarget::kDct;
  if (name == "wavelet") return HfTarget::kWavelet;
  throw InvalidConfig("unknown hf_target '" + name +
                      "' (expected gradient, canny, gaussian, dct or wavelet)");
}

std::string hf_target_name(HfTarget t) {
  switch (t) {
    case HfTarget::kGradient: return "gradient";
    case HfTarget::kCanny: return "canny";
    case HfTarget::kGaussian: return "gaussian";
    case HfTarget::kDct: return "dct";
    case HfTarget::kWavelet: return "wavelet";
  }
  return "gradient";
}

namespace {

struct Plane {
  std::int64_t h = 0, w = 0;
  std::vector<double> v;

  Plane(std::int64_t h, std::int64_t w) : h(h), w(w), v(static_cast<std::size_t>(h * w), 0.0) {}
  double& operator()(std::int64_t y, std::int64_t x) { return v[static_cast<std::size_t>(y * w + x)]; }
  // Replicate padding.
  double clamped(std::int64_t y, std::int64_t x) const {
    y = std::clamp<std::int64_t>(y, 0, h - 1);
    x = std::clamp<std::int64_t>(x, 0, w - 1);
    return v[static_cast<std::size_t>(y * w + x)];
  }
};

// Runs `fn` on every (n, 0) plane of a single-channel tensor.
template <typename T, typename Fn>
Tensor<T> per_plane(const Tensor<T>& depth, Fn fn) {
  const Shape s = depth.shape();
  if (s.c != 1 || s.h < 1 || s.w < 1) throw InvalidShape("hf target: expected (n,1,H,W), got " + s.str());
  const auto src = depth.values();
  std::vector<T> out(static_cast<std::size_t>(s.numel()));
  for (std::int64_t n = 0; n < s.n; ++n) {
    Plane p(s.h, s.w);
    const auto base = static_cast<std::size_t>(n * s.h * s.w);
    for (std::size_t i = 0; i < p.v.size(); ++i) p.v[i] = static_cast<double>(src[base + i]);
    const Plane r = fn(p);
    for (std::size_t i = 0; i < r.v.size(); ++i) out[base + i] = static_cast<T>(r.v[i]);
  }
  return Tensor<T>(s, std::move(out));
}

void sobel(const Plane& p, Plane& gx, Plane& gy) {
  for (std::int64_t y = 0; y < p.h; ++y) {
    for (std::int64_t x = 0; x < p.w; ++x) {
      double sx = 0, sy = 0;
      for (int d = -1; d <= 1; ++d) {
        const double wgt = d == 0 ? 2.0 : 1.0;
        sx += wgt * (p.clamped(y + d, x + 1) - p.clamped(y + d, x - 1));
        sy += wgt * (p.clamped(y + 1, x + d) - p.clamped(y - 1, x + d));
      }
      gx(y, x) = sx / 8.0;
      gy(y, x) = sy / 8.0;
    }
  }
}

Plane gaussian_blur(const Plane& p, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[static_cast<std::size_t>(i + radius)];
  }
  for (double& x : k) x /= sum;
  Plane tmp(p.h, p.w), out(p.h, p.w);
  for (std::int64_t y = 0; y < p.h; ++y)
    for (std::int64_t x = 0; x < p.w; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[static_cast<std::size_t>(i + radius)] * p.clamped(y, x + i);
      tmp(y, x) = acc;
    }
  for (std::int64_t y = 0; y < p.h; ++y)
    for (std::int64_t x = 0; x < p.w; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[static_cast<std::size_t>(i + radius)] * tmp.clamped(y + i, x);
      out(y, x) = acc;
    }
  return out;
}

Plane gradient_plane(const Plane& p) {
  Plane gx(p.h, p.w), gy(p.h, p.w), out(p.h, p.w);
  sobel(p, gx, gy);
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = std::hypot(gx.v[i], gy.v[i]);
  return out;
}

Plane canny_plane(const Plane& p) {
  const Plane blurred = gaussian_blur(p, 1.0);
  Plane gx(p.h, p.w), gy(p.h, p.w), mag(p.h, p.w);
  sobel(blurred, gx, gy);
  double peak = 0;
  for (std::size_t i = 0; i < mag.v.size(); ++i) {
    mag.v[i] = std::hypot(gx.v[i], gy.v[i]);
    peak = std::max(peak, mag.v[i]);
  }
  Plane out(p.h, p.w);
  if (peak <= 0) return out;

  // Non-maximum suppression along the gradient direction quantized to 45 degrees.
  Plane thin(p.h, p.w);
  for (std::int64_t y = 0; y < p.h; ++y) {
    for (std::int64_t x = 0; x < p.w; ++x) {
      const double m = mag(y, x);
      if (m <= 0) continue;
      double angle = std::atan2(gy(y, x), gx(y, x)) * 180.0 / std::numbers::pi;
      if (angle < 0) angle += 180.0;
      int dy = 0, dx = 0;
      if (angle < 22.5 || angle >= 157.5) {
        dx = 1;
      } else if (angle < 67.5) {
        dy = 1;
        dx = 1;
      } else if (angle < 112.5) {
        dy = 1;
      } else {
        dy = 1;
        dx = -1;
      }
      if (m >= mag.clamped(y + dy, x + dx) && m >= mag.clamped(y - dy, x - dx)) thin(y, x) = m;
    }
  }

  const double high = 0.2 * peak, low = 0.1 * peak;
  std::deque<std::pair<std::int64_t, std::int64_t>> queue;
  for (std::int64_t y = 0; y < p.h; ++y)
    for (std::int64_t x = 0; x < p.w; ++x)
      if (thin(y, x) >= high) {
        out(y, x) = 1.0;
        queue.emplace_back(y, x);
      }
  while (!queue.empty()) {
    const auto [y, x] = queue.front();
    queue.pop_front();
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const std::int64_t ny = y + dy, nx = x + dx;
        if (ny < 0 || nx < 0 || ny >= p.h || nx >= p.w) continue;
        if (out(ny, nx) == 0.0 && thin(ny, nx) >= low) {
          out(ny, nx) = 1.0;
          queue.emplace_back(ny, nx);
        }
      }
  }
  return out;
}

Plane gaussian_highpass_plane(const Plane& p) {
  const Plane low = gaussian_blur(p, 2.0);
  Plane out(p.h, p.w);
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = std::abs(p.v[i] - low.v[i]);
  return out;
}

Plane dct_highpass_plane(const Plane& p) {
  constexpr int N = 8;
  const std::vector<double> B = dct_basis(N);
  Plane out(p.h, p.w);
  double block[N][N], coef[N][N], tmp[N][N];
  for (std::int64_t by = 0; by < p.h; by += N) {
    for (std::int64_t bx = 0; bx < p.w; bx += N) {
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) block[i][j] = p.clamped(by + i, bx + j);
      // coef = B * block * B^T
      for (int u = 0; u < N; ++u)
        for (int j = 0; j < N; ++j) {
          double acc = 0;
          for (int i = 0; i < N; ++i) acc += B[u * N + i] * block[i][j];
          tmp[u][j] = acc;
        }
      for (int u = 0; u < N; ++u)
        for (int v = 0; v < N; ++v) {
          double acc = 0;
          for (int j = 0; j < N; ++j) acc += tmp[u][j] * B[v * N + j];
          coef[u][v] = (u + v >= N / 2) ? acc : 0.0;
        }
      // block = B^T * coef * B
      for (int i = 0; i < N; ++i)
        for (int v = 0; v < N; ++v) {
          double acc = 0;
          for (int u = 0; u < N; ++u) acc += B[u * N + i] * coef[u][v];
          tmp[i][v] = acc;
        }
      for (int i = 0; i < N && by + i < p.h; ++i)
        for (int j = 0; j < N && bx + j < p.w; ++j) {
          double acc = 0;
          for (int v = 0; v < N; ++v) acc += tmp[i][v] * B[v * N + j];
          out(by + i, bx + j) = std::abs(acc);
        }
    }
  }
  return out;
}

Plane haar_plane(const Plane& p) {
  Plane out(p.h, p.w);
  for (std::int64_t y = 0; y < p.h; y += 2) {
    for (std::int64_t x = 0; x < p.w; x += 2) {
      const double a = p.clamped(y, x), b = p.clamped(y, x + 1);
      const double c = p.clamped(y + 1, x), d = p.clamped(y + 1, x + 1);
      const double lh = (a + b - c - d) / 2, hl = (a - b + c - d) / 2, hh = (a - b - c + d) / 2;
      const double m = std::sqrt(lh * lh + hl * hl + hh * hh);
      for (int i = 0; i < 2 && y + i < p.h; ++i)
        for (int j = 0; j < 2 && x + j < p.w; ++j) out(y + i, x + j) = m;
    }
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> extract_gradient_gt(const Tensor<T>& depth) {
  return per_plane(depth, gradient_plane);
}

template <typename T>
Tensor<T> extract_canny(const Tensor<T>& depth) {
  return per_plane(depth, canny_plane);
}

template <typename T>
Tensor<T> extract_gaussian_highpass(const Tensor<T>& depth) {
  return per_plane(depth, gaussian_highpass_plane);
}

template <typename T>
Tensor<T> extract_dct_highpass(const Tensor<T>& depth) {
  return per_plane(depth, dct_highpass_plane);
}

template <typename T>
Tensor<T> extract_haar_detail(const Tensor<T>& depth) {
  return per_plane(depth, haar_plane);
}

template <typename T>
Tensor<T> extract_hf_target(const Tensor<T>& depth, HfTarget kind) {
  switch (kind) {
    case HfTarget::kGradient: return extract_gradient_gt(depth);
    case HfTarget::kCanny: return extract_canny(depth);
    case HfTarget::kGaussian: return extract_gaussian_highpass(depth);
    case HfTarget::kDct: return extract_dct_highpass(depth);
    case HfTarget::kWavelet: return extract_haar_detail(depth);
  }
  throw InvalidConfig("unknown hf target");
}

#define DSREI_INSTANTIATE(T)                                            \
  template Tensor<T> extract_gradient_gt(const Tensor<T>&);             \
  template Tensor<T> extract_canny(const Tensor<T>&);                   \
  template Tensor<T> extract_gaussian_highpass(const Tensor<T>&);       \
  template Tensor<T> extract_dct_highpass(const Tensor<T>&);            \
  template Tensor<T> extract_haar_detail(const Tensor<T>&);             \
  template Tensor<T> extract_hf_target(const Tensor<T>&, HfTarget);

DSREI_INSTANTIATE(float)
DSREI_INSTANTIATE(double)
#undef DSREI_INSTANTIATE

}  // namespace dsrei
