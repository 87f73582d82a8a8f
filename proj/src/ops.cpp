#include "dsrei/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "dsrei/error.hpp"

namespace dsrei {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

using Index = std::int64_t;
template <typename T>
using NodeT = detail::Node<T>;

template <typename T>
void require_defined(const Tensor<T>& x, const char* op) {
  if (!x.defined()) throw InvalidShape(std::string(op) + ": undefined input tensor");
}

// Gradient buffer of input i when that input takes part in differentiation.
template <typename T>
T* grad_of(NodeT<T>& self, std::size_t i) {
  auto& in = self.inputs[i];
  return in->requires_grad ? in->grad_buffer().data() : nullptr;
}

// ---------------------------------------------------------------------------
// Gather: out[i] = in[src[i]]; backward scatter-adds. Used for every pure
// re-indexing op (shuffles, window partitioning, batch repetition).

template <typename T>
Tensor<T> gather(const Tensor<T>& x, Shape out_shape, std::vector<Index> src) {
  const auto in = x.values();
  std::vector<T> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = in[static_cast<std::size_t>(src[i])];
  return make_result<T>(out_shape, std::move(out), {x},
                        [src = std::move(src)](NodeT<T>& self) {
                          T* gx = grad_of(self, 0);
                          if (!gx) return;
                          for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += self.grad[i];
                        });
}

// ---------------------------------------------------------------------------
// Broadcasting

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  auto dim = [&](Index x, Index y) {
    if (x == y) return x;
    if (x == 1) return y;
    if (y == 1) return x;
    throw InvalidShape(std::string(op) + ": cannot broadcast " + a.str() + " with " + b.str());
  };
  return {dim(a.n, b.n), dim(a.c, b.c), dim(a.h, b.h), dim(a.w, b.w)};
}

struct Strides {
  Index n, c, h, w;
};

Strides broadcast_strides(const Shape& s, const Shape& out) {
  Strides st{s.c * s.h * s.w, s.h * s.w, s.w, 1};
  if (s.n == 1 && out.n != 1) st.n = 0;
  if (s.c == 1 && out.c != 1) st.c = 0;
  if (s.h == 1 && out.h != 1) st.h = 0;
  if (s.w == 1 && out.w != 1) st.w = 0;
  return st;
}

template <typename F>
void for_broadcast(const Shape& out, const Shape& sa, const Shape& sb, F&& f) {
  const Strides a = broadcast_strides(sa, out);
  const Strides b = broadcast_strides(sb, out);
  Index o = 0;
  for (Index n = 0; n < out.n; ++n)
    for (Index c = 0; c < out.c; ++c)
      for (Index h = 0; h < out.h; ++h) {
        Index ia = n * a.n + c * a.c + h * a.h;
        Index ib = n * b.n + c * b.c + h * b.h;
        for (Index w = 0; w < out.w; ++w, ++o, ia += a.w, ib += b.w) f(o, ia, ib);
      }
}

enum class BinaryKind { kAdd, kSub, kMul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind, const char* name) {
  require_defined(a, name);
  require_defined(b, name);
  const Shape sa = a.shape(), sb = b.shape();
  const Shape out_shape = broadcast_shape(sa, sb, name);
  const auto av = a.values(), bv = b.values();
  std::vector<T> out(static_cast<std::size_t>(out_shape.numel()));
  if (sa == sb) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = kind == BinaryKind::kAdd ? av[i] + bv[i]
               : kind == BinaryKind::kSub ? av[i] - bv[i]
                                          : av[i] * bv[i];
    }
  } else {
    for_broadcast(out_shape, sa, sb, [&](Index o, Index ia, Index ib) {
      out[o] = kind == BinaryKind::kAdd ? av[ia] + bv[ib]
               : kind == BinaryKind::kSub ? av[ia] - bv[ib]
                                          : av[ia] * bv[ib];
    });
  }
  return make_result<T>(out_shape, std::move(out), {a, b}, [=](NodeT<T>& self) {
    T* ga = grad_of(self, 0);
    T* gb = grad_of(self, 1);
    const auto& g = self.grad;
    const auto& a_val = self.inputs[0]->value;
    const auto& b_val = self.inputs[1]->value;
    for_broadcast(out_shape, sa, sb, [&](Index o, Index ia, Index ib) {
      switch (kind) {
        case BinaryKind::kAdd:
          if (ga) ga[ia] += g[o];
          if (gb) gb[ib] += g[o];
          break;
        case BinaryKind::kSub:
          if (ga) ga[ia] += g[o];
          if (gb) gb[ib] -= g[o];
          break;
        case BinaryKind::kMul:
          if (ga) ga[ia] += g[o] * b_val[ib];
          if (gb) gb[ib] += g[o] * a_val[ia];
          break;
      }
    });
  });
}

// ---------------------------------------------------------------------------
// Separable resampling. Each output index along an axis reads `taps` input
// indices with weights; the value is formed around a pivot tap as
// x_p + sum_{a != p} w_a (x_a - x_p), which reproduces constants exactly.

struct AxisTaps {
  int taps = 0;
  std::vector<Index> index;    // out_len * taps
  std::vector<double> weight;  // out_len * taps
  std::vector<int> pivot;      // out_len
};

AxisTaps make_axis_taps(Index in_len, Index out_len, int kind /*0 nearest,1 linear,2 cubic*/) {
  AxisTaps t;
  const double ratio = static_cast<double>(in_len) / static_cast<double>(out_len);
  t.taps = kind == 0 ? 1 : kind == 1 ? 2 : 4;
  t.index.resize(static_cast<std::size_t>(out_len * t.taps));
  t.weight.resize(t.index.size());
  t.pivot.resize(static_cast<std::size_t>(out_len));
  auto clamp = [&](Index i) { return std::clamp<Index>(i, 0, in_len - 1); };
  for (Index o = 0; o < out_len; ++o) {
    const std::size_t base = static_cast<std::size_t>(o * t.taps);
    if (kind == 0) {
      t.index[base] = clamp(static_cast<Index>(std::floor((o + 0.5) * ratio)));
      t.weight[base] = 1.0;
      t.pivot[o] = 0;
    } else if (kind == 1) {
      double src = (o + 0.5) * ratio - 0.5;
      if (src < 0) src = 0;
      const Index i0 = clamp(static_cast<Index>(std::floor(src)));
      const double l = src - static_cast<double>(i0);
      t.index[base] = i0;
      t.index[base + 1] = clamp(i0 + 1);
      t.weight[base] = 1.0 - l;
      t.weight[base + 1] = l;
      t.pivot[o] = l > 0.5 ? 1 : 0;
    } else {
      const double src = (o + 0.5) * ratio - 0.5;
      const double fl = std::floor(src);
      const double f = src - fl;
      const Index i0 = static_cast<Index>(fl);
      const double w[4] = {keys_cubic(f + 1.0), keys_cubic(f), keys_cubic(1.0 - f),
                           keys_cubic(2.0 - f)};
      for (int a = 0; a < 4; ++a) {
        t.index[base + a] = clamp(i0 - 1 + a);
        t.weight[base + a] = w[a];
      }
      t.pivot[o] = f > 0.5 ? 2 : 1;
    }
  }
  return t;
}

// Resamples along the last axis (axis=3) or the row axis (axis=2).
template <typename T>
std::vector<T> apply_axis(const std::vector<T>& in, const Shape& s, const AxisTaps& taps,
                          Index out_len, int axis, Shape* out_shape) {
  Shape o = s;
  if (axis == 3) o.w = out_len; else o.h = out_len;
  *out_shape = o;
  std::vector<T> out(static_cast<std::size_t>(o.numel()));
  const Index planes = s.n * s.c;
  for (Index p = 0; p < planes; ++p) {
    const T* src = in.data() + p * s.h * s.w;
    T* dst = out.data() + p * o.h * o.w;
    if (axis == 3) {
      for (Index y = 0; y < s.h; ++y) {
        for (Index x = 0; x < out_len; ++x) {
          const std::size_t base = static_cast<std::size_t>(x * taps.taps);
          const int pv = taps.pivot[x];
          const T xp = src[y * s.w + taps.index[base + pv]];
          T acc = xp;
          for (int a = 0; a < taps.taps; ++a) {
            if (a == pv) continue;
            acc += static_cast<T>(taps.weight[base + a]) * (src[y * s.w + taps.index[base + a]] - xp);
          }
          dst[y * o.w + x] = acc;
        }
      }
    } else {
      for (Index y = 0; y < out_len; ++y) {
        const std::size_t base = static_cast<std::size_t>(y * taps.taps);
        const int pv = taps.pivot[y];
        const T* rp = src + taps.index[base + pv] * s.w;
        for (Index x = 0; x < s.w; ++x) {
          const T xp = rp[x];
          T acc = xp;
          for (int a = 0; a < taps.taps; ++a) {
            if (a == pv) continue;
            acc += static_cast<T>(taps.weight[base + a]) * (src[taps.index[base + a] * s.w + x] - xp);
          }
          dst[y * o.w + x] = acc;
        }
      }
    }
  }
  return out;
}

// Adjoint of apply_axis: accumulates into gin (shape s) from gout.
template <typename T>
void apply_axis_adjoint(const std::vector<T>& gout, const Shape& s, const AxisTaps& taps,
                        Index out_len, int axis, std::vector<T>& gin) {
  const Index ow = axis == 3 ? out_len : s.w;
  const Index oh = axis == 3 ? s.h : out_len;
  const Index planes = s.n * s.c;
  for (Index p = 0; p < planes; ++p) {
    T* gsrc = gin.data() + p * s.h * s.w;
    const T* g = gout.data() + p * oh * ow;
    if (axis == 3) {
      for (Index y = 0; y < s.h; ++y) {
        for (Index x = 0; x < out_len; ++x) {
          const std::size_t base = static_cast<std::size_t>(x * taps.taps);
          const int pv = taps.pivot[x];
          const T gv = g[y * ow + x];
          T pivot_w = T(1);
          for (int a = 0; a < taps.taps; ++a) {
            if (a == pv) continue;
            const T wa = static_cast<T>(taps.weight[base + a]);
            gsrc[y * s.w + taps.index[base + a]] += wa * gv;
            pivot_w -= wa;
          }
          gsrc[y * s.w + taps.index[base + pv]] += pivot_w * gv;
        }
      }
    } else {
      for (Index y = 0; y < out_len; ++y) {
        const std::size_t base = static_cast<std::size_t>(y * taps.taps);
        const int pv = taps.pivot[y];
        T pivot_w = T(1);
        for (int a = 0; a < taps.taps; ++a) {
          if (a == pv) continue;
          const T wa = static_cast<T>(taps.weight[base + a]);
          T* row = gsrc + taps.index[base + a] * s.w;
          for (Index x = 0; x < s.w; ++x) row[x] += wa * g[y * ow + x];
          pivot_w -= wa;
        }
        T* prow = gsrc + taps.index[base + pv] * s.w;
        for (Index x = 0; x < s.w; ++x) prow[x] += pivot_w * g[y * ow + x];
      }
    }
  }
}

template <typename T>
Tensor<T> separable_resample(const Tensor<T>& x, Index out_h, Index out_w, int kind) {
  require_defined(x, "resize");
  if (out_h < 1 || out_w < 1) throw InvalidShape("resize: output size must be >= 1");
  const Shape s = x.shape();
  if (s.h < 1 || s.w < 1) throw InvalidShape("resize: empty input " + s.str());
  auto taps_w = std::make_shared<AxisTaps>(make_axis_taps(s.w, out_w, kind));
  auto taps_h = std::make_shared<AxisTaps>(make_axis_taps(s.h, out_h, kind));
  std::vector<T> in(x.values().begin(), x.values().end());
  Shape mid, out_shape;
  std::vector<T> tmp = apply_axis(in, s, *taps_w, out_w, 3, &mid);
  std::vector<T> out = apply_axis(tmp, mid, *taps_h, out_h, 2, &out_shape);
  return make_result<T>(out_shape, std::move(out), {x}, [=](NodeT<T>& self) {
    T* gx = grad_of(self, 0);
    if (!gx) return;
    std::vector<T> gmid(static_cast<std::size_t>(mid.numel()), T(0));
    apply_axis_adjoint(self.grad, mid, *taps_h, out_h, 2, gmid);
    std::vector<T> gin(static_cast<std::size_t>(s.numel()), T(0));
    apply_axis_adjoint(gmid, s, *taps_w, out_w, 3, gin);
    for (std::size_t i = 0; i < gin.size(); ++i) gx[i] += gin[i];
  });
}

// ---------------------------------------------------------------------------
// im2col helpers (single image).

template <typename T>
void im2col(const T* x, Index C, Index H, Index W, Index k, Index stride, Index pad, Index Ho,
            Index Wo, T* col) {
  for (Index c = 0; c < C; ++c)
    for (Index ky = 0; ky < k; ++ky)
      for (Index kx = 0; kx < k; ++kx) {
        T* row = col + ((c * k + ky) * k + kx) * Ho * Wo;
        for (Index oy = 0; oy < Ho; ++oy) {
          const Index iy = oy * stride - pad + ky;
          T* dst = row + oy * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + Wo, T(0));
            continue;
          }
          const T* src = x + (c * H + iy) * W;
          for (Index ox = 0; ox < Wo; ++ox) {
            const Index ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const T* col, Index C, Index H, Index W, Index k, Index stride, Index pad, Index Ho,
            Index Wo, T* x) {
  for (Index c = 0; c < C; ++c)
    for (Index ky = 0; ky < k; ++ky)
      for (Index kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * k + ky) * k + kx) * Ho * Wo;
        for (Index oy = 0; oy < Ho; ++oy) {
          const Index iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          T* dst = x + (c * H + iy) * W;
          const T* src = row + oy * Wo;
          for (Index ox = 0; ox < Wo; ++ox) {
            const Index ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W) dst[ix] += src[ox];
          }
        }
      }
}

template <typename T>
Tensor<T> unary(const Tensor<T>& x, auto&& f, auto&& df_from_xy) {
  const auto v = x.values();
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = f(v[i]);
  return make_result<T>(x.shape(), std::move(out), {x}, [df_from_xy](NodeT<T>& self) {
    T* gx = grad_of(self, 0);
    if (!gx) return;
    const auto& xv = self.inputs[0]->value;
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += self.grad[i] * df_from_xy(xv[i], self.value[i]);
  });
}

}  // namespace

double keys_cubic(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::kAdd, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::kSub, "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::kMul, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  require_defined(x, "scale");
  return unary(x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  require_defined(x, "sigmoid");
  return unary(
      x,
      [](T v) {
        // Split by sign so exp never overflows.
        if (v >= 0) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  require_defined(x, "relu");
  return unary(x, [](T v) { return v > 0 ? v : T(0); }, [](T v, T) { return v > 0 ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  require_defined(x, "leaky_relu");
  return unary(
      x, [slope](T v) { return v > 0 ? v : v * slope; },
      [slope](T v, T) { return v > 0 ? T(1) : slope; });
}

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  switch (kind) {
    case Activation::kSigmoid: return sigmoid(x);
    case Activation::kRelu: return relu(x);
    case Activation::kLeakyRelu: return leaky_relu(x, T(0.2));
  }
  throw InvalidParameter("unknown activation");
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& p) {
  require_defined(x, "conv2d");
  require_defined(p.weight, "conv2d");
  const Shape s = x.shape();
  const Shape ws = p.weight.shape();
  if (ws.c != s.c) {
    throw InvalidShape("conv2d: input has " + std::to_string(s.c) + " channels, kernel expects " +
                       std::to_string(ws.c));
  }
  if (ws.h != ws.w) throw InvalidShape("conv2d: only square kernels are supported");
  if (p.stride < 1 || p.padding < 0) throw InvalidParameter("conv2d: bad stride/padding");
  const bool has_bias = p.bias.defined();
  if (has_bias && p.bias.numel() != ws.n) throw InvalidShape("conv2d: bias size mismatch");
  for (T v : p.weight.values())
    if (!std::isfinite(v)) throw InvalidParameter("conv2d: non-finite weight");
  if (has_bias)
    for (T v : p.bias.values())
      if (!std::isfinite(v)) throw InvalidParameter("conv2d: non-finite bias");

  const Index k = ws.h, stride = p.stride, pad = p.padding;
  if (s.h + 2 * pad < k || s.w + 2 * pad < k) {
    throw InvalidShape("conv2d: padded input " + s.str() + " smaller than kernel");
  }
  const Index Ho = (s.h + 2 * pad - k) / stride + 1;
  const Index Wo = (s.w + 2 * pad - k) / stride + 1;
  const Shape out_shape{s.n, ws.n, Ho, Wo};
  const Index K = s.c * k * k;
  const Index P = Ho * Wo;
  const bool direct = (k == 1 && stride == 1 && pad == 0);

  std::vector<T> out(static_cast<std::size_t>(out_shape.numel()));
  std::vector<T> col(direct ? 0 : static_cast<std::size_t>(K * P));
  const ConstMap<T> wmat(p.weight.values().data(), ws.n, K);
  const auto xv = x.values();
  for (Index n = 0; n < s.n; ++n) {
    const T* xn = xv.data() + n * s.c * s.h * s.w;
    const T* cp = xn;
    if (!direct) {
      im2col(xn, s.c, s.h, s.w, k, stride, pad, Ho, Wo, col.data());
      cp = col.data();
    }
    MutMap<T> on(out.data() + n * ws.n * P, ws.n, P);
    on.noalias() = wmat * ConstMap<T>(cp, K, P);
    if (has_bias) {
      const auto bv = p.bias.values();
      for (Index o = 0; o < ws.n; ++o) on.row(o).array() += bv[o];
    }
  }

  std::vector<Tensor<T>> inputs{x, p.weight};
  if (has_bias) inputs.push_back(p.bias);
  return make_result<T>(out_shape, std::move(out), inputs, [=](NodeT<T>& self) {
    T* gx = grad_of(self, 0);
    T* gw = grad_of(self, 1);
    T* gb = has_bias ? grad_of(self, 2) : nullptr;
    const auto& xval = self.inputs[0]->value;
    const auto& wval = self.inputs[1]->value;
    const ConstMap<T> W(wval.data(), ws.n, K);
    std::vector<T> colb(direct ? 0 : static_cast<std::size_t>(K * P));
    std::vector<T> gcol(static_cast<std::size_t>(K * P));
    for (Index n = 0; n < s.n; ++n) {
      const ConstMap<T> g(self.grad.data() + n * ws.n * P, ws.n, P);
      if (gb) {
        for (Index o = 0; o < ws.n; ++o) gb[o] += g.row(o).sum();
      }
      const T* xn = xval.data() + n * s.c * s.h * s.w;
      if (gw) {
        const T* cp = xn;
        if (!direct) {
          im2col(xn, s.c, s.h, s.w, k, stride, pad, Ho, Wo, colb.data());
          cp = colb.data();
        }
        MutMap<T> GW(gw, ws.n, K);
        GW.noalias() += g * ConstMap<T>(cp, K, P).transpose();
      }
      if (gx) {
        T* gxn = gx + n * s.c * s.h * s.w;
        if (direct) {
          MutMap<T> GX(gxn, K, P);
          GX.noalias() += W.transpose() * g;
        } else {
          MutMap<T> GC(gcol.data(), K, P);
          GC.noalias() = W.transpose() * g;
          col2im(gcol.data(), s.c, s.h, s.w, k, stride, pad, Ho, Wo, gxn);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, int k, int stride, int padding) {
  require_defined(x, "avg_pool2d");
  if (k < 1 || stride < 1 || padding < 0) throw InvalidParameter("avg_pool2d: bad window");
  const Shape s = x.shape();
  if (s.h + 2 * padding < k || s.w + 2 * padding < k) {
    throw InvalidShape("avg_pool2d: window " + std::to_string(k) + " larger than input " + s.str());
  }
  const Index Ho = (s.h + 2 * padding - k) / stride + 1;
  const Index Wo = (s.w + 2 * padding - k) / stride + 1;
  const Shape out_shape{s.n, s.c, Ho, Wo};
  // Window bounds per output row/col, clipped to the image.
  auto bounds = [=](Index o, Index len) {
    const Index lo = o * stride - padding;
    return std::pair<Index, Index>{std::max<Index>(lo, 0), std::min<Index>(lo + k, len)};
  };
  std::vector<T> out(static_cast<std::size_t>(out_shape.numel()));
  const auto xv = x.values();
  for (Index p = 0; p < s.n * s.c; ++p) {
    const T* src = xv.data() + p * s.h * s.w;
    for (Index oy = 0; oy < Ho; ++oy) {
      const auto [y0, y1] = bounds(oy, s.h);
      for (Index ox = 0; ox < Wo; ++ox) {
        const auto [x0, x1] = bounds(ox, s.w);
        T acc = T(0);
        for (Index y = y0; y < y1; ++y)
          for (Index xx = x0; xx < x1; ++xx) acc += src[y * s.w + xx];
        out[static_cast<std::size_t>((p * Ho + oy) * Wo + ox)] =
            acc / static_cast<T>((y1 - y0) * (x1 - x0));
      }
    }
  }
  return make_result<T>(out_shape, std::move(out), {x}, [=](NodeT<T>& self) {
    T* gx = grad_of(self, 0);
    if (!gx) return;
    for (Index p = 0; p < s.n * s.c; ++p) {
      T* dst = gx + p * s.h * s.w;
      for (Index oy = 0; oy < Ho; ++oy) {
        const auto [y0, y1] = bounds(oy, s.h);
        for (Index ox = 0; ox < Wo; ++ox) {
          const auto [x0, x1] = bounds(ox, s.w);
          const T g = self.grad[static_cast<std::size_t>((p * Ho + oy) * Wo + ox)] /
                      static_cast<T>((y1 - y0) * (x1 - x0));
          for (Index y = y0; y < y1; ++y)
            for (Index xx = x0; xx < x1; ++xx) dst[y * s.w + xx] += g;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_defined(x, "global_avg_pool");
  const Shape s = x.shape();
  if (s.h < 1 || s.w < 1 || s.n < 1 || s.c < 1) {
    throw InvalidShape("global_avg_pool: empty tensor " + s.str());
  }
  const Index hw = s.h * s.w;
  std::vector<T> out(static_cast<std::size_t>(s.n * s.c));
  const auto xv = x.values();
  for (Index p = 0; p < s.n * s.c; ++p) {
    T acc = T(0);
    for (Index i = 0; i < hw; ++i) acc += xv[p * hw + i];
    out[p] = acc / static_cast<T>(hw);
  }
  return make_result<T>({s.n, s.c, 1, 1}, std::move(out), {x}, [=](NodeT<T>& self) {
    T* gx = grad_of(self, 0);
    if (!gx) return;
    for (Index p = 0; p < s.n * s.c; ++p) {
      const T g = self.grad[p] / static_cast<T>(hw);
      for (Index i = 0; i < hw; ++i) gx[p * hw + i] += g;
    }
  });
}

template <typename T>
Tensor<T> resize(const Tensor<T>& x, Index out_h, Index out_w, ResizeMode mode) {
  return separable_resample(x, out_h, out_w, mode == ResizeMode::kNearest ? 0 : 1);
}

template <typename T>
Tensor<T> resize_bicubic(const Tensor<T>& x, Index out_h, Index out_w) {
  return separable_resample(x, out_h, out_w, 2);
}

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int r) {
  require_defined(x, "pixel_shuffle");
  const Shape s = x.shape();
  if (r < 1 || s.c % (Index(r) * r) != 0) {
    throw InvalidShape("pixel_shuffle: channels " + std::to_string(s.c) +
                       " not divisible by r^2 = " + std::to_string(r * r));
  }
  const Shape o{s.n, s.c / (r * r), s.h * r, s.w * r};
  std::vector<Index> src(static_cast<std::size_t>(o.numel()));
  Index i = 0;
  for (Index n = 0; n < o.n; ++n)
    for (Index c = 0; c < o.c; ++c)
      for (Index y = 0; y < o.h; ++y)
        for (Index xx = 0; xx < o.w; ++xx)
          src[i++] = offset(s, n, c * r * r + (y % r) * r + (xx % r), y / r, xx / r);
  return gather(x, o, std::move(src));
}

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r) {
  require_defined(x, "pixel_unshuffle");
  const Shape s = x.shape();
  if (r < 1 || s.h % r != 0 || s.w % r != 0) {
    throw InvalidShape("pixel_unshuffle: spatial size " + s.str() + " not divisible by " +
                       std::to_string(r));
  }
  const Shape o{s.n, s.c * r * r, s.h / r, s.w / r};
  std::vector<Index> src(static_cast<std::size_t>(o.numel()));
  Index i = 0;
  for (Index n = 0; n < o.n; ++n)
    for (Index c = 0; c < o.c; ++c) {
      const Index base = c / (r * r), sub = c % (r * r);
      const Index dy = sub / r, dx = sub % r;
      for (Index y = 0; y < o.h; ++y)
        for (Index xx = 0; xx < o.w; ++xx) src[i++] = offset(s, n, base, y * r + dy, xx * r + dx);
    }
  return gather(x, o, std::move(src));
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p) {
  require_defined(x, "linear");
  const Shape s = x.shape();
  const Shape ws = p.weight.shape();
  const Index F = s.c * s.h * s.w;
  if (ws.c * ws.h * ws.w != F) {
    throw InvalidShape("linear: input features " + std::to_string(F) + " vs weight " + ws.str());
  }
  const bool has_bias = p.bias.defined();
  if (has_bias && p.bias.numel() != ws.n) throw InvalidShape("linear: bias size mismatch");
  const Index O = ws.n;
  std::vector<T> out(static_cast<std::size_t>(s.n * O));
  {
    MutMap<T> Y(out.data(), s.n, O);
    Y.noalias() = ConstMap<T>(x.values().data(), s.n, F) *
                  ConstMap<T>(p.weight.values().data(), O, F).transpose();
    if (has_bias) {
      const auto bv = p.bias.values();
      for (Index n = 0; n < s.n; ++n)
        for (Index o = 0; o < O; ++o) Y(n, o) += bv[o];
    }
  }
  std::vector<Tensor<T>> inputs{x, p.weight};
  if (has_bias) inputs.push_back(p.bias);
  return make_result<T>({s.n, O, 1, 1}, std::move(out), inputs, [=](NodeT<T>& self) {
    const ConstMap<T> G(self.grad.data(), s.n, O);
    if (T* gx = grad_of(self, 0)) {
      MutMap<T>(gx, s.n, F).noalias() += G * ConstMap<T>(self.inputs[1]->value.data(), O, F);
    }
    if (T* gw = grad_of(self, 1)) {
      MutMap<T>(gw, O, F).noalias() +=
          G.transpose() * ConstMap<T>(self.inputs[0]->value.data(), s.n, F);
    }
    if (has_bias) {
      if (T* gb = grad_of(self, 2)) {
        for (Index n = 0; n < s.n; ++n)
          for (Index o = 0; o < O; ++o) gb[o] += G(n, o);
      }
    }
  });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw InvalidShape("concat_channels: no inputs");
  for (const auto& t : xs) require_defined(t, "concat_channels");
  const Shape s0 = xs.front().shape();
  Index C = 0;
  std::vector<Index> channels;
  for (const auto& t : xs) {
    const Shape s = t.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
      throw InvalidShape("concat_channels: " + s.str() + " incompatible with " + s0.str());
    }
    channels.push_back(s.c);
    C += s.c;
  }
  const Shape o{s0.n, C, s0.h, s0.w};
  const Index hw = s0.h * s0.w;
  std::vector<T> out(static_cast<std::size_t>(o.numel()));
  for (Index n = 0; n < o.n; ++n) {
    Index c0 = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const auto v = xs[k].values();
      std::copy_n(v.data() + n * channels[k] * hw, channels[k] * hw,
                  out.data() + (n * C + c0) * hw);
      c0 += channels[k];
    }
  }
  return make_result<T>(o, std::move(out), xs, [=](NodeT<T>& self) {
    for (Index n = 0; n < o.n; ++n) {
      Index c0 = 0;
      for (std::size_t k = 0; k < channels.size(); ++k) {
        if (T* g = grad_of(self, k)) {
          const T* src = self.grad.data() + (n * C + c0) * hw;
          T* dst = g + n * channels[k] * hw;
          for (Index i = 0; i < channels[k] * hw; ++i) dst[i] += src[i];
        }
        c0 += channels[k];
      }
    }
  });
}

template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x, const std::vector<Index>& sizes) {
  require_defined(x, "split_channels");
  const Shape s = x.shape();
  Index total = 0;
  for (Index c : sizes) {
    if (c < 0) throw InvalidShape("split_channels: negative size");
    total += c;
  }
  if (total != s.c) {
    throw InvalidShape("split_channels: sizes sum to " + std::to_string(total) + ", tensor has " +
                       std::to_string(s.c) + " channels");
  }
  std::vector<Tensor<T>> parts;
  Index c0 = 0;
  const Index hw = s.h * s.w;
  for (Index c : sizes) {
    const Shape o{s.n, c, s.h, s.w};
    std::vector<Index> src(static_cast<std::size_t>(o.numel()));
    Index i = 0;
    for (Index n = 0; n < s.n; ++n)
      for (Index k = 0; k < c * hw; ++k) src[i++] = (n * s.c + c0) * hw + k;
    parts.push_back(gather(x, o, std::move(src)));
    c0 += c;
  }
  return parts;
}

template <typename T>
Tensor<T> blur_downsample(const Tensor<T>& x) {
  require_defined(x, "blur_downsample");
  const Shape s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0 || s.h < 2 || s.w < 2) {
    throw InvalidShape("blur_downsample: spatial dims must be even, got " + s.str());
  }
  // [1,2,1]/4 about the centre tap, clamped neighbours, stride 2.
  auto taps = [](Index in_len) {
    AxisTaps t;
    const Index out_len = in_len / 2;
    t.taps = 3;
    t.index.resize(static_cast<std::size_t>(out_len * 3));
    t.weight.resize(t.index.size());
    t.pivot.assign(static_cast<std::size_t>(out_len), 1);
    for (Index o = 0; o < out_len; ++o) {
      const Index c = 2 * o;
      t.index[o * 3] = std::max<Index>(c - 1, 0);
      t.index[o * 3 + 1] = c;
      t.index[o * 3 + 2] = std::min<Index>(c + 1, in_len - 1);
      t.weight[o * 3] = 0.25;
      t.weight[o * 3 + 1] = 0.5;
      t.weight[o * 3 + 2] = 0.25;
    }
    return t;
  };
  auto taps_w = std::make_shared<AxisTaps>(taps(s.w));
  auto taps_h = std::make_shared<AxisTaps>(taps(s.h));
  const Index out_h = s.h / 2, out_w = s.w / 2;
  std::vector<T> in(x.values().begin(), x.values().end());
  Shape mid, out_shape;
  std::vector<T> tmp = apply_axis(in, s, *taps_w, out_w, 3, &mid);
  std::vector<T> out = apply_axis(tmp, mid, *taps_h, out_h, 2, &out_shape);
  return make_result<T>(out_shape, std::move(out), {x}, [=](NodeT<T>& self) {
    T* gx = grad_of(self, 0);
    if (!gx) return;
    std::vector<T> gmid(static_cast<std::size_t>(mid.numel()), T(0));
    apply_axis_adjoint(self.grad, mid, *taps_h, out_h, 2, gmid);
    std::vector<T> gin(static_cast<std::size_t>(s.numel()), T(0));
    apply_axis_adjoint(gmid, s, *taps_w, out_w, 3, gin);
    for (std::size_t i = 0; i < gin.size(); ++i) gx[i] += gin[i];
  });
}

template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, Index wh, Index ww, int heads) {
  require_defined(x, "window_partition");
  const Shape s = x.shape();
  if (wh < 1 || ww < 1 || s.h % wh != 0 || s.w % ww != 0) {
    throw InvalidShape("window_partition: " + s.str() + " not divisible into " +
                       std::to_string(wh) + "x" + std::to_string(ww) + " windows");
  }
  if (heads < 1 || s.c % heads != 0) {
    throw InvalidShape("window_partition: channels not divisible by heads");
  }
  const Index nwy = s.h / wh, nwx = s.w / ww, d = s.c / heads;
  const Shape o{s.n * nwy * nwx, heads, wh * ww, d};
  std::vector<Index> src(static_cast<std::size_t>(o.numel()));
  Index i = 0;
  for (Index n = 0; n < s.n; ++n)
    for (Index wy = 0; wy < nwy; ++wy)
      for (Index wx = 0; wx < nwx; ++wx)
        for (Index hd = 0; hd < heads; ++hd)
          for (Index ty = 0; ty < wh; ++ty)
            for (Index tx = 0; tx < ww; ++tx)
              for (Index k = 0; k < d; ++k)
                src[i++] = offset(s, n, hd * d + k, wy * wh + ty, wx * ww + tx);
  return gather(x, o, std::move(src));
}

template <typename T>
Tensor<T> window_merge(const Tensor<T>& t, const Shape& image, Index wh, Index ww, int heads) {
  require_defined(t, "window_merge");
  if (wh < 1 || ww < 1 || image.h % wh != 0 || image.w % ww != 0 || heads < 1 ||
      image.c % heads != 0) {
    throw InvalidShape("window_merge: incompatible window geometry for " + image.str());
  }
  const Index nwy = image.h / wh, nwx = image.w / ww, d = image.c / heads;
  const Shape expect{image.n * nwy * nwx, heads, wh * ww, d};
  if (t.shape() != expect) {
    throw InvalidShape("window_merge: got " + t.shape().str() + ", expected " + expect.str());
  }
  std::vector<Index> src(static_cast<std::size_t>(image.numel()));
  for (Index n = 0; n < image.n; ++n)
    for (Index c = 0; c < image.c; ++c)
      for (Index y = 0; y < image.h; ++y)
        for (Index xx = 0; xx < image.w; ++xx) {
          const Index b = (n * nwy + y / wh) * nwx + xx / ww;
          const Index tok = (y % wh) * ww + xx % ww;
          src[offset(image, n, c, y, xx)] = offset(expect, b, c / d, tok, c % d);
        }
  return gather(t, image, std::move(src));
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.n != sb.n || sa.c != sb.c) {
    throw InvalidShape("matmul: batch dims differ " + sa.str() + " vs " + sb.str());
  }
  const Index M = sa.h, K = sa.w;
  const Index Kb = transpose_b ? sb.w : sb.h;
  const Index N = transpose_b ? sb.h : sb.w;
  if (K != Kb) throw InvalidShape("matmul: inner dims differ " + sa.str() + " vs " + sb.str());
  const Index batches = sa.n * sa.c;
  const Shape o{sa.n, sa.c, M, N};
  std::vector<T> out(static_cast<std::size_t>(o.numel()));
  const auto av = a.values(), bv = b.values();
  for (Index i = 0; i < batches; ++i) {
    const ConstMap<T> A(av.data() + i * M * K, M, K);
    MutMap<T> C(out.data() + i * M * N, M, N);
    if (transpose_b) C.noalias() = A * ConstMap<T>(bv.data() + i * N * K, N, K).transpose();
    else C.noalias() = A * ConstMap<T>(bv.data() + i * K * N, K, N);
  }
  return make_result<T>(o, std::move(out), {a, b}, [=](NodeT<T>& self) {
    T* ga = grad_of(self, 0);
    T* gb = grad_of(self, 1);
    const auto& A_all = self.inputs[0]->value;
    const auto& B_all = self.inputs[1]->value;
    for (Index i = 0; i < batches; ++i) {
      const ConstMap<T> G(self.grad.data() + i * M * N, M, N);
      const ConstMap<T> A(A_all.data() + i * M * K, M, K);
      if (transpose_b) {
        const ConstMap<T> B(B_all.data() + i * N * K, N, K);
        if (ga) MutMap<T>(ga + i * M * K, M, K).noalias() += G * B;
        if (gb) MutMap<T>(gb + i * N * K, N, K).noalias() += G.transpose() * A;
      } else {
        const ConstMap<T> B(B_all.data() + i * K * N, K, N);
        if (ga) MutMap<T>(ga + i * M * K, M, K).noalias() += G * B.transpose();
        if (gb) MutMap<T>(gb + i * K * N, K, N).noalias() += A.transpose() * G;
      }
    }
  });
}

template <typename T>
Tensor<T> softmax_last(const Tensor<T>& x) {
  require_defined(x, "softmax_last");
  const Shape s = x.shape();
  if (s.w < 1) throw InvalidShape("softmax_last: empty axis");
  const Index rows = s.n * s.c * s.h, L = s.w;
  std::vector<T> out(static_cast<std::size_t>(s.numel()));
  const auto xv = x.values();
  for (Index r = 0; r < rows; ++r) {
    const T* src = xv.data() + r * L;
    T* dst = out.data() + r * L;
    const T mx = *std::max_element(src, src + L);
    T sum = T(0);
    for (Index i = 0; i < L; ++i) sum += (dst[i] = std::exp(src[i] - mx));
    for (Index i = 0; i < L; ++i) dst[i] /= sum;
  }
  return make_result<T>(s, std::move(out), {x}, [=](NodeT<T>& self) {
    T* gx = grad_of(self, 0);
    if (!gx) return;
    for (Index r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * L;
      const T* g = self.grad.data() + r * L;
      T dot = T(0);
      for (Index i = 0; i < L; ++i) dot += g[i] * y[i];
      for (Index i = 0; i < L; ++i) gx[r * L + i] += y[i] * (g[i] - dot);
    }
  });
}

template <typename T>
Tensor<T> repeat_batch(const Tensor<T>& x, Index n) {
  require_defined(x, "repeat_batch");
  const Shape s = x.shape();
  if (s.n != 1 || n < 1) throw InvalidShape("repeat_batch: needs a batch-1 tensor and n >= 1");
  const Index per = s.numel();
  std::vector<Index> src(static_cast<std::size_t>(per * n));
  for (Index i = 0; i < per * n; ++i) src[i] = i % per;
  return gather(x, Shape{n, s.c, s.h, s.w}, std::move(src));
}

template <typename T>
Tensor<T> dct_squeeze(const Tensor<T>& x, const std::vector<std::pair<int, int>>& freqs,
                      const std::vector<double>& basis, int N) {
  require_defined(x, "dct_squeeze");
  const Shape s = x.shape();
  if (N < 1 || static_cast<Index>(basis.size()) != Index(N) * N) {
    throw InvalidParameter("dct_squeeze: basis does not match block size");
  }
  if (static_cast<Index>(freqs.size()) != s.c) {
    throw InvalidShape("dct_squeeze: need one frequency per channel");
  }
  if (s.h % N != 0 || s.w % N != 0 || s.h < N || s.w < N) {
    throw InvalidShape("dct_squeeze: spatial size " + s.str() + " is not a multiple of " +
                       std::to_string(N));
  }
  for (auto [u, v] : freqs) {
    if (u < 0 || u >= N || v < 0 || v >= N) throw InvalidParameter("dct_squeeze: (u,v) out of range");
  }
  const Index hw = s.h * s.w;
  const double tiles = static_cast<double>((s.h / N) * (s.w / N));
  // Per-channel weight map B[u, y mod N] B[v, x mod N] / tiles.
  auto weights = std::make_shared<std::vector<T>>(static_cast<std::size_t>(s.c * hw));
  for (Index c = 0; c < s.c; ++c) {
    const auto [u, v] = freqs[c];
    for (Index y = 0; y < s.h; ++y)
      for (Index xx = 0; xx < s.w; ++xx)
        (*weights)[c * hw + y * s.w + xx] =
            static_cast<T>(basis[u * N + y % N] * basis[v * N + xx % N] / tiles);
  }
  std::vector<T> out(static_cast<std::size_t>(s.n * s.c));
  const auto xv = x.values();
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c) {
      const T* src = xv.data() + (n * s.c + c) * hw;
      const T* wt = weights->data() + c * hw;
      T acc = T(0);
      for (Index i = 0; i < hw; ++i) acc += src[i] * wt[i];
      out[n * s.c + c] = acc;
    }
  return make_result<T>({s.n, s.c, 1, 1}, std::move(out), {x}, [=](NodeT<T>& self) {
    T* gx = grad_of(self, 0);
    if (!gx) return;
    for (Index n = 0; n < s.n; ++n)
      for (Index c = 0; c < s.c; ++c) {
        const T g = self.grad[n * s.c + c];
        const T* wt = weights->data() + c * hw;
        T* dst = gx + (n * s.c + c) * hw;
        for (Index i = 0; i < hw; ++i) dst[i] += g * wt[i];
      }
  });
}

template <typename T>
Tensor<T> masked_l1_mean(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& mask) {
  require_defined(pred, "masked_l1_mean");
  require_defined(target, "masked_l1_mean");
  const Shape s = pred.shape();
  if (target.shape() != s) {
    throw InvalidShape("masked_l1_mean: " + s.str() + " vs " + target.shape().str());
  }
  const bool masked = mask.defined();
  if (masked && mask.shape() != s) throw InvalidShape("masked_l1_mean: mask shape mismatch");
  const auto pv = pred.values(), tv = target.values();
  const auto mv = masked ? mask.values() : std::span<const T>();
  Index count = 0;
  double acc = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (masked && mv[i] == T(0)) continue;
    acc += std::abs(static_cast<double>(pv[i]) - static_cast<double>(tv[i]));
    ++count;
  }
  if (count == 0) throw DegenerateBatch("masked_l1_mean: no valid pixels");
  const T inv = T(1) / static_cast<T>(count);
  std::vector<Tensor<T>> inputs{pred, target};
  if (masked) inputs.push_back(mask);
  const T mean = static_cast<T>(acc / static_cast<double>(count));
  return make_result<T>({1, 1, 1, 1}, {mean}, inputs, [=](NodeT<T>& self) {
    T* gp = grad_of(self, 0);
    if (!gp) return;
    const auto& p = self.inputs[0]->value;
    const auto& t = self.inputs[1]->value;
    const T g = self.grad[0] * inv;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (masked && self.inputs[2]->value[i] == T(0)) continue;
      const T d = p[i] - t[i];
      gp[i] += d > 0 ? g : d < 0 ? -g : T(0);
    }
  });
}

#define DSREI_INSTANTIATE(T)                                                                     \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> scale(const Tensor<T>&, T);                                                \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                 \
  template Tensor<T> relu(const Tensor<T>&);                                                    \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                           \
  template Tensor<T> activation(const Tensor<T>&, Activation);                                  \
  template Tensor<T> conv2d(const Tensor<T>&, const ConvParams<T>&);                            \
  template Tensor<T> avg_pool2d(const Tensor<T>&, int, int, int);                               \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                         \
  template Tensor<T> resize(const Tensor<T>&, Index, Index, ResizeMode);                        \
  template Tensor<T> resize_bicubic(const Tensor<T>&, Index, Index);                            \
  template Tensor<T> pixel_shuffle(const Tensor<T>&, int);                                      \
  template Tensor<T> pixel_unshuffle(const Tensor<T>&, int);                                    \
  template Tensor<T> linear(const Tensor<T>&, const LinearParams<T>&);                          \
  template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                            \
  template std::vector<Tensor<T>> split_channels(const Tensor<T>&, const std::vector<Index>&);  \
  template Tensor<T> blur_downsample(const Tensor<T>&);                                         \
  template Tensor<T> window_partition(const Tensor<T>&, Index, Index, int);                     \
  template Tensor<T> window_merge(const Tensor<T>&, const Shape&, Index, Index, int);           \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&, bool);                          \
  template Tensor<T> softmax_last(const Tensor<T>&);                                            \
  template Tensor<T> repeat_batch(const Tensor<T>&, Index);                                     \
  template Tensor<T> dct_squeeze(const Tensor<T>&, const std::vector<std::pair<int, int>>&,     \
                                 const std::vector<double>&, int);                              \
  template Tensor<T> masked_l1_mean(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

DSREI_INSTANTIATE(float)
DSREI_INSTANTIATE(double)

#undef DSREI_INSTANTIATE

}  // namespace dsrei
