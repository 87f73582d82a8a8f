#include <cmath>
#include <limits>

#include "dsrei/error.hpp"
#include "dsrei/grad_check.hpp"
#include "dsrei/ops.hpp"
#include "test_util.hpp"

using namespace dsrei;
using namespace dsrei::testing;

namespace {

ConvParams<double> conv_of(Shape ws, std::vector<double> w, int stride, int padding) {
  ConvParams<double> p;
  p.weight = TD(ws, std::move(w));
  p.bias = TD(Shape{ws.n, 1, 1, 1}, 0.0);
  p.stride = stride;
  p.padding = padding;
  return p;
}

// Direct nested-loop cross-correlation with zero padding.
TD direct_conv(const TD& x, const ConvParams<double>& p) {
  const Shape xs = x.shape(), ws = p.weight.shape();
  const std::int64_t oh = (xs.h + 2 * p.padding - ws.h) / p.stride + 1;
  const std::int64_t ow = (xs.w + 2 * p.padding - ws.w) / p.stride + 1;
  std::vector<double> out(static_cast<std::size_t>(xs.n * ws.n * oh * ow));
  std::size_t k = 0;
  for (std::int64_t n = 0; n < xs.n; ++n)
    for (std::int64_t o = 0; o < ws.n; ++o)
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t x0 = 0; x0 < ow; ++x0) {
          double acc = p.bias.at(o, 0, 0, 0);
          for (std::int64_t c = 0; c < xs.c; ++c)
            for (std::int64_t i = 0; i < ws.h; ++i)
              for (std::int64_t j = 0; j < ws.w; ++j) {
                const std::int64_t yy = y * p.stride + i - p.padding;
                const std::int64_t xx = x0 * p.stride + j - p.padding;
                if (yy < 0 || yy >= xs.h || xx < 0 || xx >= xs.w) continue;
                acc += p.weight.at(o, c, i, j) * x.at(n, c, yy, xx);
              }
          out[k++] = acc;
        }
  return TD(Shape{xs.n, ws.n, oh, ow}, out);
}

// Keys cubic with a = -0.5, written out from its piecewise definition.
double keys(double t) {
  t = std::abs(t);
  if (t <= 1) return 1.5 * t * t * t - 2.5 * t * t + 1;
  if (t < 2) return -0.5 * t * t * t + 2.5 * t * t - 4 * t + 2;
  return 0;
}

}  // namespace

TEST(Conv2d, IdentityKernel) {
  const TD x = random_tensor(Shape{2, 1, 5, 7}, 3);
  EXPECT_TRUE(bit_equal(conv2d(x, conv_of(Shape{1, 1, 1, 1}, {1.0}, 1, 0)), x));
}

TEST(Conv2d, OnesKernelOnOnes) {
  const TD y = conv2d(TD(Shape{1, 1, 3, 3}, 1.0), conv_of(Shape{1, 1, 3, 3}, std::vector<double>(9, 1.0), 1, 1));
  const std::vector<double> expected{4, 6, 4, 6, 9, 6, 4, 6, 4};
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(y.values()[i], expected[i]);
}

TEST(Conv2d, MatchesDirectLoops) {
  for (int stride : {1, 2}) {
    for (int k : {1, 3}) {
      const TD x = random_tensor(Shape{2, 3, 7, 6}, 10 + stride + k);
      const TD w = random_tensor(Shape{4, 3, k, k}, 20 + k);
      ConvParams<double> p = conv_of(w.shape(), {w.values().begin(), w.values().end()}, stride, (k - 1) / 2);
      p.bias = random_tensor(Shape{4, 1, 1, 1}, 30 + k);
      EXPECT_LT(max_abs_diff(conv2d(x, p), direct_conv(x, p)), 1e-12);
    }
  }
}

TEST(Conv2d, PreservesShapeWithSamePadding) {
  for (int k : {1, 3}) {
    const TD y = conv2d(TD(Shape{1, 2, 9, 5}, 1.0), conv_of(Shape{3, 2, k, k}, std::vector<double>(size_t(6 * k * k), 0.5), 1, (k - 1) / 2));
    EXPECT_EQ(y.shape(), (Shape{1, 3, 9, 5}));
  }
}

TEST(Conv2d, Errors) {
  EXPECT_THROW(conv2d(TD(Shape{1, 2, 4, 4}), conv_of(Shape{1, 1, 1, 1}, {1.0}, 1, 0)), InvalidShape);
  EXPECT_THROW(conv2d(TD(Shape{1, 1, 4, 4}),
                      conv_of(Shape{1, 1, 1, 1}, {std::numeric_limits<double>::quiet_NaN()}, 1, 0)),
               InvalidParameter);
}

TEST(Pooling, Values) {
  const TD y = avg_pool2d(TD(Shape{1, 1, 2, 2}, {1, 2, 3, 4}), 2, 2);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.item(), 2.5);
  const TD c = avg_pool2d(TD(Shape{1, 2, 6, 6}, 3.25), 3, 1, 1);
  for (double v : c.values()) EXPECT_DOUBLE_EQ(v, 3.25);
  EXPECT_THROW(avg_pool2d(TD(Shape{1, 1, 2, 2}), 3, 1), InvalidShape);
  EXPECT_EQ(global_avg_pool(TD(Shape{1, 1, 2, 2}, {0, 0, 0, 4})).item(), 1.0);
}

TEST(Pooling, GlobalGradientIsUniform) {
  TD x = random_tensor(Shape{1, 1, 3, 4}, 5);
  x.set_requires_grad(true);
  global_avg_pool(x).backward();
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0 / 12.0);
}

TEST(Resize, ConstantsStayConstant) {
  const TD x(Shape{1, 2, 3, 5}, 0.75);
  for (auto mode : {ResizeMode::kNearest, ResizeMode::kBilinear}) {
    const TD y = resize(x, 7, 4, mode);
    for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 0.75);
  }
  const TD y = resize_bicubic(x, 9, 11);
  for (double v : y.values()) EXPECT_NEAR(v, 0.75, 1e-15);
}

TEST(Resize, BilinearTwoPointExample) {
  const TD y = resize(TD(Shape{1, 1, 1, 2}, {0.0, 2.0}), 1, 4, ResizeMode::kBilinear);
  const std::vector<double> expected{0, 0.5, 1.5, 2};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y.values()[i], expected[i]);
}

TEST(Resize, RampsReproducedInInterior) {
  std::vector<double> ramp(16);
  for (int i = 0; i < 16; ++i) ramp[size_t(i)] = 0.5 * i - 1;
  const TD x(Shape{1, 1, 1, 16}, ramp);
  const TD b = resize(x, 1, 32, ResizeMode::kBilinear);
  const TD c = resize_bicubic(x, 1, 32);
  // Output j samples source coordinate (j + 0.5) / 2 - 0.5.
  for (int j = 4; j < 28; ++j) {
    const double src = (j + 0.5) / 2 - 0.5;
    EXPECT_NEAR(b.values()[size_t(j)], 0.5 * src - 1, 1e-12);
    EXPECT_NEAR(c.values()[size_t(j)], 0.5 * src - 1, 1e-12);
  }
}

TEST(Resize, BicubicImpulseGivesKernelTaps) {
  std::vector<double> v(9, 0.0);
  v[4] = 1.0;
  const TD y = resize_bicubic(TD(Shape{1, 1, 1, 9}, v), 1, 18);
  for (int j = 0; j < 18; ++j) {
    const double offset = (j + 0.5) / 2 - 0.5 - 4;
    EXPECT_NEAR(y.values()[size_t(j)], keys(offset), 1e-15) << "j=" << j;
  }
  EXPECT_NEAR(keys_cubic(0.25), keys(0.25), 1e-15);
  EXPECT_NEAR(keys_cubic(1.25), keys(1.25), 1e-15);
}

TEST(Resize, NearestUsesPixelCentres) {
  const TD y = resize(TD(Shape{1, 1, 1, 3}, {1, 2, 3}), 1, 6, ResizeMode::kNearest);
  const std::vector<double> expected{1, 1, 2, 2, 3, 3};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(y.values()[i], expected[i]);
}

TEST(PixelShuffle, LayoutAndInverse) {
  const TD y = pixel_shuffle(TD(Shape{1, 4, 1, 1}, {1, 2, 3, 4}), 2);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(y.at(0, 0, 0, 0), 1);
  EXPECT_EQ(y.at(0, 0, 0, 1), 2);
  EXPECT_EQ(y.at(0, 0, 1, 0), 3);
  EXPECT_EQ(y.at(0, 0, 1, 1), 4);
  EXPECT_EQ(pixel_shuffle(TD(Shape{1, 4, 2, 2}), 2).shape(), (Shape{1, 1, 4, 4}));

  // Brute-force index enumeration: out[c, h r + i, w r + j] = in[c r^2 + i r + j, h, w].
  const TD x = random_tensor(Shape{2, 8, 3, 5}, 8);
  const TD s = pixel_shuffle(x, 2);
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t c = 0; c < 2; ++c)
      for (std::int64_t h = 0; h < 3; ++h)
        for (std::int64_t w = 0; w < 5; ++w)
          for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
              ASSERT_EQ(s.at(n, c, 2 * h + i, 2 * w + j), x.at(n, c * 4 + i * 2 + j, h, w));
  EXPECT_TRUE(bit_equal(pixel_unshuffle(s, 2), x));
  EXPECT_TRUE(bit_equal(pixel_shuffle(pixel_unshuffle(x, 1), 1), x));
  EXPECT_THROW(pixel_shuffle(TD(Shape{1, 3, 2, 2}), 2), InvalidShape);
  EXPECT_THROW(pixel_unshuffle(TD(Shape{1, 1, 3, 2}), 2), InvalidShape);
}

TEST(Activation, SigmoidAndRelu) {
  const TD x = random_tensor(Shape{1, 1, 4, 4}, 2, -6, 6);
  const TD s = sigmoid(x), sn = sigmoid(scale(x, -1.0));
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_GT(s.values()[i], 0.0);
    EXPECT_LT(s.values()[i], 1.0);
    EXPECT_NEAR(s.values()[i] + sn.values()[i], 1.0, 1e-15);
  }
  EXPECT_EQ(sigmoid(TD(Shape{1, 1, 1, 1}, 0.0)).item(), 0.5);

  TD r(Shape{1, 1, 1, 2}, {-0.7, 0.4});
  r.set_requires_grad(true);
  relu(r).backward(std::vector<double>{1.0, 1.0});
  EXPECT_EQ(r.grad()[0], 0.0);
  EXPECT_EQ(r.grad()[1], 1.0);
  EXPECT_LE(grad_check([](const TD& v) { return relu(v); }, TD(Shape{1, 1, 1, 2}, {-0.7, 0.4})), 1e-9);
}

TEST(Linear, IdentityAndBias) {
  const TD x = random_tensor(Shape{3, 4, 1, 1}, 4);
  LinearParams<double> p;
  std::vector<double> eye(16, 0.0);
  for (int i = 0; i < 4; ++i) eye[size_t(i * 5)] = 1.0;
  p.weight = TD(Shape{4, 4, 1, 1}, eye);
  p.bias = TD(Shape{4, 1, 1, 1}, 0.0);
  EXPECT_TRUE(bit_equal(linear(x, p), x));
  p.weight = TD(Shape{2, 4, 1, 1}, 0.0);
  p.bias = TD(Shape{2, 1, 1, 1}, {0.25, -3});
  const TD y = linear(x, p);
  for (std::int64_t n = 0; n < 3; ++n) {
    EXPECT_EQ(y.at(n, 0, 0, 0), 0.25);
    EXPECT_EQ(y.at(n, 1, 0, 0), -3);
  }
  p.weight = TD(Shape{2, 5, 1, 1}, 0.0);
  EXPECT_THROW(linear(x, p), InvalidShape);
}

TEST(Channels, ConcatSplitRoundTrip) {
  const TD a = random_tensor(Shape{1, 1, 2, 2}, 1), b = random_tensor(Shape{1, 3, 2, 2}, 2);
  const TD c = concat_channels<double>({a, b});
  EXPECT_EQ(c.shape(), (Shape{1, 4, 2, 2}));
  const auto parts = split_channels(c, {1, 3});
  EXPECT_TRUE(bit_equal(parts[0], a));
  EXPECT_TRUE(bit_equal(parts[1], b));
  EXPECT_THROW(concat_channels<double>({a, TD(Shape{1, 1, 3, 2})}), InvalidShape);
}

TEST(Channels, GradientRoutesToItsInput) {
  TD a = random_tensor(Shape{1, 2, 2, 2}, 1), b = random_tensor(Shape{1, 3, 2, 2}, 2);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  const TD c = concat_channels<double>({a, b});
  std::vector<double> seed(static_cast<std::size_t>(c.numel()), 0.0);
  seed[1] = 1.0;  // a coordinate of the first input
  c.backward(seed);
  EXPECT_EQ(a.grad()[1], 1.0);
  for (double g : b.has_grad() ? b.grad() : std::span<const double>{}) EXPECT_EQ(g, 0.0);
}

TEST(Blur, NyquistAndConstants) {
  std::vector<double> alt(32);
  for (int i = 0; i < 32; ++i) alt[size_t(i)] = i % 2 ? -1.0 : 1.0;
  const TD y = blur_downsample(TD(Shape{1, 1, 2, 16}, alt));
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 8}));
  for (int j = 1; j < 8; ++j) EXPECT_EQ(y.values()[size_t(j)], 0.0);
  const TD c = blur_downsample(TD(Shape{1, 2, 6, 8}, 1.5));
  for (double v : c.values()) EXPECT_EQ(v, 1.5);
}

TEST(GradCheck, HarnessContract) {
  const TD x = random_tensor(Shape{1, 1, 3, 3}, 6);
  // Rounding in x +- h keeps the identity case from being exactly zero.
  EXPECT_LE(grad_check([](const TD& v) { return v; }, x), 1e-10);
  EXPECT_LE(grad_check([](const TD& v) { return sigmoid(v); }, TD(Shape{1, 1, 1, 1}, 0.3)), 1e-6);
  const ConvParams<double> p{random_tensor(Shape{2, 2, 3, 3}, 7), TD(Shape{2, 1, 1, 1}, 0.0), 1, 1};
  EXPECT_LE(grad_check([&](const TD& v) { return conv2d(v, p); }, random_tensor(Shape{1, 2, 5, 5}, 8)), 1e-3);
  int calls = 0;
  EXPECT_THROW(grad_check([&](const TD& v) { return scale(v, double(++calls)); }, x), HarnessError);
  EXPECT_GT(grad_check([](const TD& v) { return faulty_double(v); }, x), 0.1);
}

TEST(GradCheck, EveryOpPassesOnThreeSeeds) {
  expect_gradients({"add_broadcast", "sub_broadcast", "mul_broadcast", "scale", "sigmoid", "relu",
                    "leaky_relu", "conv3x3", "conv3x3_stride2", "conv1x1", "avg_pool_2x2",
                    "avg_pool_3x3_padded", "global_avg_pool", "resize_nearest", "resize_bilinear_up",
                    "resize_bilinear_down", "resize_bicubic_up", "resize_bicubic_down", "pixel_shuffle",
                    "pixel_unshuffle", "linear", "concat_channels", "split_channels", "blur_downsample",
                    "window_partition", "window_merge", "matmul", "matmul_transposed", "softmax_last",
                    "repeat_batch", "masked_l1_mean"});
}

TEST(Autodiff, FanOutAccumulates) {
  TD x(Shape{1, 1, 1, 1}, 3.0);
  x.set_requires_grad(true);
  mul(x, x).backward();  // d(x^2)/dx
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Autodiff, NoGradGuardRecordsNothing) {
  TD x(Shape{1, 1, 1, 1}, 3.0);
  x.set_requires_grad(true);
  NoGradGuard guard;
  EXPECT_FALSE(mul(x, x).requires_grad());
}
