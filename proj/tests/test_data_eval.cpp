#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "dsrei/checkpoint.hpp"
#include "dsrei/config_file.hpp"
#include "dsrei/error.hpp"
#include "dsrei/image_io.hpp"
#include "test_util.hpp"

using namespace dsrei;
using namespace dsrei::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dsrei_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Image from_values(std::int64_t h, std::int64_t w, std::vector<double> v) {
  Image img(1, h, w);
  img.data = std::move(v);
  return img;
}

Image random_image(std::int64_t c, std::int64_t h, std::int64_t w, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Image img(c, h, w);
  for (double& v : img.data) v = u(rng);
  return img;
}

}  // namespace

TEST(Metrics, HandComputedValues) {
  const Metrics m = compute_metrics(from_values(2, 2, {0, 0, 3, 4}), Image(1, 2, 2, 0.0), Image(1, 2, 2, 1.0));
  EXPECT_DOUBLE_EQ(m.mse, 6.25);
  EXPECT_DOUBLE_EQ(m.mae, 1.75);
  EXPECT_DOUBLE_EQ(m.rmse, 2.5);
  EXPECT_EQ(m.count, 4);
}

TEST(Metrics, MatchBruteForceOnRandomMaps) {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const Image pred = random_image(1, 9, 11, seed, 0, 500), gt = random_image(1, 9, 11, seed + 1000, 0, 500);
    Image mask = random_image(1, 9, 11, seed + 2000, 0, 1);
    for (double& v : mask.data) v = v < 0.3 ? 0.0 : 1.0;
    double sq = 0, ab = 0;
    std::int64_t n = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
      if (mask.data[i] <= 0.5) continue;
      const double d = pred.data[i] - gt.data[i];
      sq += d * d;
      ab += std::abs(d);
      ++n;
    }
    const Metrics m = compute_metrics(pred, gt, mask);
    EXPECT_EQ(m.count, n);
    EXPECT_NEAR(m.mse, sq / double(n), 1e-12 * std::max(1.0, sq / double(n)));
    EXPECT_NEAR(m.mae, ab / double(n), 1e-12 * std::max(1.0, ab / double(n)));
    EXPECT_NEAR(m.rmse * m.rmse, m.mse, 1e-9 * m.mse);
  }
}

TEST(Metrics, PermutationInvariantAndPooled) {
  const Image pred = random_image(1, 1, 50, 1, 0, 10), gt = random_image(1, 1, 50, 2, 0, 10);
  const Image mask(1, 1, 50, 1.0);
  std::vector<std::size_t> order(50);
  for (std::size_t i = 0; i < 50; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), std::mt19937_64(3));
  Image p2 = pred, g2 = gt;
  for (std::size_t i = 0; i < 50; ++i) {
    p2.data[i] = pred.data[order[i]];
    g2.data[i] = gt.data[order[i]];
  }
  const Metrics a = compute_metrics(pred, gt, mask), b = compute_metrics(p2, g2, mask);
  EXPECT_NEAR(a.mse, b.mse, 1e-12);
  EXPECT_NEAR(a.mae, b.mae, 1e-12);

  // Pooling: 1 pixel with error 4 and 3 pixels with error 0 give 16 / 4.
  MetricSums sums;
  sums.add(from_values(1, 1, {4}), from_values(1, 1, {0}), from_values(1, 1, {1}));
  sums.add(from_values(1, 3, {1, 1, 1}), from_values(1, 3, {1, 1, 1}), from_values(1, 3, {1, 1, 1}));
  EXPECT_DOUBLE_EQ(sums.finish().mse, 4.0);
}

TEST(Metrics, EmptyMaskIsDegenerate) {
  EXPECT_THROW(compute_metrics(Image(1, 2, 2, 1.0), Image(1, 2, 2), Image(1, 2, 2, 0.0)), DegenerateInput);
}

TEST(ImageIo, DepthPngUnitsAndInvalidPixels) {
  const fs::path dir = scratch_dir("png");
  const std::string path = (dir / "d.png").string();
  save_depth_png16(path, from_values(1, 3, {150.0, 0.0, 6553.5}));
  const DepthMap d = load_depth(path);
  EXPECT_EQ(d.depth.data, (std::vector<double>{150.0, 0.0, 6553.5}));
  EXPECT_EQ(d.mask.data, (std::vector<double>{1.0, 0.0, 1.0}));

  const Image mm = random_image(1, 7, 5, 4, 0, 6000);
  Image whole = mm;
  for (double& v : whole.data) v = std::round(v * 10.0) / 10.0;
  save_depth_png16(path, whole);
  const DepthMap back = load_depth(path);
  for (std::size_t i = 0; i < whole.data.size(); ++i) EXPECT_NEAR(back.depth.data[i], whole.data[i], 1e-9);
}

TEST(ImageIo, PfmUnitsOrientationAndRoundTrip) {
  const fs::path dir = scratch_dir("pfm");
  const std::string path = (dir / "d.pfm").string();
  // Written by hand: 2x1 image, little-endian, rows bottom to top, meters.
  {
    std::ofstream out(path, std::ios::binary);
    out << "Pf\n1 2\n-1.0\n";
    const float rows[2] = {2.25f, 1.5f};  // bottom row first
    out.write(reinterpret_cast<const char*>(rows), sizeof(rows));
  }
  const DepthMap d = load_depth(path);
  ASSERT_EQ(d.depth.h, 2);
  EXPECT_DOUBLE_EQ(d.depth.at(0, 0, 0), 150.0);
  EXPECT_DOUBLE_EQ(d.depth.at(0, 1, 0), 225.0);

  const Image img = random_image(1, 6, 4, 5, 0, 1000);
  save_pfm(path, img);
  const DepthMap back = load_depth(path);
  for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(back.depth.data[i], img.data[i], 1e-4);
}

TEST(ImageIo, ColorPngRoundTrip) {
  const fs::path dir = scratch_dir("rgb");
  Image img(3, 4, 5);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = double((i * 37) % 256) / 255.0;
  save_png8((dir / "c.png").string(), img);
  const Image back = load_color((dir / "c.png").string());
  ASSERT_TRUE(back.same_shape(img));
  for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(back.data[i], img.data[i], 1e-12);
  EXPECT_THROW(load_depth((dir / "missing.png").string()), IoError);
}

TEST(Normalizer, ScaleClampAndInverse) {
  const Normalizer n(1000);
  const Image x = n.normalize(from_values(1, 4, {500, 1500, -5, 250}));
  EXPECT_EQ(x.data, (std::vector<double>{0.5, 1.0, 0.0, 0.25}));
  EXPECT_EQ(n.denormalize(x).data, (std::vector<double>{500, 1000, 0, 250}));
  EXPECT_THROW(Normalizer(0), InvalidConfig);
  EXPECT_THROW(Normalizer(-1), InvalidConfig);
}

TEST(MakeLr, ShapesConstantsAndAffineReproduction) {
  EXPECT_EQ(make_lr(Image(1, 256, 256, 3.0), 4).h, 64);
  const Image c = make_lr(Image(1, 32, 48, 7.5), 8);
  EXPECT_EQ(c.w, 6);
  for (double v : c.data) EXPECT_NEAR(v, 7.5, 1e-12);
  EXPECT_THROW(make_lr(Image(1, 250, 256), 4), InvalidShape);

  Image ramp(1, 64, 64);
  for (std::int64_t y = 0; y < 64; ++y)
    for (std::int64_t x = 0; x < 64; ++x) ramp.at(0, y, x) = 100.0 + 2.0 * x - 0.5 * y;
  const Image up = bicubic_upsample(make_lr(ramp, 4), 64, 64);
  for (std::int64_t y = 12; y < 52; ++y)
    for (std::int64_t x = 12; x < 52; ++x) EXPECT_NEAR(up.at(0, y, x), ramp.at(0, y, x), 1e-9);
}

class TiledInference : public ::testing::Test {
 protected:
  DsrEi<float> model{ModelConfig::from_preset("tiny"), 1};
  static TF lr_of(const TF& color, int s, std::uint64_t seed) {
    const Shape c = color.shape();
    return to_float(random_tensor(Shape{1, 1, c.h / s, c.w / s}, seed, 0, 1));
  }
};

TEST_F(TiledInference, SingleTileEqualsDirectForward) {
  const TF color = to_float(random_tensor(Shape{1, 3, 256, 256}, 1, 0, 1));
  const TF lr = lr_of(color, 4, 2);
  NoGradGuard guard;
  EXPECT_TRUE(bit_equal(tiled_inference(model, lr, color, 256), model.forward(lr, color).d_sr));
}

TEST_F(TiledInference, TilesAreIndependent) {
  const TF color = to_float(random_tensor(Shape{1, 3, 128, 128}, 3, 0, 1));
  const TF lr = lr_of(color, 4, 4);
  const TF tiled = tiled_inference(model, lr, color, 64);
  NoGradGuard guard;
  for (int ty = 0; ty < 2; ++ty) {
    for (int tx = 0; tx < 2; ++tx) {
      const Image c = crop(Image::from_tensor(color), ty * 64, tx * 64, 64, 64);
      const Image l = crop(Image::from_tensor(lr), ty * 16, tx * 16, 16, 16);
      const TF direct = model.forward(l.to_tensor<float>(), c.to_tensor<float>()).d_sr;
      for (std::int64_t y = 0; y < 64; ++y)
        for (std::int64_t x = 0; x < 64; ++x)
          ASSERT_EQ(tiled.at(0, 0, ty * 64 + y, tx * 64 + x), direct.at(0, 0, y, x));
    }
  }
}

TEST_F(TiledInference, RaggedSizesAndBadTiles) {
  const TF color = to_float(random_tensor(Shape{1, 3, 80, 112}, 5, 0, 1));
  const TF lr = lr_of(color, 4, 6);
  EXPECT_EQ(tiled_inference(model, lr, color, 64).shape(), (Shape{1, 1, 80, 112}));
  EXPECT_THROW(tiled_inference(model, lr, color, 8), InvalidParameter);
  EXPECT_THROW(tiled_inference(model, lr, color, 24), InvalidParameter);
}

TEST(Synth, DeterministicAndInRange) {
  SynthOptions opt;
  std::mt19937_64 a(42), b(42);
  const SamplePair s1 = synth_scene(a, opt), s2 = synth_scene(b, opt);
  EXPECT_EQ(s1.d_gt.data, s2.d_gt.data);
  EXPECT_EQ(s1.i_hr.data, s2.i_hr.data);
  EXPECT_EQ(s1.d_lr.h, opt.size / opt.scale);
  for (double v : s1.d_gt.data) {
    EXPECT_GE(v, opt.min_depth);
    EXPECT_LE(v, opt.max_depth);
  }
  for (double v : s1.i_hr.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  for (double v : s1.mask.data) EXPECT_EQ(v, 1.0);

  opt.n_shapes = 0;
  const SamplePair flat = synth_scene(a, opt);
  for (double v : flat.d_gt.data) EXPECT_EQ(v, flat.d_gt.data[0]);
  opt.size = 40;
  EXPECT_THROW(synth_scene(a, opt), InvalidShape);
}

TEST(Dataset, SaveAndLoadDirectory) {
  const fs::path dir = scratch_dir("dataset");
  std::mt19937_64 rng(3);
  SamplePair s = synth_scene(rng, SynthOptions{}, "scene_a");
  save_sample(dir.string(), s);
  const auto loaded = load_dataset(dir.string(), 4);
  ASSERT_EQ(loaded.size(), 1u);
  EXPECT_EQ(loaded[0].name, "scene_a");
  for (std::size_t i = 0; i < s.d_gt.data.size(); ++i) EXPECT_NEAR(loaded[0].d_gt.data[i], s.d_gt.data[i], 0.05);
  EXPECT_THROW(load_dataset((dir / "nope").string(), 4), IoError);
}

TEST(RunConfig, ParsesKeysAndRejectsUnknown) {
  std::istringstream good("# comment\nscale = 8\ndata_dir = /tmp/x\nlr = 0.002\n");
  const RunConfig rc = run_config_from_map(parse_key_values(good, run_config_keys()));
  EXPECT_EQ(rc.scale, 8);
  EXPECT_EQ(rc.data_dir, "/tmp/x");
  EXPECT_DOUBLE_EQ(rc.train.base_lr, 0.002);
  std::istringstream bad("learning_speed = 3\n");
  EXPECT_THROW(parse_key_values(bad, run_config_keys()), UsageError);
  std::istringstream dup("scale = 4\nscale = 8\n");
  EXPECT_THROW(parse_key_values(dup, run_config_keys()), UsageError);
}

TEST(Checkpoint, FloatRoundTripIsBitExact) {
  const fs::path dir = scratch_dir("ckpt");
  ModelConfig cfg = ModelConfig::from_preset("tiny");
  cfg.stages = 1;
  const DsrEi<float> model(cfg, 7);
  save_checkpoint((dir / "m").string(), model, {{"epoch", "3"}});
  const CheckpointHeader h = read_checkpoint_header((dir / "m").string());
  EXPECT_EQ(config_to_map(h.config), config_to_map(cfg));
  EXPECT_EQ(h.meta.at("epoch"), "3");

  DsrEi<float> other(h.config, 99);
  load_checkpoint((dir / "m").string(), other);
  const auto p = model.parameters(), q = other.parameters();
  ASSERT_EQ(p.size(), q.size());
  for (std::size_t k = 0; k < p.size(); ++k) EXPECT_TRUE(bit_equal(p[k].second, q[k].second)) << p[k].first;

  DsrEi<float> wrong(ModelConfig::from_preset("tiny"), 1);
  EXPECT_ANY_THROW(load_checkpoint((dir / "m").string(), wrong));
  EXPECT_THROW(config_from_map({{"preset", "tiny"}, {"colour_space", "lab"}}), InvalidConfig);
}
