#include "dsrei/error.hpp"
#include "dsrei/gdrb.hpp"
#include "test_util.hpp"

using namespace dsrei;
using namespace dsrei::testing;

namespace {

const std::array<std::int64_t, 3> kWidths{8, 16, 32};

void make_identity(ConvParams<double>& p) {
  zero_params(p);
  const Shape s = p.weight.shape();
  auto w = p.weight.mutable_values();
  for (std::int64_t o = 0; o < s.n; ++o) w[size_t(offset(s, o, o, (s.h - 1) / 2, (s.w - 1) / 2))] = 1.0;
}

std::array<TD, 3> encoder_features(std::uint64_t seed, std::int64_t n = 1) {
  return {random_tensor(Shape{n, kWidths[0], 16, 16}, seed),
          random_tensor(Shape{n, kWidths[1], 8, 8}, seed + 1),
          random_tensor(Shape{n, kWidths[2], 4, 4}, seed + 2)};
}

}  // namespace

TEST(Affm, ScaleWeightsInUnitInterval) {
  ParamInit init(1);
  const Affm<double> affm(init, 1, {16, 16, 16}, 8);
  const ScaleFusion<double> f = affm.fuse_scales(random_tensor(Shape{2, 16, 16, 16}, 1, -3, 3),
                                                 random_tensor(Shape{2, 16, 8, 8}, 2, -3, 3),
                                                 random_tensor(Shape{2, 16, 4, 4}, 3, -3, 3));
  EXPECT_EQ(f.fused.shape(), (Shape{2, 16, 8, 8}));
  for (const auto& p : f.pi) {
    EXPECT_EQ(p.shape(), (Shape{2, 16, 1, 1}));
    for (double v : p.values()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(Affm, ConstantScalesFuseToWeightedSum) {
  ParamInit init(2);
  const Affm<double> affm(init, 0, {8, 8, 8}, 8);
  const ScaleFusion<double> f = affm.fuse_scales(TD(Shape{1, 8, 16, 16}, 1.5), TD(Shape{1, 8, 8, 8}, 1.5),
                                                 TD(Shape{1, 8, 4, 4}, 1.5));
  for (std::int64_t c = 0; c < 8; ++c) {
    const double expected =
        1.5 * (f.pi[0].at(0, c, 0, 0) + f.pi[1].at(0, c, 0, 0) + f.pi[2].at(0, c, 0, 0));
    for (std::int64_t y = 0; y < 16; ++y)
      for (std::int64_t x = 0; x < 16; ++x) EXPECT_NEAR(f.fused.at(0, c, y, x), expected, 1e-12);
  }
}

TEST(Affm, OutputMatchesTargetScale) {
  ParamInit init(3);
  const TD edge = random_tensor(Shape{1, 8, 16, 16}, 4);
  for (int target = 0; target < 3; ++target) {
    const Affm<double> affm(init, target, kWidths, 8);
    const TD out = affm.forward(encoder_features(10), edge);
    EXPECT_EQ(out.shape(), (Shape{1, kWidths[size_t(target)], 16 >> target, 16 >> target}));
  }
}

TEST(Affm, EdgeAttentionGatesFusedFeatures) {
  ParamInit init(4);
  Affm<double> affm(init, 0, {8, 8, 8}, 8);
  make_identity(affm.out_proj);
  const TD fused = random_tensor(Shape{1, 8, 16, 16}, 5), edge = random_tensor(Shape{1, 8, 16, 16}, 6);
  const EdgeAttention<double> e = affm.edge_attention(fused, edge);
  EXPECT_EQ(e.attention.shape(), fused.shape());
  for (std::size_t i = 0; i < fused.values().size(); ++i) {
    EXPECT_NEAR(e.out.values()[i], fused.values()[i] * e.attention.values()[i], 1e-14);
  }
  const EdgeAttention<double> z = affm.edge_attention(TD(fused.shape(), 0.0), edge);
  for (double v : z.out.values()) EXPECT_EQ(v, 0.0);
}

TEST(AntialiasDown, HalvesSizeAndKeepsConstantsFlat) {
  ParamInit init(5);
  const AntialiasDown<double> down(init, 8);
  const TD y = down.forward(TD(Shape{1, 8, 16, 16}, 2.0));
  EXPECT_EQ(y.shape(), (Shape{1, 16, 8, 8}));
  // Away from the zero-padded border each output channel is constant.
  for (std::int64_t c = 0; c < 16; ++c)
    for (std::int64_t r = 1; r < 7; ++r)
      for (std::int64_t x = 1; x < 7; ++x) EXPECT_NEAR(y.at(0, c, r, x), y.at(0, c, 1, 1), 1e-12);
}

TEST(CrossStageFusion, ZeroedConvsAreIdentity) {
  ParamInit init(6);
  CrossStageFusion<double> fusion(init, kWidths);
  for (int s = 0; s < 3; ++s) {
    zero_params(fusion.enc_conv[size_t(s)]);
    zero_params(fusion.dec_conv[size_t(s)]);
  }
  const TD enc2 = random_tensor(Shape{1, 16, 8, 8}, 7);
  EXPECT_TRUE(bit_equal(fusion.apply(1, random_tensor(Shape{1, 16, 4, 4}, 8),
                                     random_tensor(Shape{1, 16, 4, 4}, 9), enc2),
                        enc2));
  EXPECT_THROW(fusion.apply(1, random_tensor(Shape{1, 16, 3, 3}, 8), enc2, enc2), InvalidShape);
}

class StageTest : public ::testing::Test {
 protected:
  ModelConfig cfg = ModelConfig::from_preset("tiny");
  TD depth = random_tensor(Shape{1, 8, 16, 16}, 11);
  TD guidance = random_tensor(Shape{1, 8, 16, 16}, 12);
  TD edge = random_tensor(Shape{1, 8, 16, 16}, 13);
  TD image = random_tensor(Shape{1, 1, 16, 16}, 14, 0, 1);
};

TEST_F(StageTest, ZeroedImageHeadPassesImageThrough) {
  ParamInit init(7);
  Stage<double> stage(init, cfg, 1, false);
  zero_params(stage.sam.image_head);
  EXPECT_TRUE(bit_equal(stage.forward(depth, guidance, edge, image, nullptr).sam.image, image));
}

TEST_F(StageTest, RemovingAffmChangesOutput) {
  ParamInit init(8);
  const Stage<double> with(init, cfg, 1, false);
  Stage<double> without = with;
  for (auto& a : without.affm) a.reset();
  const TD a = with.forward(depth, guidance, edge, image, nullptr).sam.image;
  const TD b = without.forward(depth, guidance, edge, image, nullptr).sam.image;
  EXPECT_GT(max_abs_diff(a, b), 1e-9);
}

TEST(DsrEi, OutputShapes) {
  const DsrEi<double> model(ModelConfig::from_preset("tiny"), 1);
  for (int s : {4, 8, 16}) {
    const std::int64_t H = 32, W = 48;
    const ModelOutput<double> out = model.forward(random_tensor(Shape{2, 1, H / s, W / s}, 1, 0, 1),
                                                  random_tensor(Shape{2, 3, H, W}, 2, 0, 1));
    for (const TD* t : {&out.d_sr, &out.d_sr_s1, &out.d_sr_s2, &out.e_pred}) {
      EXPECT_EQ(t->shape(), (Shape{2, 1, H, W})) << "scale " << s;
    }
  }
}

TEST(DsrEi, ZeroedHeadReturnsBicubicUpsampling) {
  DsrEi<double> model(ModelConfig::from_preset("tiny"), 2);
  zero_params(model.final_head);
  const TD lr = random_tensor(Shape{1, 1, 8, 8}, 3, 0, 1);
  EXPECT_TRUE(bit_equal(model.forward(lr, random_tensor(Shape{1, 3, 32, 32}, 4, 0, 1)).d_sr,
                        resize_bicubic(lr, 32, 32)));
}

TEST(DsrEi, SingleStageRunsAtFullResolution) {
  ModelConfig cfg = ModelConfig::from_preset("tiny");
  cfg.stages = 1;
  const DsrEi<double> model(cfg, 3);
  EXPECT_FALSE(model.first_stage_half_resolution());
  const ModelOutput<double> out =
      model.forward(random_tensor(Shape{1, 1, 4, 4}, 5, 0, 1), random_tensor(Shape{1, 3, 16, 16}, 6, 0, 1));
  EXPECT_TRUE(bit_equal(out.d_sr_s1, out.d_sr_s2));
}

TEST(Geometry, RejectsBadInputs) {
  EXPECT_EQ(check_geometry(Shape{1, 1, 8, 8}, Shape{1, 3, 64, 64}), 8);
  EXPECT_THROW(check_geometry(Shape{1, 1, 16, 16}, Shape{1, 3, 32, 32}), InvalidShape);  // scale 2
  EXPECT_THROW(check_geometry(Shape{1, 1, 5, 5}, Shape{1, 3, 20, 20}), InvalidShape);    // not /16
  EXPECT_THROW(check_geometry(Shape{1, 1, 8, 4}, Shape{1, 3, 32, 32}), InvalidShape);    // mixed
  EXPECT_THROW(check_geometry(Shape{1, 3, 8, 8}, Shape{1, 3, 32, 32}), InvalidShape);
  EXPECT_THROW(check_geometry(Shape{2, 1, 8, 8}, Shape{1, 3, 32, 32}), InvalidShape);
}

TEST(ModelConfig, ValidateRejectsBadSettings) {
  EXPECT_NO_THROW(ModelConfig::from_preset("default").validate());
  EXPECT_THROW(ModelConfig::from_preset("huge"), InvalidConfig);
  auto bad = [](auto edit) {
    ModelConfig c = ModelConfig::from_preset("tiny");
    edit(c);
    return c;
  };
  EXPECT_THROW(bad([](ModelConfig& c) { c.stages = 0; }).validate(), InvalidConfig);
  EXPECT_THROW(bad([](ModelConfig& c) { c.stages = 4; }).validate(), InvalidConfig);
  EXPECT_THROW(bad([](ModelConfig& c) { c.channels = 12; }).validate(), InvalidConfig);
  EXPECT_THROW(bad([](ModelConfig& c) { c.freq_groups = 128; }).validate(), InvalidConfig);
  EXPECT_THROW(bad([](ModelConfig& c) { c.hfeb.channels = 10; }).validate(), InvalidConfig);
}

TEST(DsrEi, PaperPresetSizeIsNearTarget) {
  const DsrEi<float> model(ModelConfig::from_preset("paper"), 1);
  const double n = double(model.parameter_count());
  EXPECT_GT(n, 0.7 * 25e6);
  EXPECT_LT(n, 1.3 * 25e6);
}

TEST(DsrEi, GradientsMatchFiniteDifferences) {
  expect_gradients({"affm", "cross_stage_fusion", "full_model_tiny"});
}
