#include <cmath>
#include <random>

#include <fmt/format.h>
#include <gtest/gtest.h>

#include "simsam/mask_io.hpp"
#include "simsam/metrics.hpp"
#include "simsam/synthetic_segmenter.hpp"
#include "support.hpp"

namespace simsam::seg {
namespace {

using testing::expect_code;

SyntheticScene disc_scene(std::size_t side, double radius, double noise, std::uint64_t seed) {
  SceneParams params;
  params.noise_amplitude = noise;
  params.noise_seed = seed;
  const double c = (static_cast<double>(side) - 1.0) / 2.0;
  ShapePrimitive disc{PrimitiveKind::kEllipse, c, c, radius, radius, 0.0, {}};
  return SyntheticScene::from_primitives({side, side}, {disc}, params);
}

BoundingBox full_box(const ImageShape& s) { return {0, 0, s.height - 1, s.width - 1}; }

TEST(SceneParams, RejectsNonPhysicalValues) {
  auto bad = [](auto mutate) {
    SceneParams p;
    mutate(p);
    expect_code(ErrorCode::kInvalidArgument, [&] { p.validate(); });
  };
  bad([](SceneParams& p) { p.blur_radius = -1; });
  bad([](SceneParams& p) { p.noise_amplitude = -0.1; });
  bad([](SceneParams& p) { p.noise_cell = 0.5; });
  bad([](SceneParams& p) { p.sdf_scale = 0; });
  bad([](SceneParams& p) { p.click_radius = 0.5; });
  bad([](SceneParams& p) { p.click_strength = 0; });
}

TEST(Primitives, EllipseAndBlobRasterize) {
  ShapePrimitive e{PrimitiveKind::kEllipse, 10, 10, 3, 6, 0.0, {}};
  const auto m = render_primitives({21, 21}, {e});
  EXPECT_TRUE(m.at(10, 16));
  EXPECT_FALSE(m.at(10, 17));
  EXPECT_TRUE(m.at(13, 10));
  EXPECT_FALSE(m.at(14, 10));
  // A quarter turn swaps the axes.
  e.angle = std::acos(0.0);
  const auto turned = render_primitives({21, 21}, {e});
  EXPECT_TRUE(turned.at(16, 10));
  EXPECT_FALSE(turned.at(10, 16));

  ShapePrimitive round{PrimitiveKind::kBlob, 10, 10, 5, 5, 0.0, {}};
  const auto disc = render_primitives({21, 21}, {round});
  std::size_t n = 0;
  for (long r = 0; r < 21; ++r) {
    for (long c = 0; c < 21; ++c) n += (r - 10) * (r - 10) + (c - 10) * (c - 10) <= 25;
  }
  EXPECT_EQ(disc.count(), n);
  expect_code(ErrorCode::kInvalidArgument, [] {
    SyntheticScene::from_primitives({8, 8}, {{PrimitiveKind::kEllipse, 4, 4, 0, 2, 0, {}}}, {});
  });
}

TEST(SignedDistance, PositiveInsideNegativeOutside) {
  const auto m = testing::mask_from_rows({".....", ".###.", ".###.", ".###.", "....."});
  const auto d = signed_distance(m);
  EXPECT_DOUBLE_EQ(d[12], 1.5);
  EXPECT_DOUBLE_EQ(d[6], 0.5);
  EXPECT_DOUBLE_EQ(d[0], -(std::sqrt(2.0) - 0.5));
  EXPECT_DOUBLE_EQ(d[1], -0.5);
}

TEST(GaussianBlur, PreservesConstantsAndMass) {
  const ImageShape s{9, 13};
  const std::vector<double> flat(s.pixel_count(), 3.0);
  for (double v : gaussian_blur(flat, s, 2.0)) EXPECT_NEAR(v, 3.0, 1e-12);
  std::vector<double> spike(s.pixel_count(), 0.0);
  spike[s.index(4, 6)] = 1.0;
  const auto b = gaussian_blur(spike, s, 1.0);
  double total = 0;
  for (double v : b) total += v;
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_EQ(gaussian_blur(spike, s, 0.0), spike);
}

TEST(ValueNoise, BoundedAndSeeded) {
  const ImageShape s{40, 50};
  const auto a = value_noise(s, 12, 1);
  EXPECT_EQ(a, value_noise(s, 12, 1));
  EXPECT_NE(a, value_noise(s, 12, 2));
  for (double v : a) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(SyntheticSegmenter, NoiselessFullBoxRecoversTruth) {
  for (std::uint64_t seed : {0u, 1u}) {
    const auto scene = disc_scene(40, 11.5, 0.0, seed);
    SyntheticSegmenter seg(scene);
    const auto emb = seg.encode(render_scene_image(scene));
    const auto p = seg.decode(emb, {full_box(scene.shape), {}});
    EXPECT_EQ(threshold(p), scene.true_mask);
    EXPECT_TRUE(metrics::error_mask(threshold(p), scene.true_mask).empty());
  }
}

TEST(SyntheticSegmenter, DerivesSceneFromImageWithoutBinding) {
  const auto scene = disc_scene(30, 8, 0.0, 0);
  SyntheticSegmenter seg(scene.params);
  const auto emb = seg.encode(render_scene_image(scene));
  EXPECT_EQ(threshold(seg.decode(emb, {full_box(scene.shape), {}})), scene.true_mask);
}

TEST(SyntheticSegmenter, ZeroOutsideTheBox) {
  const auto scene = disc_scene(32, 10, 0.8, 3);
  SyntheticSegmenter seg(scene);
  const auto emb = seg.encode(render_scene_image(scene));
  const BoundingBox box{8, 9, 20, 22};
  const auto p = seg.decode(emb, {box, {{15, 15, ClickLabel::kPositive}}});
  for (std::size_t r = 0; r < 32; ++r) {
    for (std::size_t c = 0; c < 32; ++c) {
      if (!box.contains(r, c)) {
        EXPECT_EQ(p.at(r, c), 0.0);
      }
    }
  }
}

TEST(SyntheticSegmenter, ClicksMoveProbabilityOnTheirSideOnly) {
  const auto scene = disc_scene(32, 10, 0.8, 7);
  SyntheticSegmenter seg(scene);
  const auto emb = seg.encode(render_scene_image(scene));
  const auto box = full_box(scene.shape);
  const auto base = seg.decode(emb, {box, {}});
  // Inside the disc near its edge.
  const ClickPrompt pos{15, 24, ClickLabel::kPositive};
  ASSERT_TRUE(scene.true_mask.at(15, 24));
  const auto up = seg.decode(emb, {box, {pos}});
  EXPECT_GT(up.at(15, 24), base.at(15, 24));
  for (std::size_t i = 0; i < scene.shape.pixel_count(); ++i) {
    if (scene.true_mask.test(i)) {
      EXPECT_GE(up[i], base[i]);
    } else {
      EXPECT_EQ(up[i], base[i]);
    }
  }
  const ClickPrompt neg{15, 27, ClickLabel::kNegative};
  ASSERT_FALSE(scene.true_mask.at(15, 27));
  const auto down = seg.decode(emb, {box, {neg}});
  EXPECT_LT(down.at(15, 27), base.at(15, 27));
  for (std::size_t i = 0; i < scene.shape.pixel_count(); ++i) {
    if (scene.true_mask.test(i)) {
      EXPECT_EQ(down[i], base[i]);
    } else {
      EXPECT_LE(down[i], base[i]);
    }
  }
}

TEST(SyntheticSegmenter, DeterministicAcrossEncodes) {
  const auto scene = disc_scene(32, 9, 0.8, 7);
  SyntheticSegmenter seg(scene);
  const auto img = render_scene_image(scene);
  const SegmenterPrompt prompt{full_box(scene.shape), {{4, 4, ClickLabel::kNegative}}};
  EXPECT_EQ(seg.decode(seg.encode(img), prompt), seg.decode(seg.encode(img), prompt));
}

TEST(SyntheticSegmenter, NoisyDiscDiffersFromTruthGolden) {
  const auto scene = disc_scene(32, 10, 0.8, 7);
  SyntheticSegmenter seg(scene);
  const auto p = seg.decode(seg.encode(render_scene_image(scene)), {full_box(scene.shape), {}});
  const double d = metrics::dsc(threshold(p), scene.true_mask);
  EXPECT_LT(d, 1.0);
  testing::expect_golden("noisy_disc_seed7_dsc.txt", fmt::format("{:.17g}\n", d));
}

TEST(SyntheticSegmenter, CountsEncodesAndDecodes) {
  const auto scene = disc_scene(32, 10, 0.8, 7);
  SyntheticSegmenter seg(scene);
  const auto emb = seg.encode(render_scene_image(scene));
  EXPECT_EQ(emb.counters(), (CallCounters{1, 0}));
  EXPECT_EQ(predicted_latency_counters(emb), (CallCounters{1, 0}));
  const auto copy = emb;
  seg.decode(copy, {full_box(scene.shape), {}});
  EXPECT_EQ(emb.counters(), (CallCounters{1, 1}));
  for (int i = 0; i < 50; ++i) seg.decode(emb, {full_box(scene.shape), {{1, 1, ClickLabel::kNegative}}});
  EXPECT_EQ(emb.counters(), (CallCounters{1, 51}));
}

TEST(SyntheticSegmenter, ValidatesPromptsAndShapes) {
  const auto scene = disc_scene(16, 5, 0.0, 0);
  SyntheticSegmenter seg(scene);
  const auto emb = seg.encode(render_scene_image(scene));
  expect_code(ErrorCode::kInvalidArgument, [&] { seg.decode(emb, {}); });
  expect_code(ErrorCode::kOutOfBounds, [&] { seg.decode(emb, {BoundingBox{0, 0, 16, 3}, {}}); });
  expect_code(ErrorCode::kOutOfBounds,
              [&] { seg.decode(emb, {std::nullopt, {{3, 16, ClickLabel::kPositive}}}); });
  expect_code(ErrorCode::kInvalidArgument, [&] { seg.encode(io::Image(ImageShape{8, 8}, 1)); });
  // Click-only prompts decode over the whole image.
  EXPECT_NO_THROW(seg.decode(emb, {std::nullopt, {{8, 8, ClickLabel::kPositive}}}));
}

class ForeignPayload : public EmbeddingPayload {};

class ForeignSegmenter : public Segmenter {
 public:
  std::string_view backend_id() const noexcept override { return "foreign"; }

 protected:
  std::shared_ptr<const EmbeddingPayload> encode_payload(const io::Image&) const override {
    return std::make_shared<ForeignPayload>();
  }
  ProbabilityMask decode_payload(const ImageEmbedding& emb, const SegmenterPrompt&) const override {
    return ProbabilityMask(emb.shape());
  }
};

TEST(Segmenter, RejectsEmbeddingsFromAnotherBackend) {
  const auto scene = disc_scene(16, 5, 0.0, 0);
  SyntheticSegmenter synth(scene);
  ForeignSegmenter foreign;
  const auto img = render_scene_image(scene);
  const auto foreign_emb = foreign.encode(img);
  expect_code(ErrorCode::kBackend, [&] { synth.decode(foreign_emb, {full_box(scene.shape), {}}); });
  expect_code(ErrorCode::kBackend,
              [&] { foreign.decode(synth.encode(img), {full_box(scene.shape), {}}); });
}

TEST(Segmenter, FactoryBuildsSyntheticBackend) {
  const auto seg = make_segmenter({BackendKind::kSynthetic, {}});
  EXPECT_EQ(seg->backend_id(), "synthetic");
#ifndef SIMSAM_HAS_ONNXRUNTIME
  expect_code(ErrorCode::kBackend, [] { make_segmenter({BackendKind::kNeural, "/tmp"}); });
#endif
}

TEST(SceneJson, RoundTrips) {
  SceneParams params;
  params.noise_seed = 99;
  params.click_radius = 7;
  ShapePrimitive blob{PrimitiveKind::kBlob, 20, 22, 9, 9, 0.0, {{0.1, 0.3}, {0.05, 1.2}}};
  ShapePrimitive ell{PrimitiveKind::kEllipse, 10, 12, 4, 6, 0.7, {}};
  const auto scene = SyntheticScene::from_primitives({40, 44}, {blob, ell}, params);
  const auto back = scene_from_json(scene_to_json(scene));
  EXPECT_EQ(back.true_mask, scene.true_mask);
  EXPECT_EQ(back.params.noise_seed, 99u);
  EXPECT_EQ(back.params.click_radius, 7.0);
  EXPECT_EQ(scene_to_json(back), scene_to_json(scene));

  testing::TempDir dir("scene_json");
  save_scene(dir / "s.json", scene);
  EXPECT_EQ(load_scene(dir / "s.json").true_mask, scene.true_mask);
}

TEST(SceneJson, RejectsMalformedDescriptors) {
  expect_code(ErrorCode::kConfig, [] { scene_from_json(nlohmann::json::object()); });
  expect_code(ErrorCode::kConfig, [] {
    scene_from_json({{"height", 8}, {"width", 8}, {"shapes", nlohmann::json::array()}});
  });
  expect_code(ErrorCode::kConfig, [] {
    scene_from_json({{"height", 8}, {"width", 8}, {"shapes", {{{"type", "star"}}}}});
  });
}

TEST(SceneImage, ForegroundIsBrightOnTheTrueMask) {
  const auto scene = disc_scene(24, 7, 0.8, 1);
  const auto img = render_scene_image(scene);
  EXPECT_EQ(io::image_to_mask(img), scene.true_mask);
}

}  // namespace
}  // namespace simsam::seg
