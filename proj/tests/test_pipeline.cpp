#include <algorithm>
#include <atomic>
#include <random>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "simsam/mask_io.hpp"
#include "simsam/pipeline.hpp"
#include "simsam/synthetic_segmenter.hpp"
#include "support.hpp"

namespace simsam::pipeline {
namespace {

using testing::expect_code;

seg::SyntheticScene disc_scene(std::size_t side, double radius, double noise, std::uint64_t seed) {
  seg::SceneParams params;
  params.noise_amplitude = noise;
  params.noise_seed = seed;
  const double c = (static_cast<double>(side) - 1.0) / 2.0;
  seg::ShapePrimitive disc{seg::PrimitiveKind::kEllipse, c, c, radius, radius, 0.0, {}};
  return seg::SyntheticScene::from_primitives({side, side}, {disc}, params);
}

struct Fixture {
  seg::SyntheticScene scene;
  seg::SyntheticSegmenter segmenter;
  io::Image image;
  BoundingBox box;

  explicit Fixture(double noise = 0.8, std::uint64_t seed = 7, std::size_t side = 32)
      : scene(disc_scene(side, 10, noise, seed)),
        segmenter(scene),
        image(seg::render_scene_image(scene)),
        box(bbox_from_mask(scene.true_mask)) {}
};

TEST(Config, ParsesNamesAndValidates) {
  EXPECT_EQ(parse_click_source("topk"), ClickSource::kTopK);
  EXPECT_EQ(parse_click_source("random"), ClickSource::kRandom);
  EXPECT_EQ(parse_aggregation("medoid"), Aggregation::kMedoid);
  EXPECT_EQ(parse_aggregation("mean"), Aggregation::kPixelMean);
  EXPECT_EQ(parse_aggregation("none"), Aggregation::kNone);
  EXPECT_EQ(to_string(Aggregation::kPixelMean), "mean");
  expect_code(ErrorCode::kConfig, [] { parse_aggregation("max"); });
  expect_code(ErrorCode::kConfig, [] { parse_click_source("grid"); });
  expect_code(ErrorCode::kInvalidArgument, [] { PipelineConfig{.k = 0}.validate(); });
  expect_code(ErrorCode::kInvalidArgument, [] { PipelineConfig{.threshold = 1.0}.validate(); });
}

TEST(ParallelFor, VisitsEveryIndexOnceAndPropagatesErrors) {
  std::vector<std::atomic<int>> hits(100);
  parallel_for(100, 4, [&](std::size_t i) { hits[i].fetch_add(1); });
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  EXPECT_THROW(parallel_for(10, 3,
                            [](std::size_t i) {
                              if (i == 5) throw Error(ErrorCode::kIo, "boom");
                            }),
               Error);
}

TEST(Candidates, SingleClickAtErrorMaximum) {
  Fixture f(0.0, 0);
  const auto emb = f.segmenter.encode(f.image);
  const auto baseline = f.segmenter.decode(emb, {f.box, {}});
  const auto cands = generate_candidates(f.segmenter, emb, f.box, PipelineConfig{.k = 1});
  ASSERT_EQ(cands.size(), 1u);
  const auto e = error_transform(baseline);
  const auto best = std::max_element(e.values().begin(), e.values().end()) - e.values().begin();
  EXPECT_EQ(cands.clicks[0].row * 32 + cands.clicks[0].col, static_cast<std::size_t>(best));
  EXPECT_EQ(cands.clicks[0].label, corrective_label(baseline, static_cast<std::size_t>(best)));
}

TEST(Candidates, EachCandidateIsBoxPlusOneClick) {
  Fixture f;
  const auto emb = f.segmenter.encode(f.image);
  const PipelineConfig cfg{.k = 6};
  const auto cands = generate_candidates(f.segmenter, emb, f.box, cfg);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const auto p = f.segmenter.decode(emb, {f.box, {cands.clicks[i]}});
    EXPECT_EQ(cands.prob_masks[i], p);
    EXPECT_EQ(cands.bin_masks[i], threshold(p));
  }
  expect_code(ErrorCode::kInvalidArgument, [&] {
    generate_candidates(f.segmenter, emb, f.box, PipelineConfig{.k = 32 * 32 + 1});
  });
}

TEST(Candidates, UserClicksJoinEveryPrompt) {
  Fixture f;
  const auto emb = f.segmenter.encode(f.image);
  const ClickPrompt user{16, 16, ClickLabel::kPositive};
  const PipelineConfig cfg{.k = 3, .user_clicks = {user}};
  const auto cands = generate_candidates(f.segmenter, emb, f.box, cfg);
  const auto baseline = f.segmenter.decode(emb, {f.box, {user}});
  EXPECT_EQ(cands.clicks, top_k_clicks(error_transform(baseline), baseline, 3));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(cands.prob_masks[i], f.segmenter.decode(emb, {f.box, {user, cands.clicks[i]}}));
  }
}

TEST(Candidates, GoldenNoisyDiscK8) {
  Fixture f;
  const auto emb = f.segmenter.encode(f.image);
  const auto cands = generate_candidates(f.segmenter, emb, f.box, PipelineConfig{.k = 8});
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const auto rle = io::rle_encode(cands.bin_masks[i]);
    j.push_back({{"row", cands.clicks[i].row},
                 {"col", cands.clicks[i].col},
                 {"label", cands.clicks[i].label == ClickLabel::kPositive ? "positive" : "negative"},
                 {"area", cands.bin_masks[i].count()},
                 {"rle", rle.counts}});
  }
  testing::expect_golden("candidates_disc32_seed7_k8.json", j.dump(1) + "\n");
}

TEST(Counters, EncodeOnceDecodePerPrompt) {
  Fixture f;
  const auto simsam = run(f.image, f.box, PipelineConfig{.k = 50}, f.segmenter);
  EXPECT_EQ(simsam.counters, (seg::CallCounters{1, 51}));
  const auto base = run(f.image, f.box, PipelineConfig{.aggregation = Aggregation::kNone}, f.segmenter);
  EXPECT_EQ(base.counters, (seg::CallCounters{1, 1}));
  EXPECT_FALSE(base.medoid_index.has_value());
}

TEST(Medoid, SoleCandidateAndMajority) {
  std::mt19937_64 rng(1);
  const auto a = testing::random_mask({8, 8}, 0.5, rng);
  const auto b = testing::random_mask({8, 8}, 0.5, rng);
  ASSERT_NE(a, b);
  EXPECT_EQ(medoid_index(std::vector<BinaryMask>{b}), 0u);
  EXPECT_EQ(medoid_index(std::vector<BinaryMask>{b, a, a}), 1u);
  EXPECT_EQ(medoid_index(std::vector<BinaryMask>{a, b, a}), 0u);
  expect_code(ErrorCode::kInvalidArgument, [] { medoid_index(std::vector<BinaryMask>{}); });
}

TEST(Medoid, MatchesBruteForceOracle) {
  std::mt19937_64 rng(500);
  for (int t = 0; t < 300; ++t) {
    const std::size_t k = 1 + rng() % 25;
    std::vector<BinaryMask> masks;
    std::vector<oracle::Grid> grids;
    for (std::size_t i = 0; i < k; ++i) {
      masks.push_back(t % 3 == 0 ? testing::random_mask({16, 16}, 0.5, rng)
                                 : testing::random_blocky_mask({16, 16}, rng));
      grids.push_back(oracle::to_grid(masks.back()));
    }
    // Duplicates create exact ties in the scores.
    if (k > 2 && t % 2 == 0) {
      masks[k - 1] = masks[0];
      grids[k - 1] = grids[0];
    }
    EXPECT_EQ(medoid_index(masks), oracle::medoid(grids)) << "trial " << t;
  }
}

TEST(Medoid, ScoresIncludeTheSelfTerm) {
  const auto a = testing::mask_from_rows({"##", ".."});
  const auto b = testing::mask_from_rows({".#", ".#"});
  const auto s = medoid_scores(std::vector<BinaryMask>{a, b});
  EXPECT_DOUBLE_EQ(s[0], (1.0 + 1.0 / 3.0) / 2.0);
  EXPECT_DOUBLE_EQ(s[1], s[0]);
}

TEST(Medoid, WinnerMaskIsPermutationInvariant) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    std::vector<BinaryMask> masks;
    for (int i = 0; i < 9; ++i) masks.push_back(testing::random_blocky_mask({12, 12}, rng));
    const auto scores = medoid_scores(masks);
    const auto best = *std::max_element(scores.begin(), scores.end());
    if (std::count(scores.begin(), scores.end(), best) > 1) continue;
    const BinaryMask winner = masks[medoid_index(masks)];
    std::shuffle(masks.begin(), masks.end(), rng);
    EXPECT_EQ(masks[medoid_index(masks)], winner);
  }
}

TEST(PixelMean, ArithmeticAndIdentity) {
  CandidateSet cs;
  cs.clicks = {{0, 0, ClickLabel::kPositive}, {0, 1, ClickLabel::kPositive}};
  cs.prob_masks = {ProbabilityMask({1, 2}, {0.9, 0.2}), ProbabilityMask({1, 2}, {0.3, 0.2})};
  for (const auto& p : cs.prob_masks) cs.bin_masks.push_back(threshold(p));
  EXPECT_EQ(aggregate_pixel_mean(cs, 0.5), testing::mask_from_rows({"#."}));

  CandidateSet same;
  const ProbabilityMask p({2, 3}, {0.1, 0.6, 0.5, 0.49, 0.9, 0.0});
  for (int i = 0; i < 4; ++i) {
    same.clicks.push_back({0, 0, ClickLabel::kPositive});
    same.prob_masks.push_back(p);
    same.bin_masks.push_back(threshold(p));
  }
  EXPECT_EQ(aggregate_pixel_mean(same, 0.5), threshold(p));
}

TEST(PixelMean, MatchesReferenceMeanThenThreshold) {
  std::mt19937_64 rng(44);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    const std::size_t k = 1 + rng() % 12;
    CandidateSet cs;
    for (std::size_t i = 0; i < k; ++i) {
      std::vector<double> v(100);
      for (auto& x : v) x = u(rng);
      cs.prob_masks.emplace_back(ImageShape{10, 10}, v);
      cs.bin_masks.push_back(threshold(cs.prob_masks.back()));
      cs.clicks.push_back({0, 0, ClickLabel::kPositive});
    }
    const auto got = aggregate_pixel_mean(cs, 0.5);
    for (std::size_t px = 0; px < 100; ++px) {
      long double sum = 0;
      for (const auto& p : cs.prob_masks) sum += p[px];
      const long double mean = sum / static_cast<long double>(k);
      if (std::abs(static_cast<double>(mean) - 0.5) < 1e-12) continue;
      EXPECT_EQ(got.test(px), mean >= 0.5L);
    }
  }
}

TEST(Run, NoneAggregationReturnsBaseline) {
  Fixture f;
  const auto r = run(f.image, f.box, PipelineConfig{.aggregation = Aggregation::kNone}, f.segmenter);
  const auto emb = f.segmenter.encode(f.image);
  EXPECT_EQ(r.final_mask, threshold(f.segmenter.decode(emb, {f.box, {}})));
  EXPECT_EQ(r.union_mask, r.final_mask);
  EXPECT_EQ(r.candidates.size(), 0u);
}

TEST(Run, KOneReturnsTheClickConditionedMask) {
  Fixture f;
  const auto r = run(f.image, f.box, PipelineConfig{.k = 1}, f.segmenter);
  ASSERT_EQ(r.candidates.size(), 1u);
  EXPECT_EQ(r.final_mask, r.candidates.bin_masks[0]);
  EXPECT_EQ(r.medoid_index, 0u);
  EXPECT_EQ(r.union_mask, r.final_mask);
}

TEST(Run, MedoidResultIsACandidateAndInsideTheUnion) {
  Fixture f;
  const auto r = run(f.image, f.box, PipelineConfig{.k = 20}, f.segmenter);
  ASSERT_TRUE(r.medoid_index.has_value());
  EXPECT_EQ(r.final_mask, r.candidates.bin_masks[*r.medoid_index]);
  EXPECT_EQ(intersection_count(r.final_mask, r.union_mask), r.final_mask.count());
  EXPECT_EQ(r.union_mask, mask_union(r.candidates.bin_masks));
  EXPECT_EQ(r.medoid_scores, medoid_scores(r.candidates.bin_masks));
}

TEST(Run, DeterministicAcrossRepeatsAndWorkerCounts) {
  Fixture f;
  for (auto source : {ClickSource::kTopK, ClickSource::kRandom}) {
    const PipelineConfig one{.k = 30, .click_source = source, .seed = 5, .workers = 1};
    PipelineConfig many = one;
    many.workers = 4;
    const auto a = run(f.image, f.box, one, f.segmenter);
    const auto b = run(f.image, f.box, one, f.segmenter);
    const auto c = run(f.image, f.box, many, f.segmenter);
    EXPECT_EQ(a.final_mask, b.final_mask);
    EXPECT_EQ(a.candidates.clicks, c.candidates.clicks);
    EXPECT_EQ(a.candidates.prob_masks, c.candidates.prob_masks);
    EXPECT_EQ(a.final_mask, c.final_mask);
  }
}

TEST(Run, RefinementImprovesNoisyDisc) {
  Fixture f;
  const auto base = run(f.image, f.box, PipelineConfig{.aggregation = Aggregation::kNone}, f.segmenter);
  const auto simsam = run(f.image, f.box, PipelineConfig{}, f.segmenter);
  EXPECT_GE(oracle::dsc(oracle::to_grid(simsam.final_mask), oracle::to_grid(f.scene.true_mask)),
            oracle::dsc(oracle::to_grid(base.final_mask), oracle::to_grid(f.scene.true_mask)));
}

}  // namespace
}  // namespace simsam::pipeline
