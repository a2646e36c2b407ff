#include "simsam/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <mutex>
#include <thread>

#include <fmt/format.h>

#include "simsam/metrics.hpp"

namespace simsam::pipeline {

std::string_view to_string(ClickSource s) noexcept {
  return s == ClickSource::kTopK ? "topk" : "random";
}

std::string_view to_string(Aggregation a) noexcept {
  switch (a) {
    case Aggregation::kMedoid:
      return "medoid";
    case Aggregation::kPixelMean:
      return "mean";
    case Aggregation::kNone:
      return "none";
  }
  return "none";
}

ClickSource parse_click_source(std::string_view text) {
  if (text == "topk" || text == "top_k") return ClickSource::kTopK;
  if (text == "random") return ClickSource::kRandom;
  throw Error(ErrorCode::kConfig, fmt::format("unknown click source '{}'", text));
}

Aggregation parse_aggregation(std::string_view text) {
  if (text == "medoid") return Aggregation::kMedoid;
  if (text == "mean" || text == "pixel_mean") return Aggregation::kPixelMean;
  if (text == "none") return Aggregation::kNone;
  throw Error(ErrorCode::kConfig, fmt::format("unknown aggregation '{}'", text));
}

void PipelineConfig::validate() const {
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "threshold must lie in (0, 1)");
  }
  if (workers == 0) throw Error(ErrorCode::kInvalidArgument, "workers must be >= 1");
}

void CandidateSet::validate() const {
  if (bin_masks.empty()) throw Error(ErrorCode::kInvalidArgument, "empty candidate set");
  if (clicks.size() != bin_masks.size() || prob_masks.size() != bin_masks.size()) {
    throw Error(ErrorCode::kInvalidArgument, "candidate set lists differ in length");
  }
  const ImageShape& shape = bin_masks.front().shape();
  for (std::size_t i = 0; i < bin_masks.size(); ++i) {
    require_same_shape(shape, bin_masks[i].shape());
    require_same_shape(shape, prob_masks[i].shape());
  }
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  const std::size_t threads = std::min(workers, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto body = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(n);
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(threads - 1);
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(body);
  body();
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

seg::SegmenterPrompt base_prompt(const BoundingBox& box, const PipelineConfig& cfg) {
  return seg::SegmenterPrompt{box, cfg.user_clicks};
}

}  // namespace

CandidateSet generate_candidates(const seg::Segmenter& segmenter, const seg::ImageEmbedding& emb,
                                 const BoundingBox& box, const PipelineConfig& cfg) {
  cfg.validate();
  box.validate(emb.shape());
  const ProbabilityMask baseline = segmenter.decode(emb, base_prompt(box, cfg));
  return generate_candidates(segmenter, emb, box, baseline, cfg);
}

CandidateSet generate_candidates(const seg::Segmenter& segmenter, const seg::ImageEmbedding& emb,
                                 const BoundingBox& box, const ProbabilityMask& baseline,
                                 const PipelineConfig& cfg) {
  cfg.validate();
  box.validate(emb.shape());
  require_same_shape(emb.shape(), baseline.shape());
  if (cfg.k > emb.shape().pixel_count()) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("k = {} exceeds the {} pixels of the image", cfg.k,
                            emb.shape().pixel_count()));
  }

  CandidateSet out;
  out.clicks = cfg.click_source == ClickSource::kTopK
                   ? top_k_clicks(error_transform(baseline), baseline, cfg.k)
                   : random_clicks(emb.shape(), baseline, cfg.k, cfg.seed);
  out.prob_masks.resize(cfg.k);
  out.bin_masks.resize(cfg.k);
  parallel_for(cfg.k, cfg.workers, [&](std::size_t i) {
    seg::SegmenterPrompt prompt = base_prompt(box, cfg);
    prompt.clicks.push_back(out.clicks[i]);
    out.prob_masks[i] = segmenter.decode(emb, prompt);
    out.bin_masks[i] = threshold(out.prob_masks[i], cfg.threshold);
  });
  return out;
}

std::vector<double> medoid_scores(std::span<const BinaryMask> masks) {
  if (masks.empty()) throw Error(ErrorCode::kInvalidArgument, "empty candidate set");
  const std::size_t k = masks.size();
  std::vector<std::size_t> counts(k);
  for (std::size_t a = 0; a < k; ++a) {
    require_same_shape(masks[0].shape(), masks[a].shape());
    counts[a] = masks[a].count();
  }
  std::vector<double> pair(k * k, 1.0);
  for (std::size_t a = 0; a < k; ++a) {
    const auto wa = masks[a].words();
    for (std::size_t b = a + 1; b < k; ++b) {
      const auto wb = masks[b].words();
      const std::size_t inter = popcount_and(wa, wb);
      const std::size_t uni = counts[a] + counts[b] - inter;
      // IoU of two empty masks is 1.
      const double v =
          uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
      pair[a * k + b] = pair[b * k + a] = v;
    }
  }
  std::vector<double> scores(k, 0.0);
  for (std::size_t a = 0; a < k; ++a) {
    double sum = 0.0;
    for (std::size_t b = 0; b < k; ++b) sum += pair[a * k + b];
    scores[a] = sum / static_cast<double>(k);
  }
  return scores;
}

std::size_t medoid_index(std::span<const BinaryMask> masks) {
  const auto scores = medoid_scores(masks);
  // max_element keeps the first of equal maxima.
  return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) -
                                  scores.begin());
}

BinaryMask aggregate_medoid(const CandidateSet& cands) {
  cands.validate();
  return cands.bin_masks[medoid_index(cands.bin_masks)];
}

BinaryMask aggregate_pixel_mean(const CandidateSet& cands, double threshold_value) {
  cands.validate();
  const ImageShape& shape = cands.prob_masks.front().shape();
  std::vector<double> mean(shape.pixel_count(), 0.0);
  for (const auto& p : cands.prob_masks) {
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += p[i];
  }
  const auto k = static_cast<double>(cands.size());
  for (auto& v : mean) v = std::clamp(v / k, 0.0, 1.0);
  return threshold(ProbabilityMask(shape, std::move(mean)), threshold_value);
}

RunResult run(const io::Image& image, const BoundingBox& box, const PipelineConfig& cfg,
              const seg::Segmenter& segmenter) {
  cfg.validate();
  box.validate(image.shape);
  const auto start = Clock::now();
  const seg::ImageEmbedding emb = segmenter.encode(image);
  const double encode_ms = elapsed_ms(start);
  RunResult result = run_with_embedding(segmenter, emb, box, cfg);
  result.timing.encode_ms = encode_ms;
  return result;
}

RunResult run_with_embedding(const seg::Segmenter& segmenter, const seg::ImageEmbedding& emb,
                             const BoundingBox& box, const PipelineConfig& cfg) {
  cfg.validate();
  box.validate(emb.shape());
  RunResult result;

  auto start = Clock::now();
  result.baseline_prob = segmenter.decode(emb, base_prompt(box, cfg));
  result.baseline_mask = threshold(result.baseline_prob, cfg.threshold);
  result.timing.baseline_ms = elapsed_ms(start);

  if (cfg.aggregation == Aggregation::kNone) {
    result.final_mask = result.baseline_mask;
    result.union_mask = result.baseline_mask;
    result.counters = emb.counters();
    return result;
  }

  start = Clock::now();
  result.candidates = generate_candidates(segmenter, emb, box, result.baseline_prob, cfg);
  result.timing.candidates_ms = elapsed_ms(start);

  start = Clock::now();
  if (cfg.aggregation == Aggregation::kMedoid) {
    result.medoid_scores = medoid_scores(result.candidates.bin_masks);
    const auto best = static_cast<std::size_t>(
        std::max_element(result.medoid_scores.begin(), result.medoid_scores.end()) -
        result.medoid_scores.begin());
    result.medoid_index = best;
    result.final_mask = result.candidates.bin_masks[best];
  } else {
    result.final_mask = aggregate_pixel_mean(result.candidates, cfg.threshold);
  }
  result.union_mask = mask_union(result.candidates.bin_masks);
  result.timing.aggregation_ms = elapsed_ms(start);
  result.counters = emb.counters();
  return result;
}

}  // namespace simsam::pipeline
