#pragma once

// SimSAM proper: box-only baseline decode, simulated corrective clicks on the
// baseline's error-probability map, one candidate decode per click, and
// aggregation of the candidate pool.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "simsam/mask.hpp"
#include "simsam/segmenter.hpp"

namespace simsam::pipeline {

enum class ClickSource { kTopK, kRandom };
enum class Aggregation { kMedoid, kPixelMean, kNone };

std::string_view to_string(ClickSource s) noexcept;
std::string_view to_string(Aggregation a) noexcept;
/// Accepts "topk"/"top_k" and "random". Throws kConfig.
ClickSource parse_click_source(std::string_view text);
/// Accepts "medoid", "mean"/"pixel_mean" and "none". Throws kConfig.
Aggregation parse_aggregation(std::string_view text);

struct PipelineConfig {
  std::size_t k = 50;
  ClickSource click_source = ClickSource::kTopK;
  /// Seed for the random click source.
  std::uint64_t seed = 0;
  Aggregation aggregation = Aggregation::kMedoid;
  double threshold = 0.5;
  /// Manual corrections added to the baseline and to every candidate prompt.
  std::vector<ClickPrompt> user_clicks;
  /// Threads for candidate decodes; results do not depend on it.
  std::size_t workers = 1;

  /// k >= 1, threshold in (0, 1), workers >= 1.
  void validate() const;
};

struct CandidateSet {
  std::vector<ClickPrompt> clicks;
  std::vector<ProbabilityMask> prob_masks;
  std::vector<BinaryMask> bin_masks;

  std::size_t size() const noexcept { return bin_masks.size(); }
  /// Equal lengths, at least one candidate, one shape throughout.
  void validate() const;
};

/// Runs fn(i) for i in [0, n) on up to `workers` threads.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

/// Decodes the box-only baseline, then one candidate per simulated click.
/// Throws kInvalidArgument when k exceeds the pixel count.
CandidateSet generate_candidates(const seg::Segmenter& segmenter, const seg::ImageEmbedding& emb,
                                 const BoundingBox& box, const PipelineConfig& cfg);
/// Same, reusing an already decoded baseline.
CandidateSet generate_candidates(const seg::Segmenter& segmenter, const seg::ImageEmbedding& emb,
                                 const BoundingBox& box, const ProbabilityMask& baseline,
                                 const PipelineConfig& cfg);

/// score_k = (1/K) * sum over all k' (self included) of IoU(m_k, m_k').
std::vector<double> medoid_scores(std::span<const BinaryMask> masks);
/// Index of the highest score, lowest index on ties. Throws on an empty set.
std::size_t medoid_index(std::span<const BinaryMask> masks);
BinaryMask aggregate_medoid(const CandidateSet& cands);
/// Per-pixel mean of the candidate probabilities, thresholded at t.
BinaryMask aggregate_pixel_mean(const CandidateSet& cands, double threshold);

struct Timing {
  double encode_ms = 0.0;
  double baseline_ms = 0.0;
  double candidates_ms = 0.0;
  double aggregation_ms = 0.0;

  double total_ms() const noexcept {
    return encode_ms + baseline_ms + candidates_ms + aggregation_ms;
  }
};

struct RunResult {
  BinaryMask final_mask;
  ProbabilityMask baseline_prob;
  BinaryMask baseline_mask;
  /// Empty when aggregation is none.
  CandidateSet candidates;
  /// OR of all candidates; the baseline mask when there are none.
  BinaryMask union_mask;
  std::optional<std::size_t> medoid_index;
  std::vector<double> medoid_scores;
  Timing timing;
  seg::CallCounters counters;
};

/// Encodes `image` once, then runs the configured method.
RunResult run(const io::Image& image, const BoundingBox& box, const PipelineConfig& cfg,
              const seg::Segmenter& segmenter);
/// Runs the configured method on an existing embedding (encode_ms stays 0).
RunResult run_with_embedding(const seg::Segmenter& segmenter, const seg::ImageEmbedding& emb,
                             const BoundingBox& box, const PipelineConfig& cfg);

}  // namespace simsam::pipeline
