#pragma once

// Experiment driver behind the CLI: evaluate methods over a manifest, build
// the report table, and segment single images with file outputs.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "simsam/dataset.hpp"
#include "simsam/pipeline.hpp"
#include "simsam/segmenter.hpp"
#include "simsam/stats.hpp"

namespace simsam::harness {

enum class Method { kBaseline, kSimsam, kRandomQ, kPixelAgg, kK1 };

std::string_view to_string(Method m) noexcept;
/// baseline | simsam | random_q | pixel_agg | k1. Throws kConfig.
Method parse_method(std::string_view text);

/// baseline: box only. simsam: top-k + medoid. random_q: random clicks +
/// medoid. pixel_agg: top-k + pixel mean. k1: the single most likely click.
pipeline::PipelineConfig method_config(Method m, std::size_t k, std::uint64_t seed);

enum class SplitChoice { kTest, kAll, kManifest };

struct EvalConfig {
  std::filesystem::path manifest;
  SplitChoice split = SplitChoice::kTest;
  std::uint64_t split_seed = 0;
  seg::BackendConfig backend;
  std::vector<Method> methods{Method::kBaseline, Method::kSimsam};
  std::size_t k = 50;
  std::uint64_t seed = 0;
  double nsd_tolerance = 2.0;
  std::size_t workers = 1;
  std::filesystem::path out_dir = "results";

  /// Relative paths resolve against `base_dir`. Throws kConfig.
  static EvalConfig from_toml(std::string_view text, const std::filesystem::path& base_dir);
  static EvalConfig load(const std::filesystem::path& path);
  void validate() const;
};

struct EvalRecord {
  std::string entry_id;
  Method method = Method::kBaseline;
  double dsc = 0.0;
  double nsd = 0.0;
  double latency_ms = 0.0;
  std::uint64_t encode_calls = 0;
  std::uint64_t decode_calls = 0;
  /// Empty-mask conventions that fired: "pred_empty", "both_empty".
  std::vector<std::string> flags;

  nlohmann::ordered_json to_json() const;
};

struct MethodSummary {
  Method method = Method::kBaseline;
  std::size_t n = 0;
  stats::MeanStd dsc;
  stats::MeanStd nsd;
  /// Against baseline; absent for the baseline row or without a baseline.
  std::optional<stats::WilcoxonResult> dsc_test;
  std::optional<stats::WilcoxonResult> nsd_test;
  double latency_median_ms = 0.0;
  double latency_mean_ms = 0.0;
  std::size_t flagged = 0;
};

inline constexpr double kSignificanceLevel = 0.01;

struct ReportTable {
  std::vector<MethodSummary> rows;

  const MethodSummary* find(Method m) const noexcept;
  /// Deterministic: no timing columns.
  std::string to_csv() const;
  /// Aligned table with latency columns and a double-dagger on p < 0.01.
  std::string to_text() const;
};

/// Records must cover the same entries for every method.
ReportTable summarize(const std::vector<EvalRecord>& records, const std::vector<Method>& methods);

struct EvalResult {
  std::vector<dataset::ManifestEntry> entries;
  /// Ordered by entry, then by method in config order.
  std::vector<EvalRecord> records;
  ReportTable table;
};

std::vector<dataset::ManifestEntry> select_entries(const EvalConfig& cfg);

/// Segmenter for one entry: synthetic entries with a scene descriptor get a
/// backend bound to that scene.
std::unique_ptr<seg::Segmenter> segmenter_for(const dataset::LoadedEntry& entry,
                                              const seg::BackendConfig& backend);

EvalResult evaluate(const EvalConfig& cfg);

/// evaluate() plus records.jsonl, report.csv and report.txt in cfg.out_dir.
EvalResult cmd_eval(const EvalConfig& cfg);

struct SegmentOptions {
  std::filesystem::path image;
  std::optional<BoundingBox> box;
  std::optional<std::filesystem::path> auto_box_from;
  /// Scene descriptor; defaults to a sidecar <image>.json when present.
  std::optional<std::filesystem::path> scene;
  seg::BackendConfig backend;
  pipeline::PipelineConfig pipeline;
  std::filesystem::path out_dir = "out";
  bool write_candidates = true;
};

/// Writes mask.png, union.png, overlay.png, result.json and, when asked,
/// candidates/candidate_XX.png.
pipeline::RunResult cmd_segment(const SegmentOptions& opts);

/// "r0,c0,r1,c1". Throws kInvalidArgument.
BoundingBox parse_box(std::string_view text);

/// Gray image tinted with the union (blue) and final mask (green) with the
/// final mask's boundary in red.
io::Image render_overlay(const io::Image& image, const BinaryMask& final_mask,
                         const BinaryMask& union_mask);

}  // namespace simsam::harness
