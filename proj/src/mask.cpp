#include "simsam/mask.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

namespace simsam {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kEmptyMask: return "empty_mask";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kOutOfBounds: return "out_of_bounds";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kDecode: return "decode";
    case ErrorCode::kUnsupportedMedia: return "unsupported_media";
    case ErrorCode::kTooLarge: return "too_large";
    case ErrorCode::kBackend: return "backend";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kNotFound: return "not_found";
  }
  return "unknown";
}

void ImageShape::validate() const {
  if (height == 0 || width == 0) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("image shape must be non-empty, got {}x{}", height, width));
  }
}

void require_same_shape(const ImageShape& a, const ImageShape& b) {
  if (a != b) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("shape mismatch: {}x{} vs {}x{}", a.height, a.width,
                            b.height, b.width));
  }
}

// ---------------------------------------------------------------------------

ProbabilityMask::ProbabilityMask(ImageShape shape, double fill)
    : ProbabilityMask(shape, std::vector<double>(shape.pixel_count(), fill)) {}

ProbabilityMask::ProbabilityMask(ImageShape shape, std::vector<double> values)
    : shape_(shape), values_(std::move(values)) {
  shape_.validate();
  if (values_.size() != shape_.pixel_count()) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("probability mask has {} values for {} pixels",
                            values_.size(), shape_.pixel_count()));
  }
  // Branch-free scan first; NaN fails both comparisons.
  bool ok = true;
  for (double v : values_) ok &= (v >= 0.0) & (v <= 1.0);
  if (ok) return;
  for (double v : values_) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("probability {} outside [0, 1]", v));
    }
  }
}

// ---------------------------------------------------------------------------

BinaryMask::BinaryMask(ImageShape shape, bool fill) : shape_(shape) {
  shape_.validate();
  words_.assign((shape_.pixel_count() + 63) / 64, fill ? ~std::uint64_t{0} : 0);
  clear_padding();
}

BinaryMask::BinaryMask(ImageShape shape, const std::vector<bool>& values)
    : BinaryMask(shape, false) {
  if (values.size() != shape_.pixel_count()) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("binary mask has {} values for {} pixels", values.size(),
                            shape_.pixel_count()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i]) set(i, true);
  }
}

BinaryMask BinaryMask::from_words(ImageShape shape, std::vector<std::uint64_t> words) {
  BinaryMask out(shape);
  if (words.size() != out.words_.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("{} packed words for {} pixels", words.size(),
                            shape.pixel_count()));
  }
  out.words_ = std::move(words);
  out.clear_padding();
  return out;
}

void BinaryMask::clear_padding() noexcept {
  const std::size_t tail = shape_.pixel_count() & 63;
  if (tail != 0 && !words_.empty()) {
    words_.back() &= (std::uint64_t{1} << tail) - 1;
  }
}

// x86-64 builds carry a hardware-popcnt clone picked at load time.
#if defined(__x86_64__) && defined(__GNUC__) && !defined(__clang__)
#define SIMSAM_POPCNT_CLONES __attribute__((target_clones("popcnt", "default")))
#else
#define SIMSAM_POPCNT_CLONES
#endif

SIMSAM_POPCNT_CLONES
std::size_t popcount_words(std::span<const std::uint64_t> words) noexcept {
  std::size_t total = 0;
  for (std::uint64_t w : words) total += static_cast<std::size_t>(std::popcount(w));
  return total;
}

SIMSAM_POPCNT_CLONES
std::size_t popcount_and(std::span<const std::uint64_t> a,
                         std::span<const std::uint64_t> b) noexcept {
  std::size_t total = 0;
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) total += static_cast<std::size_t>(std::popcount(a[i] & b[i]));
  return total;
}

std::size_t BinaryMask::count() const noexcept { return popcount_words(words_); }

BinaryMask BinaryMask::complement() const {
  BinaryMask out = *this;
  for (auto& w : out.words_) w = ~w;
  out.clear_padding();
  return out;
}

std::size_t intersection_count(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a.shape(), b.shape());
  return popcount_and(a.words(), b.words());
}

std::size_t union_count(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a.shape(), b.shape());
  return a.count() + b.count() - popcount_and(a.words(), b.words());
}

// ---------------------------------------------------------------------------

ErrorProbabilityMap::ErrorProbabilityMap(ImageShape shape, std::vector<double> values)
    : shape_(shape), values_(std::move(values)) {
  shape_.validate();
  if (values_.size() != shape_.pixel_count()) {
    throw Error(ErrorCode::kShapeMismatch, "error map size does not match its shape");
  }
  for (double v : values_) {
    if (!(v >= 0.0 && v <= 0.5)) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("error probability {} outside [0, 0.5]", v));
    }
  }
}

void BoundingBox::validate(const ImageShape& shape) const {
  if (row_min > row_max || col_min > col_max) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("inverted box rows [{}, {}] cols [{}, {}]", row_min, row_max,
                            col_min, col_max));
  }
  if (!shape.contains(row_max, col_max)) {
    throw Error(ErrorCode::kOutOfBounds,
                fmt::format("box corner ({}, {}) outside {}x{} image", row_max, col_max,
                            shape.height, shape.width));
  }
}

// ---------------------------------------------------------------------------

BinaryMask threshold(const ProbabilityMask& p, double t) {
  if (!(t > 0.0 && t < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("threshold {} must lie in (0, 1)", t));
  }
  const auto values = p.values();
  std::vector<std::uint64_t> words((values.size() + 63) / 64, 0);
  for (std::size_t w = 0; w < words.size(); ++w) {
    const std::size_t begin = w * 64;
    const std::size_t end = std::min(begin + 64, values.size());
    std::uint64_t bits = 0;
    for (std::size_t i = begin; i < end; ++i) {
      bits |= static_cast<std::uint64_t>(values[i] >= t) << (i - begin);
    }
    words[w] = bits;
  }
  return BinaryMask::from_words(p.shape(), std::move(words));
}

ErrorProbabilityMap error_transform(const ProbabilityMask& p) {
  std::vector<double> e(p.values().size());
  std::transform(p.values().begin(), p.values().end(), e.begin(),
                 [](double v) { return 0.5 - std::abs(v - 0.5); });
  return ErrorProbabilityMap(p.shape(), std::move(e));
}

ClickLabel corrective_label(const ProbabilityMask& p, std::size_t i) {
  return p[i] >= 0.5 ? ClickLabel::kNegative : ClickLabel::kPositive;
}

namespace {

ClickPrompt click_at(const ProbabilityMask& p, std::size_t i) {
  const std::size_t w = p.shape().width;
  return ClickPrompt{i / w, i % w, corrective_label(p, i)};
}

void check_click_count(std::size_t k, std::size_t n) {
  if (k == 0 || k > n) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("click count k={} must lie in [1, {}]", k, n));
  }
}

}  // namespace

std::vector<ClickPrompt> top_k_clicks(const ErrorProbabilityMap& e,
                                      const ProbabilityMask& p, std::size_t k) {
  require_same_shape(e.shape(), p.shape());
  const std::size_t n = e.shape().pixel_count();
  check_click_count(k, n);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto values = e.values();
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                    order.end(), [&](std::size_t a, std::size_t b) {
                      if (values[a] != values[b]) return values[a] > values[b];
                      return a < b;
                    });

  std::vector<ClickPrompt> clicks;
  clicks.reserve(k);
  for (std::size_t j = 0; j < k; ++j) clicks.push_back(click_at(p, order[j]));
  return clicks;
}

std::vector<ClickPrompt> random_clicks(const ImageShape& shape, const ProbabilityMask& p,
                                       std::size_t k, std::uint64_t seed) {
  require_same_shape(shape, p.shape());
  const std::size_t n = shape.pixel_count();
  check_click_count(k, n);

  // Partial Fisher-Yates: the first k slots end up a uniform sample.
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  std::mt19937_64 engine(seed);
  std::vector<ClickPrompt> clicks;
  clicks.reserve(k);
  for (std::size_t j = 0; j < k; ++j) {
    std::uniform_int_distribution<std::size_t> pick(j, n - 1);
    std::swap(pool[j], pool[pick(engine)]);
    clicks.push_back(click_at(p, pool[j]));
  }
  return clicks;
}

BoundingBox bbox_from_mask(const BinaryMask& m) {
  const ImageShape& s = m.shape();
  bool found = false;
  BoundingBox box{s.height, s.width, 0, 0};
  for (std::size_t r = 0; r < s.height; ++r) {
    for (std::size_t c = 0; c < s.width; ++c) {
      if (!m.at(r, c)) continue;
      found = true;
      box.row_min = std::min(box.row_min, r);
      box.row_max = std::max(box.row_max, r);
      box.col_min = std::min(box.col_min, c);
      box.col_max = std::max(box.col_max, c);
    }
  }
  if (!found) throw Error(ErrorCode::kEmptyMask, "cannot box an empty mask");
  return box;
}

BinaryMask mask_union(std::span<const BinaryMask> masks) {
  if (masks.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "mask_union needs at least one mask");
  }
  const ImageShape& shape = masks.front().shape();
  std::vector<std::uint64_t> words(masks.front().words().begin(),
                                   masks.front().words().end());
  for (const auto& m : masks.subspan(1)) {
    require_same_shape(shape, m.shape());
    const auto w = m.words();
    for (std::size_t i = 0; i < words.size(); ++i) words[i] |= w[i];
  }
  return BinaryMask::from_words(shape, std::move(words));
}

}  // namespace simsam
