#pragma once

// Dense-grid domain types shared by every module: image shapes, per-pixel
// probability maps, bit-packed binary masks, click and box prompts, plus the
// probability -> error-probability -> click math.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "simsam/error.hpp"

namespace simsam {

struct ImageShape {
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t pixel_count() const noexcept { return height * width; }
  bool contains(std::size_t row, std::size_t col) const noexcept {
    return row < height && col < width;
  }
  std::size_t index(std::size_t row, std::size_t col) const noexcept {
    return row * width + col;
  }

  /// Throws kInvalidArgument unless height >= 1 and width >= 1.
  void validate() const;

  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

/// Foreground probability per pixel, row-major, every value in [0, 1].
class ProbabilityMask {
 public:
  ProbabilityMask() = default;
  explicit ProbabilityMask(ImageShape shape, double fill = 0.0);
  ProbabilityMask(ImageShape shape, std::vector<double> values);

  const ImageShape& shape() const noexcept { return shape_; }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }
  double at(std::size_t row, std::size_t col) const {
    return values_[shape_.index(row, col)];
  }

  friend bool operator==(const ProbabilityMask&, const ProbabilityMask&) = default;

 private:
  ImageShape shape_;
  std::vector<double> values_;
};

/// Row-major bit-packed boolean mask. Bit i of the packed stream lives in
/// word i / 64 at position i % 64; padding bits past N are always zero.
class BinaryMask {
 public:
  BinaryMask() = default;
  explicit BinaryMask(ImageShape shape, bool fill = false);
  BinaryMask(ImageShape shape, const std::vector<bool>& values);
  /// Adopts packed words (layout as below); padding bits are cleared.
  static BinaryMask from_words(ImageShape shape, std::vector<std::uint64_t> words);

  const ImageShape& shape() const noexcept { return shape_; }

  bool test(std::size_t i) const noexcept {
    return (words_[i >> 6] >> (i & 63)) & 1u;
  }
  bool at(std::size_t row, std::size_t col) const noexcept {
    return test(shape_.index(row, col));
  }
  void set(std::size_t i, bool value) noexcept {
    const std::uint64_t bit = std::uint64_t{1} << (i & 63);
    if (value) {
      words_[i >> 6] |= bit;
    } else {
      words_[i >> 6] &= ~bit;
    }
  }
  void set(std::size_t row, std::size_t col, bool value) noexcept {
    set(shape_.index(row, col), value);
  }

  std::size_t count() const noexcept;
  bool empty() const noexcept { return count() == 0; }
  std::span<const std::uint64_t> words() const noexcept { return words_; }

  BinaryMask complement() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  void clear_padding() noexcept;

  ImageShape shape_;
  std::vector<std::uint64_t> words_;
};

/// Set bits in `words`, and in the element-wise AND of `a` and `b` over
/// their common length.
std::size_t popcount_words(std::span<const std::uint64_t> words) noexcept;
std::size_t popcount_and(std::span<const std::uint64_t> a,
                         std::span<const std::uint64_t> b) noexcept;

/// |a & b| and |a | b| via popcount. Throws kShapeMismatch.
std::size_t intersection_count(const BinaryMask& a, const BinaryMask& b);
std::size_t union_count(const BinaryMask& a, const BinaryMask& b);

/// Per-pixel probability that the current prediction is wrong, in [0, 0.5].
class ErrorProbabilityMap {
 public:
  ErrorProbabilityMap() = default;
  ErrorProbabilityMap(ImageShape shape, std::vector<double> values);

  const ImageShape& shape() const noexcept { return shape_; }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

 private:
  ImageShape shape_;
  std::vector<double> values_;
};

enum class ClickLabel : std::uint8_t { kNegative = 0, kPositive = 1 };

struct ClickPrompt {
  std::size_t row = 0;
  std::size_t col = 0;
  ClickLabel label = ClickLabel::kPositive;

  friend bool operator==(const ClickPrompt&, const ClickPrompt&) = default;
};

/// Inclusive axis-aligned pixel box.
struct BoundingBox {
  std::size_t row_min = 0;
  std::size_t col_min = 0;
  std::size_t row_max = 0;
  std::size_t col_max = 0;

  bool contains(std::size_t row, std::size_t col) const noexcept {
    return row >= row_min && row <= row_max && col >= col_min && col <= col_max;
  }
  std::size_t height() const noexcept { return row_max - row_min + 1; }
  std::size_t width() const noexcept { return col_max - col_min + 1; }

  /// Throws kInvalidArgument for inverted boxes, kOutOfBounds outside `shape`.
  void validate(const ImageShape& shape) const;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Pixel is foreground iff p >= t. Requires t in (0, 1).
BinaryMask threshold(const ProbabilityMask& p, double t = 0.5);

/// e_n = 0.5 - |p_n - 0.5|.
ErrorProbabilityMap error_transform(const ProbabilityMask& p);

/// Label a click at pixel i opposite to the current prediction at the 0.5
/// decision rule: negative when p_i >= 0.5, positive otherwise.
ClickLabel corrective_label(const ProbabilityMask& p, std::size_t i);

/// The k pixels with largest error probability, descending; ties go to the
/// lower row-major index. Throws kInvalidArgument when k == 0 or k > N.
std::vector<ClickPrompt> top_k_clicks(const ErrorProbabilityMap& e,
                                      const ProbabilityMask& p, std::size_t k);

/// k distinct pixels drawn uniformly from the whole grid with a seeded engine.
std::vector<ClickPrompt> random_clicks(const ImageShape& shape,
                                       const ProbabilityMask& p, std::size_t k,
                                       std::uint64_t seed);

/// Tightest box around the true pixels. Throws kEmptyMask.
BoundingBox bbox_from_mask(const BinaryMask& m);

/// Pixel-wise OR. Throws kInvalidArgument on an empty list and
/// kShapeMismatch when shapes differ.
BinaryMask mask_union(std::span<const BinaryMask> masks);

void require_same_shape(const ImageShape& a, const ImageShape& b);

}  // namespace simsam
