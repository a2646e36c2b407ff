#pragma once

// Region and contour accuracy: IoU, Dice, normalised surface distance, and the
// ground-truth error mask (false positives OR false negatives).

#include <cstddef>
#include <utility>
#include <vector>

#include "simsam/mask.hpp"

namespace simsam::metrics {

struct Pixel {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// Boundary pixels of a mask: foreground pixels 4-adjacent to background or to
/// the image border. Stored both as a mask and as a row-major point list.
struct SurfaceSet {
  BinaryMask mask;
  std::vector<Pixel> points;

  const ImageShape& shape() const noexcept { return mask.shape(); }
  std::size_t size() const noexcept { return points.size(); }
};

struct NsdConfig {
  /// Boundary tolerance in pixels.
  double tolerance = 2.0;

  void validate() const;
};

/// |a & b| / |a | b|; 1.0 when both masks are empty.
double iou(const BinaryMask& a, const BinaryMask& b);

/// 2|a & b| / (|a| + |b|); 1.0 when both masks are empty.
double dsc(const BinaryMask& a, const BinaryMask& b);

SurfaceSet extract_surface(const BinaryMask& m);

/// Two-sided surface dice at tolerance tau:
///   (#{s in S_p : d(s, S_g) <= tau} + #{s in S_g : d(s, S_p) <= tau}) / (|S_p| + |S_g|)
/// with exact Euclidean pixel-centre distances. 1.0 when both masks are empty,
/// 0.0 when exactly one is.
double nsd(const BinaryMask& pred, const BinaryMask& gt, const NsdConfig& cfg = {});

/// True where pred != gt.
BinaryMask error_mask(const BinaryMask& pred, const BinaryMask& gt);
BinaryMask false_positives(const BinaryMask& pred, const BinaryMask& gt);
BinaryMask false_negatives(const BinaryMask& pred, const BinaryMask& gt);

}  // namespace simsam::metrics
