#include "simsam/metrics.hpp"

#include <fmt/format.h>

#include "simsam/distance_transform.hpp"

namespace simsam::metrics {

void NsdConfig::validate() const {
  if (!(tolerance >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("NSD tolerance must be >= 0, got {}", tolerance));
  }
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  const std::size_t u = union_count(a, b);
  if (u == 0) return 1.0;
  return static_cast<double>(intersection_count(a, b)) / static_cast<double>(u);
}

double dsc(const BinaryMask& a, const BinaryMask& b) {
  const std::size_t inter = intersection_count(a, b);
  const std::size_t total = a.count() + b.count();
  if (total == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

SurfaceSet extract_surface(const BinaryMask& m) {
  const ImageShape& s = m.shape();
  SurfaceSet surface{BinaryMask(s), {}};
  for (std::size_t r = 0; r < s.height; ++r) {
    for (std::size_t c = 0; c < s.width; ++c) {
      if (!m.at(r, c)) continue;
      const bool interior = r > 0 && r + 1 < s.height && c > 0 && c + 1 < s.width &&
                            m.at(r - 1, c) && m.at(r + 1, c) && m.at(r, c - 1) &&
                            m.at(r, c + 1);
      if (!interior) {
        surface.mask.set(r, c, true);
        surface.points.push_back({r, c});
      }
    }
  }
  return surface;
}

namespace {

std::size_t count_within(const SurfaceSet& from, const std::vector<double>& sq_dist,
                         double tol_sq, std::size_t width) {
  std::size_t hits = 0;
  for (const auto& p : from.points) {
    if (sq_dist[p.row * width + p.col] <= tol_sq) ++hits;
  }
  return hits;
}

}  // namespace

double nsd(const BinaryMask& pred, const BinaryMask& gt, const NsdConfig& cfg) {
  require_same_shape(pred.shape(), gt.shape());
  cfg.validate();
  const SurfaceSet sp = extract_surface(pred);
  const SurfaceSet sg = extract_surface(gt);
  if (sp.size() == 0 && sg.size() == 0) return 1.0;
  if (sp.size() == 0 || sg.size() == 0) return 0.0;

  // Squared distances are exact integers, so comparing against tau^2 is exact
  // for any tau whose square is representable.
  const double tol_sq = cfg.tolerance * cfg.tolerance;
  const std::size_t w = pred.shape().width;
  const auto to_gt = squared_distance_transform(sg.mask);
  const auto to_pred = squared_distance_transform(sp.mask);
  const std::size_t hits = count_within(sp, to_gt, tol_sq, w) + count_within(sg, to_pred, tol_sq, w);
  return static_cast<double>(hits) / static_cast<double>(sp.size() + sg.size());
}

BinaryMask error_mask(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_shape(pred.shape(), gt.shape());
  std::vector<std::uint64_t> words(pred.words().size());
  for (std::size_t i = 0; i < words.size(); ++i) words[i] = pred.words()[i] ^ gt.words()[i];
  return BinaryMask::from_words(pred.shape(), std::move(words));
}

BinaryMask false_positives(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_shape(pred.shape(), gt.shape());
  std::vector<std::uint64_t> words(pred.words().size());
  for (std::size_t i = 0; i < words.size(); ++i) words[i] = pred.words()[i] & ~gt.words()[i];
  return BinaryMask::from_words(pred.shape(), std::move(words));
}

BinaryMask false_negatives(const BinaryMask& pred, const BinaryMask& gt) {
  return false_positives(gt, pred);
}

}  // namespace simsam::metrics
