#pragma once

#include <vector>

#include "simsam/mask.hpp"

namespace simsam {

/// Exact squared Euclidean distance from every pixel centre to the nearest
/// true pixel of `sites` (separable lower-envelope algorithm, two 1-D passes).
/// Pixels get +infinity when `sites` is empty.
std::vector<double> squared_distance_transform(const BinaryMask& sites);

}  // namespace simsam
