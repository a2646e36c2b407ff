#include "simsam/distance_transform.hpp"

#include <algorithm>
#include <limits>

namespace simsam {

namespace {

// Lower envelope of parabolas (q - v)^2 + f(v) over one scanline.
void envelope_1d(const std::vector<double>& f, std::vector<double>& d,
                 std::vector<std::size_t>& v, std::vector<double>& z) {
  const std::size_t n = f.size();
  std::size_t k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (std::size_t q = 1; q < n; ++q) {
    const auto qd = static_cast<double>(q);
    double s = 0.0;
    while (true) {
      const auto vk = static_cast<double>(v[k]);
      s = ((f[q] + qd * qd) - (f[v[k]] + vk * vk)) / (2.0 * qd - 2.0 * vk);
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const auto qd = static_cast<double>(q);
    while (z[k + 1] < qd) ++k;
    const double diff = qd - static_cast<double>(v[k]);
    d[q] = diff * diff + f[v[k]];
  }
}

}  // namespace

std::vector<double> squared_distance_transform(const BinaryMask& sites) {
  const ImageShape& shape = sites.shape();
  const std::size_t h = shape.height;
  const std::size_t w = shape.width;
  // Exceeds every real squared distance in the grid, so a "no site" entry never
  // beats a real one, yet stays small enough to avoid cancellation.
  const double far = static_cast<double>(h * h + w * w) + 1.0;
  std::vector<double> out(shape.pixel_count(), far);
  if (sites.empty()) {
    std::fill(out.begin(), out.end(), std::numeric_limits<double>::infinity());
    return out;
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (sites.test(i)) out[i] = 0.0;
  }

  const std::size_t longest = std::max(h, w);
  std::vector<double> f(longest), d(longest), z(longest + 1);
  std::vector<std::size_t> v(longest);

  // Columns first, then rows over the column result.
  f.resize(h);
  d.resize(h);
  for (std::size_t c = 0; c < w; ++c) {
    for (std::size_t r = 0; r < h; ++r) f[r] = out[r * w + c];
    envelope_1d(f, d, v, z);
    for (std::size_t r = 0; r < h; ++r) out[r * w + c] = d[r];
  }
  f.resize(w);
  d.resize(w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) f[c] = out[r * w + c];
    envelope_1d(f, d, v, z);
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = d[c];
  }
  return out;
}

}  // namespace simsam
