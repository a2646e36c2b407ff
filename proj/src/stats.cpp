#include "simsam/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "simsam/error.hpp"

namespace simsam::stats {

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "mean_std of an empty list");
  }
  const auto n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() == 1) return {mean, 0.0, false};
  double ss = 0.0;
  double drift = 0.0;
  for (double v : values) {
    ss += (v - mean) * (v - mean);
    drift += v - mean;
  }
  // Corrected two-pass: removes the rounding error left in `mean`.
  const double var = (ss - drift * drift / n) / (n - 1.0);
  return {mean, std::sqrt(std::max(var, 0.0)), true};
}

void PairedSample::validate() const {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("paired sample lengths differ: {} vs {}", a.size(), b.size()));
  }
  if (a.empty()) throw Error(ErrorCode::kInvalidArgument, "paired sample is empty");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("non-finite value in pair {}", i));
    }
  }
}

namespace {

struct Ranked {
  // Doubled mid-ranks keep tied ranks integral.
  std::vector<long> doubled_ranks;
  std::vector<bool> positive;
  // sum over tie groups of t^3 - t
  double tie_term = 0.0;
};

Ranked rank_differences(const std::vector<double>& diffs) {
  const std::size_t n = diffs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return std::abs(diffs[i]) < std::abs(diffs[j]);
  });
  Ranked out;
  out.doubled_ranks.assign(n, 0);
  out.positive.assign(n, false);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(diffs[order[j + 1]]) == std::abs(diffs[order[i]])) ++j;
    // Ranks i+1 .. j+1 share their mean; doubled that is (i + 1) + (j + 1).
    const long doubled = static_cast<long>(i + j + 2);
    for (std::size_t t = i; t <= j; ++t) out.doubled_ranks[order[t]] = doubled;
    const auto t = static_cast<double>(j - i + 1);
    out.tie_term += t * t * t - t;
    i = j + 1;
  }
  for (std::size_t k = 0; k < n; ++k) out.positive[k] = diffs[k] > 0.0;
  return out;
}

// P(W+ <= w) under the null, counting all 2^n equally likely sign patterns.
// counts[s] = number of patterns whose doubled positive rank sum equals s.
double exact_lower_tail(const std::vector<long>& doubled_ranks, long doubled_w) {
  const long total =
      std::accumulate(doubled_ranks.begin(), doubled_ranks.end(), 0L);
  std::vector<double> counts(static_cast<std::size_t>(total) + 1, 0.0);
  counts[0] = 1.0;
  long reach = 0;
  for (long r : doubled_ranks) {
    for (long s = reach; s >= 0; --s) {
      counts[static_cast<std::size_t>(s + r)] += counts[static_cast<std::size_t>(s)];
    }
    reach += r;
  }
  double tail = 0.0;
  for (long s = 0; s <= std::min(doubled_w, total); ++s) {
    tail += counts[static_cast<std::size_t>(s)];
  }
  return tail / std::ldexp(1.0, static_cast<int>(doubled_ranks.size()));
}

}  // namespace

WilcoxonResult wilcoxon_signed_rank(const PairedSample& sample) {
  sample.validate();
  std::size_t nonzero = 0;
  for (std::size_t i = 0; i < sample.a.size(); ++i) {
    if (sample.a[i] - sample.b[i] != 0.0) ++nonzero;
  }
  return wilcoxon_signed_rank(
      sample, nonzero <= kWilcoxonExactLimit ? WilcoxonMode::kExact : WilcoxonMode::kNormal);
}

WilcoxonResult wilcoxon_signed_rank(const PairedSample& sample, WilcoxonMode mode) {
  sample.validate();
  std::vector<double> diffs;
  diffs.reserve(sample.a.size());
  for (std::size_t i = 0; i < sample.a.size(); ++i) {
    const double d = sample.a[i] - sample.b[i];
    if (d != 0.0) diffs.push_back(d);
  }

  WilcoxonResult result;
  result.mode = mode;
  result.n_effective = diffs.size();
  if (diffs.empty()) {
    result.degenerate = true;
    return result;
  }

  const Ranked ranked = rank_differences(diffs);
  long doubled_plus = 0;
  long doubled_minus = 0;
  for (std::size_t i = 0; i < diffs.size(); ++i) {
    (ranked.positive[i] ? doubled_plus : doubled_minus) += ranked.doubled_ranks[i];
  }
  result.w_plus = doubled_plus / 2.0;
  result.w_minus = doubled_minus / 2.0;
  result.statistic = std::min(result.w_plus, result.w_minus);

  if (mode == WilcoxonMode::kExact) {
    if (diffs.size() > 62) {
      throw Error(ErrorCode::kInvalidArgument, "exact Wilcoxon limited to 62 pairs");
    }
    const long doubled_w = std::min(doubled_plus, doubled_minus);
    result.p_value = std::min(1.0, 2.0 * exact_lower_tail(ranked.doubled_ranks, doubled_w));
    return result;
  }

  const auto n = static_cast<double>(diffs.size());
  const double mean = n * (n + 1.0) / 4.0;
  const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - ranked.tie_term / 48.0;
  if (var <= 0.0) {
    result.p_value = 1.0;
    return result;
  }
  const double deviation = std::max(0.0, std::abs(result.statistic - mean) - 0.5);
  const double z = deviation / std::sqrt(var);
  result.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return result;
}

}  // namespace simsam::stats
