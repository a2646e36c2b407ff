#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace simsam::stats {

struct MeanStd {
  double mean = 0.0;
  /// Sample standard deviation (n - 1 denominator); 0 when undefined.
  double std = 0.0;
  /// False for a single value, where the sample deviation is undefined.
  bool std_defined = true;
};

/// Throws kInvalidArgument on an empty list.
MeanStd mean_std(std::span<const double> values);

/// Per-item metric values of two methods on the same items.
struct PairedSample {
  std::vector<double> a;
  std::vector<double> b;

  /// Equal lengths >= 1, all values finite.
  void validate() const;
};

enum class WilcoxonMode { kExact, kNormal };

struct WilcoxonResult {
  /// Rank sums of positive and negative differences a - b (mid-ranks on ties).
  double w_plus = 0.0;
  double w_minus = 0.0;
  /// min(W+, W-).
  double statistic = 0.0;
  /// Two-sided.
  double p_value = 1.0;
  /// Pairs left after discarding zero differences.
  std::size_t n_effective = 0;
  WilcoxonMode mode = WilcoxonMode::kExact;
  /// Every difference was zero; p is reported as 1.
  bool degenerate = false;
};

/// Largest n_effective handled by exact enumeration of sign assignments.
inline constexpr std::size_t kWilcoxonExactLimit = 20;

/// Two-sided signed-rank test on a - b. Zero differences are discarded.
/// Exact null distribution for n_effective <= kWilcoxonExactLimit, otherwise a
/// normal approximation with tie-corrected variance and 0.5 continuity
/// correction.
WilcoxonResult wilcoxon_signed_rank(const PairedSample& sample);

/// Same test with the mode forced (used to compare the two routes).
WilcoxonResult wilcoxon_signed_rank(const PairedSample& sample, WilcoxonMode mode);

}  // namespace simsam::stats
