#pragma once

// Log-exp mean machinery: the smooth family b(gamma) that interpolates
// between the minimum (gamma -> +inf), the mean (gamma -> 0) and the
// maximum (gamma -> -inf) of a number series, plus the hard trimmed
// average it approximates.

#include <span>
#include <vector>

namespace anml {

/// Below this magnitude gamma is treated as zero and b(gamma) is the mean.
inline constexpr double kGammaEpsilon = 1e-8;

/// Absolute tolerance on b-values used by gamma_for_k.
inline constexpr double kRootTolerance = 1e-10;

/// Selects the K smallest (`smallest`, +1) or K largest (`largest`, -1) entries.
enum class Side : int { smallest = 1, largest = -1 };

struct NeighborhoodSpec {
  std::size_t k = 1;
  Side alpha = Side::smallest;
};

/// b(gamma) = -(1/gamma) log((1/n) sum exp(-gamma a_i)), evaluated shifted by
/// the extremum that keeps every exponent non-positive. Throws InvalidInput on
/// an empty or non-finite series or a non-finite gamma.
double log_exp_mean(std::span<const double> series, double gamma);

/// b(gamma) together with its partial derivatives db/da_i, which are the
/// softmax weights exp(-gamma a_i) / sum_j exp(-gamma a_j) (uniform when
/// |gamma| < kGammaEpsilon). The weights sum to one.
struct LogExpMean {
  double value = 0.0;
  std::vector<double> weights;
};
LogExpMean log_exp_mean_with_weights(std::span<const double> series, double gamma);

/// g(gamma) = (1/gamma) log(sum exp(gamma a_i)), the unnormalized form. It
/// upper-bounds max(a) for gamma > 0 and lower-bounds min(a) for gamma < 0.
/// Undefined at zero, so |gamma| < kGammaEpsilon throws InvalidInput.
double sup_log_exp(std::span<const double> series, double gamma);

/// Mean of the K smallest (alpha = +1) or K largest (alpha = -1) entries.
/// Ties keep original index order.
double trimmed_radius(std::span<const double> series, NeighborhoodSpec spec);

/// The unique gamma with log_exp_mean(series, gamma) == trimmed_radius(series, spec)
/// to within kRootTolerance. Positive for the K smallest, negative for the K
/// largest, zero for K == n. Requires pairwise distinct entries.
double gamma_for_k(std::span<const double> series, NeighborhoodSpec spec);

}  // namespace anml
