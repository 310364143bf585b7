#include "anml/logexp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "anml/errors.hpp"

namespace anml {
namespace {

void validate_series(std::span<const double> series, const char* who) {
  if (series.empty()) throw InvalidInput(std::string(who) + ": empty series");
  for (double v : series) {
    if (!std::isfinite(v)) throw InvalidInput(std::string(who) + ": non-finite entry");
  }
}

double arithmetic_mean(std::span<const double> series) {
  // Shifted by the first entry so large offsets do not swamp the spread.
  const double ref = series.front();
  double acc = 0.0;
  for (double v : series) acc += v - ref;
  return ref + acc / static_cast<double>(series.size());
}

}  // namespace

double log_exp_mean(std::span<const double> series, double gamma) {
  validate_series(series, "log_exp_mean");
  if (!std::isfinite(gamma)) throw InvalidInput("log_exp_mean: non-finite gamma");
  if (std::abs(gamma) < kGammaEpsilon) return arithmetic_mean(series);

  const auto [lo_it, hi_it] = std::minmax_element(series.begin(), series.end());
  const double lo = *lo_it, hi = *hi_it;
  const double pivot = gamma > 0 ? lo : hi;

  // sum of expm1 terms keeps full precision for small |gamma| * spread; every
  // term lies in (-1, 0] so there is no cancellation.
  double s = 0.0;
  for (double v : series) s += std::expm1(-gamma * (v - pivot));
  s /= static_cast<double>(series.size());
  const double b = pivot - std::log1p(s) / gamma;
  return std::clamp(b, lo, hi);
}

LogExpMean log_exp_mean_with_weights(std::span<const double> series, double gamma) {
  LogExpMean out;
  out.value = log_exp_mean(series, gamma);
  const std::size_t n = series.size();
  out.weights.assign(n, 1.0 / static_cast<double>(n));
  if (std::abs(gamma) < kGammaEpsilon) return out;

  const double pivot = gamma > 0 ? *std::min_element(series.begin(), series.end())
                                 : *std::max_element(series.begin(), series.end());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.weights[i] = std::exp(-gamma * (series[i] - pivot));
    total += out.weights[i];
  }
  for (double& w : out.weights) w /= total;
  return out;
}

double sup_log_exp(std::span<const double> series, double gamma) {
  validate_series(series, "sup_log_exp");
  if (!std::isfinite(gamma) || std::abs(gamma) < kGammaEpsilon) {
    throw InvalidInput("sup_log_exp: gamma must be finite with |gamma| >= 1e-8");
  }
  const double pivot = gamma > 0 ? *std::max_element(series.begin(), series.end())
                                 : *std::min_element(series.begin(), series.end());
  double s = 0.0;
  for (double v : series) s += std::exp(gamma * (v - pivot));
  return pivot + std::log(s) / gamma;
}

double trimmed_radius(std::span<const double> series, NeighborhoodSpec spec) {
  validate_series(series, "trimmed_radius");
  const std::size_t n = series.size();
  if (spec.k < 1 || spec.k > n) {
    throw InvalidInput("trimmed_radius: k=" + std::to_string(spec.k) + " outside [1, " +
                       std::to_string(n) + "]");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (spec.alpha == Side::smallest) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return series[a] < series[b]; });
  } else {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return series[a] > series[b]; });
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < spec.k; ++i) acc += series[order[i]];
  return acc / static_cast<double>(spec.k);
}

double gamma_for_k(std::span<const double> series, NeighborhoodSpec spec) {
  validate_series(series, "gamma_for_k");
  std::vector<double> sorted(series.begin(), series.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw InvalidInput("gamma_for_k: series has duplicate values");
  }
  const double target = trimmed_radius(series, spec);
  if (spec.k == series.size()) return 0.0;

  // phi(x) = sign * (b(sign * x) - target) is strictly decreasing on x > 0,
  // positive near zero and tends to a non-positive limit.
  const double sign = spec.alpha == Side::smallest ? 1.0 : -1.0;
  auto phi = [&](double x) { return sign * (log_exp_mean(sorted, sign * x) - target); };

  constexpr int kMaxIterations = 200;
  int iterations = 0;
  double lo = std::ldexp(1.0, -20), hi = std::ldexp(1.0, 20);
  double f_lo = phi(lo), f_hi = phi(hi);
  double best_x = hi, best_f = f_hi;
  auto consider = [&](double x, double f) {
    if (std::abs(f) < std::abs(best_f)) best_x = x, best_f = f;
  };
  consider(lo, f_lo);

  while (f_lo <= 0.0 && iterations++ < kMaxIterations) {
    lo *= 0.5;
    f_lo = phi(lo);
    consider(lo, f_lo);
  }
  while (f_hi > kRootTolerance && iterations++ < kMaxIterations) {
    hi *= 2.0;
    f_hi = phi(hi);
    consider(hi, f_hi);
  }
  if (f_lo <= 0.0 || f_hi > kRootTolerance) {
    throw ConvergenceError("gamma_for_k: failed to bracket the root");
  }

  // Bisect in log-space; the bracket can span dozens of octaves.
  while (iterations++ < kMaxIterations && f_hi < 0.0) {
    const double mid = std::sqrt(lo * hi);
    if (!(mid > lo && mid < hi)) break;
    const double f_mid = phi(mid);
    consider(mid, f_mid);
    if (std::abs(f_mid) <= 1e-3 * kRootTolerance) break;
    if (f_mid > 0.0) {
      lo = mid;
    } else {
      hi = mid;
      f_hi = f_mid;
    }
  }
  if (std::abs(best_f) > kRootTolerance) {
    throw ConvergenceError("gamma_for_k: bisection stalled above tolerance");
  }
  return sign * best_x;
}

}  // namespace anml
