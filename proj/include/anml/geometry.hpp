#pragma once

// Inseparable-region diagnostics for linear projections x -> L^T x.
//
// For a query x_i with similar set S_i, the dissimilar inseparable region is
// the set of x_i + sum_j r_j (x_j - x_i) with sum_j |r_j| < 1: no linear map
// can push such a point out of the union of balls reaching the similars.
// The similar inseparable region over D_i uses sum_l |r_l| > 1 instead. Both
// tests reduce to a minimum-L1 representation, solved as a linear program.

#include <map>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "anml/dataset.hpp"

namespace anml {

inline constexpr double kBoundaryTolerance = 1e-6;
inline constexpr double kLpTolerance = 1e-8;

struct QueryContext {
  Eigen::VectorXd query;
  std::vector<Eigen::VectorXd> similars;
  std::vector<Eigen::VectorXd> dissimilars;
};

struct RegionVerdict {
  bool in_region = false;
  /// False when point - query is outside the span of the difference vectors.
  bool in_span = false;
  /// |min_l1 - 1| <= kBoundaryTolerance; such points are never in N^a.
  bool on_boundary = false;
  /// Minimum of sum |r_j|; +infinity when not in span.
  double min_l1 = 0.0;
  std::optional<Eigen::VectorXd> representation;
};

/// Membership in the dissimilar inseparable region of the query (needs at
/// least one similar).
RegionVerdict membership_na(const QueryContext& ctx, const Eigen::VectorXd& point);

/// Membership in the similar inseparable region (needs at least one
/// dissimilar). Points outside the span of the dissimilar differences count
/// as inside: no linear map bounds them by the dissimilars.
RegionVerdict membership_nb(const QueryContext& ctx, const Eigen::VectorXd& point);

/// Minimum-L1 coefficients r with sum_j r_j basis_j = target, or nullopt
/// when the target is outside the span.
std::optional<Eigen::VectorXd> min_l1_representation(const std::vector<Eigen::VectorXd>& basis,
                                                     const Eigen::VectorXd& target);

struct ClassGap {
  double delta = 0.0;
  /// Keyed by (p, q) with p < q, classes numbered from 1.
  std::map<std::pair<int, int>, double> per_pair;
};

/// Smallest Euclidean distance between samples of different classes. Needs
/// at least two non-empty classes.
ClassGap class_gap(const LabeledDataset& data);

/// delta_after / delta_before: the Lipschitz constant of any map that turns
/// a class gap of delta_before into delta_after exceeds this value.
double lipschitz_lower_bound(double delta_before, double delta_after);

struct QueryInseparability {
  std::size_t index = 0;
  std::size_t inseparable_count = 0;
  std::size_t dissimilar_count = 0;
  bool skipped = false;  // no same-class partner to build S_i from
};

struct InseparabilityReport {
  std::vector<QueryInseparability> per_query;
  double fraction = 0.0;
  double delta = 0.0;
};

/// For every query, S_i is its `similars_per_query` Euclidean-nearest
/// same-class samples; counts the other-class samples lying in the query's
/// dissimilar inseparable region.
InseparabilityReport inseparability_report(const LabeledDataset& data, std::size_t similars_per_query);

void to_json(nlohmann::json& j, const InseparabilityReport& r);
void to_json(nlohmann::json& j, const ClassGap& g);

}  // namespace anml
