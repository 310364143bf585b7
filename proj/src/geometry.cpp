#include "anml/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "anml/errors.hpp"
#include "anml/simplex.hpp"

namespace anml {
namespace {

void check_dims(const QueryContext& ctx, const Eigen::VectorXd& point) {
  const auto d = ctx.query.size();
  if (d < 1) throw InvalidInput("membership: empty query vector");
  if (point.size() != d) throw InvalidInput("membership: point dimension mismatch");
  for (const auto* list : {&ctx.similars, &ctx.dissimilars}) {
    for (const auto& v : *list) {
      if (v.size() != d) throw InvalidInput("membership: sample dimension mismatch");
    }
  }
}

RegionVerdict solve_region(const std::vector<Eigen::VectorXd>& members, const QueryContext& ctx,
                           const Eigen::VectorXd& point) {
  std::vector<Eigen::VectorXd> basis;
  basis.reserve(members.size());
  for (const auto& v : members) basis.push_back(v - ctx.query);
  RegionVerdict verdict;
  auto r = min_l1_representation(basis, point - ctx.query);
  if (!r) {
    verdict.in_span = false;
    verdict.min_l1 = std::numeric_limits<double>::infinity();
    return verdict;
  }
  verdict.in_span = true;
  verdict.min_l1 = r->lpNorm<1>();
  verdict.on_boundary = std::abs(verdict.min_l1 - 1.0) <= kBoundaryTolerance;
  verdict.representation = std::move(r);
  return verdict;
}

}  // namespace

std::optional<Eigen::VectorXd> min_l1_representation(const std::vector<Eigen::VectorXd>& basis,
                                                     const Eigen::VectorXd& target) {
  const auto d = target.size();
  const auto m = static_cast<Eigen::Index>(basis.size());
  Eigen::MatrixXd v(d, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    if (basis[static_cast<std::size_t>(j)].size() != d) throw InvalidInput("min_l1: dimension mismatch");
    v.col(j) = basis[static_cast<std::size_t>(j)];
  }
  // r = r_plus - r_minus, both non-negative; minimise their total.
  Eigen::MatrixXd a(d, 2 * m);
  a << v, -v;
  const Eigen::VectorXd c = Eigen::VectorXd::Ones(2 * m);
  const LpResult lp = solve_lp(a, target, c);
  if (lp.status == LpStatus::infeasible) return std::nullopt;
  if (lp.status != LpStatus::optimal) throw SolverError("min_l1: linear program did not reach an optimum");

  Eigen::VectorXd r = lp.x.head(m) - lp.x.tail(m);
  const double residual = (v * r - target).norm();
  const double scale = 1.0 + target.norm() + v.norm() * r.norm();
  if (residual > kLpTolerance * scale) {
    throw SolverError("min_l1: representation residual " + std::to_string(residual) + " above tolerance");
  }
  return r;
}

RegionVerdict membership_na(const QueryContext& ctx, const Eigen::VectorXd& point) {
  check_dims(ctx, point);
  if (ctx.similars.empty()) throw InvalidInput("membership_na: need at least one similar sample");
  RegionVerdict v = solve_region(ctx.similars, ctx, point);
  v.in_region = v.in_span && !v.on_boundary && v.min_l1 < 1.0;
  return v;
}

RegionVerdict membership_nb(const QueryContext& ctx, const Eigen::VectorXd& point) {
  check_dims(ctx, point);
  if (ctx.dissimilars.empty()) throw InvalidInput("membership_nb: need at least one dissimilar sample");
  RegionVerdict v = solve_region(ctx.dissimilars, ctx, point);
  v.in_region = !v.in_span || (!v.on_boundary && v.min_l1 > 1.0);
  return v;
}

ClassGap class_gap(const LabeledDataset& data) {
  const auto counts = data.class_counts();
  const auto populated = std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; });
  if (populated < 2) throw InvalidInput("class_gap: need at least two non-empty classes");

  ClassGap gap;
  gap.delta = std::numeric_limits<double>::infinity();
  const auto& x = data.features();
  const auto& y = data.labels();
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = i + 1; j < data.size(); ++j) {
      if (y[i] == y[j]) continue;
      const double dist = (x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(j))).norm();
      const auto key = std::minmax(y[i], y[j]);
      auto [it, inserted] = gap.per_pair.try_emplace({key.first, key.second}, dist);
      if (!inserted) it->second = std::min(it->second, dist);
      gap.delta = std::min(gap.delta, dist);
    }
  }
  return gap;
}

double lipschitz_lower_bound(double delta_before, double delta_after) {
  if (!(delta_before > 0.0) || !std::isfinite(delta_before)) {
    throw InvalidInput("lipschitz_lower_bound: delta_before must be positive and finite");
  }
  if (!(delta_after >= 0.0) || !std::isfinite(delta_after)) {
    throw InvalidInput("lipschitz_lower_bound: delta_after must be non-negative and finite");
  }
  return delta_after / delta_before;
}

InseparabilityReport inseparability_report(const LabeledDataset& data, std::size_t similars_per_query) {
  if (similars_per_query == 0) throw InvalidInput("inseparability_report: similars_per_query must be positive");
  const std::size_t n = data.size();
  const auto& y = data.labels();

  InseparabilityReport report;
  report.delta = class_gap(data).delta;
  report.per_query.resize(n);
  std::size_t total_pairs = 0, total_inseparable = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto& q = report.per_query[i];
    q.index = i;
    QueryContext ctx;
    ctx.query = data.row(i);

    std::vector<std::size_t> same;
    std::vector<double> dist;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || y[j] != y[i]) continue;
      same.push_back(j);
      dist.push_back((data.row(j) - ctx.query).squaredNorm());
    }
    std::vector<std::size_t> order(same.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    for (std::size_t k = 0; k < std::min(similars_per_query, same.size()); ++k) {
      ctx.similars.push_back(data.row(same[order[k]]));
    }

    for (std::size_t l = 0; l < n; ++l) {
      if (y[l] != y[i]) ++q.dissimilar_count;
    }
    if (ctx.similars.empty()) {
      q.skipped = true;
      continue;
    }
    for (std::size_t l = 0; l < n; ++l) {
      if (y[l] == y[i]) continue;
      if (membership_na(ctx, data.row(l)).in_region) ++q.inseparable_count;
    }
    total_pairs += q.dissimilar_count;
    total_inseparable += q.inseparable_count;
  }
  report.fraction = total_pairs ? static_cast<double>(total_inseparable) / static_cast<double>(total_pairs) : 0.0;
  return report;
}

void to_json(nlohmann::json& j, const InseparabilityReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& q : r.per_query) {
    rows.push_back({{"index", q.index},
                    {"inseparable_count", q.inseparable_count},
                    {"dissimilar_count", q.dissimilar_count},
                    {"skipped", q.skipped}});
  }
  j = {{"per_query", rows}, {"fraction", r.fraction}, {"delta", r.delta}};
}

void to_json(nlohmann::json& j, const ClassGap& g) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [key, value] : g.per_pair) {
    pairs.push_back({{"p", key.first}, {"q", key.second}, {"gap", value}});
  }
  j = {{"delta", g.delta}, {"per_pair", pairs}};
}

}  // namespace anml
