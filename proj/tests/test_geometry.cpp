#include <doctest.h>

#include <cmath>
#include <vector>

#include "anml/errors.hpp"
#include "anml/geometry.hpp"
#include "anml/simplex.hpp"
#include "support.hpp"

using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::VectorXd;

namespace {

VectorXd v2(double x, double y) { return Vector2d(x, y); }

anml::QueryContext ctx2(std::vector<VectorXd> similars, std::vector<VectorXd> dissimilars = {}) {
  return {v2(0, 0), std::move(similars), std::move(dissimilars)};
}

anml::LabeledDataset line_data(std::vector<double> xs, std::vector<int> ys) {
  MatrixXd x(static_cast<Eigen::Index>(xs.size()), 1);
  for (std::size_t i = 0; i < xs.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = xs[i];
  return anml::LabeledDataset(x, std::move(ys));
}

}  // namespace

TEST_CASE("simplex: small programs") {
  SUBCASE("optimal") {
    MatrixXd a(1, 2);
    a << 1, 2;
    const auto r = anml::solve_lp(a, VectorXd::Constant(1, 4.0), Vector2d(1, 1));
    REQUIRE(r.status == anml::LpStatus::optimal);
    CHECK(r.objective == doctest::Approx(2.0));
    CHECK(r.x(1) == doctest::Approx(2.0));
  }
  SUBCASE("infeasible") {
    MatrixXd a(1, 2);
    a << 1, 1;
    const auto r = anml::solve_lp(a, VectorXd::Constant(1, -1.0), Vector2d(1, 1));
    CHECK(r.status == anml::LpStatus::infeasible);
  }
  SUBCASE("unbounded") {
    MatrixXd a(1, 2);
    a << 1, -1;
    const auto r = anml::solve_lp(a, VectorXd::Constant(1, 0.0), Vector2d(-1, 0));
    CHECK(r.status == anml::LpStatus::unbounded);
  }
  SUBCASE("redundant rows") {
    MatrixXd a(3, 3);
    a << 1, 1, 1, 2, 2, 2, 1, 0, -1;
    const auto r = anml::solve_lp(a, Eigen::Vector3d(3, 6, 0), Eigen::Vector3d(2, 1, 3));
    REQUIRE(r.status == anml::LpStatus::optimal);
    // x1 = x3 forced, x1 + x2 + x3 = 3: cheapest puts everything on x2.
    CHECK(r.objective == doctest::Approx(3.0));
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(anml::solve_lp(MatrixXd::Ones(2, 2), VectorXd::Ones(3), VectorXd::Ones(2)), anml::InvalidInput);
  }
}

TEST_CASE("membership_na examples") {
  const auto ctx = ctx2({v2(1, 0)});
  auto r = anml::membership_na(ctx, v2(0.5, 0));
  CHECK(r.in_region);
  CHECK(r.min_l1 == doctest::Approx(0.5));
  r = anml::membership_na(ctx, v2(-0.5, 0));
  CHECK(r.in_region);
  CHECK(r.min_l1 == doctest::Approx(0.5));
  r = anml::membership_na(ctx, v2(2, 0));
  CHECK_FALSE(r.in_region);
  CHECK(r.min_l1 == doctest::Approx(2.0));
  r = anml::membership_na(ctx, v2(0, 1));
  CHECK_FALSE(r.in_region);
  CHECK_FALSE(r.in_span);
  CHECK(std::isinf(r.min_l1));
  CHECK_FALSE(r.representation.has_value());
}

TEST_CASE("membership boundary is not in region") {
  const auto ctx = ctx2({v2(1, 0)}, {v2(1, 0)});
  const auto a = anml::membership_na(ctx, v2(1, 0));
  CHECK(a.on_boundary);
  CHECK_FALSE(a.in_region);
  const auto b = anml::membership_nb(ctx, v2(-1, 0));
  CHECK(b.on_boundary);
  CHECK_FALSE(b.in_region);
}

TEST_CASE("membership_nb examples") {
  auto ctx = ctx2({}, {v2(1, 0)});
  auto r = anml::membership_nb(ctx, v2(3, 0));
  CHECK(r.in_region);
  CHECK(r.min_l1 == doctest::Approx(3.0));
  r = anml::membership_nb(ctx, v2(0.5, 0));
  CHECK_FALSE(r.in_region);
  CHECK(r.min_l1 == doctest::Approx(0.5));
  r = anml::membership_nb(ctx, v2(0, 2));
  CHECK(r.in_region);
  CHECK_FALSE(r.in_span);

  ctx = ctx2({}, {v2(1, 0), v2(0, 1)});
  r = anml::membership_nb(ctx, v2(0.3, 0.3));
  CHECK_FALSE(r.in_region);
  CHECK(r.min_l1 == doctest::Approx(0.6));
  const auto grid = testutil::grid_min_l1({v2(1, 0), v2(0, 1)}, v2(0.3, 0.3));
  REQUIRE(grid.has_value());
  CHECK(*grid == doctest::Approx(0.6).epsilon(2e-3));
}

TEST_CASE("membership preconditions") {
  CHECK_THROWS_AS(anml::membership_na(ctx2({}, {v2(1, 0)}), v2(0.1, 0)), anml::InvalidInput);
  CHECK_THROWS_AS(anml::membership_nb(ctx2({v2(1, 0)}), v2(0.1, 0)), anml::InvalidInput);
  CHECK_THROWS_AS(anml::membership_na(ctx2({v2(1, 0)}), Eigen::Vector3d(1, 0, 0)), anml::InvalidInput);
  anml::QueryContext bad{v2(0, 0), {Eigen::Vector3d(1, 0, 0)}, {}};
  CHECK_THROWS_AS(anml::membership_na(bad, v2(0.1, 0)), anml::InvalidInput);
}

TEST_CASE("representation reconstructs the point and carries min_l1") {
  anml::Rng rng(21, 0);
  for (int t = 0; t < 50; ++t) {
    const VectorXd q = Eigen::Vector3d::Random();
    std::vector<VectorXd> s;
    for (int j = 0; j < 4; ++j) s.push_back(q + Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()));
    const VectorXd p = q + Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
    const auto r = anml::membership_na({q, s, {}}, p);
    REQUIRE(r.in_span);
    REQUIRE(r.representation.has_value());
    VectorXd recon = VectorXd::Zero(3);
    for (std::size_t j = 0; j < s.size(); ++j) recon += (*r.representation)(static_cast<Eigen::Index>(j)) * (s[j] - q);
    CHECK((recon - (p - q)).norm() <= anml::kLpTolerance);
    CHECK(r.representation->lpNorm<1>() == doctest::Approx(r.min_l1).epsilon(anml::kLpTolerance));
  }
}

TEST_CASE("property: LP agrees with grid search and is permutation and translation invariant") {
  anml::Rng rng(8, 3);
  for (int t = 0; t < 40; ++t) {
    const VectorXd q = v2(rng.uniform(-1, 1), rng.uniform(-1, 1));
    const std::size_t k = 1 + rng.below(3);
    std::vector<VectorXd> s, diffs;
    for (std::size_t j = 0; j < k; ++j) {
      s.push_back(q + v2(rng.uniform(-2, 2), rng.uniform(-2, 2)));
      diffs.push_back(s.back() - q);
    }
    const VectorXd p = q + v2(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5));
    const auto lp = anml::membership_na({q, s, {}}, p);
    const auto grid = testutil::grid_min_l1(diffs, p - q);
    if (lp.in_span && lp.min_l1 < 5.0) {
      REQUIRE(grid.has_value());
      CHECK(std::abs(*grid - lp.min_l1) <= 2e-3);
    }

    std::vector<VectorXd> rev(s.rbegin(), s.rend());
    const auto permuted = anml::membership_na({q, rev, {}}, p);
    CHECK(permuted.in_region == lp.in_region);
    if (lp.in_span) CHECK(permuted.min_l1 == doctest::Approx(lp.min_l1).epsilon(1e-9));

    const VectorXd shift = v2(rng.uniform(-10, 10), rng.uniform(-10, 10));
    std::vector<VectorXd> moved;
    for (const auto& x : s) moved.push_back(x + shift);
    const auto translated = anml::membership_na({q + shift, moved, {}}, p + shift);
    CHECK(translated.in_region == lp.in_region);
    if (lp.in_span) CHECK(translated.min_l1 == doctest::Approx(lp.min_l1).epsilon(1e-7));
  }
}

TEST_CASE("class_gap examples") {
  auto g = anml::class_gap(line_data({0, 1}, {1, 2}));
  CHECK(g.delta == doctest::Approx(1.0));

  MatrixXd x(3, 2);
  x << 0, 0, 0, 1, 3, 0;
  g = anml::class_gap(anml::LabeledDataset(x, {1, 1, 2}));
  CHECK(g.delta == doctest::Approx(3.0));

  g = anml::class_gap(line_data({0, 2, 5}, {1, 2, 3}));
  CHECK(g.delta == doctest::Approx(2.0));
  CHECK(g.per_pair.at({1, 2}) == doctest::Approx(2.0));
  CHECK(g.per_pair.at({1, 3}) == doctest::Approx(5.0));
  CHECK(g.per_pair.at({2, 3}) == doctest::Approx(3.0));

  CHECK_THROWS_AS(anml::class_gap(line_data({0, 1}, {1, 1})), anml::InvalidInput);
}

TEST_CASE("class_gap is invariant under rotation") {
  anml::Rng rng(2, 2);
  const auto data = testutil::random_dataset(rng, 6, 3, 2);
  const double th = 0.7;
  Eigen::Matrix2d rot;
  rot << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
  const auto rotated = data.with_features(data.features() * rot.transpose());
  const auto a = anml::class_gap(data), b = anml::class_gap(rotated);
  CHECK(a.delta == doctest::Approx(b.delta).epsilon(1e-12));
  for (const auto& [key, val] : a.per_pair) CHECK(b.per_pair.at(key) == doctest::Approx(val).epsilon(1e-12));
}

TEST_CASE("lipschitz_lower_bound") {
  CHECK(anml::lipschitz_lower_bound(1.0, 5.0) == doctest::Approx(5.0));
  CHECK(anml::lipschitz_lower_bound(2.0, 2.0) == doctest::Approx(1.0));
  CHECK(anml::lipschitz_lower_bound(0.1, 10.0) == doctest::Approx(100.0));
  CHECK_THROWS_AS(anml::lipschitz_lower_bound(0.0, 1.0), anml::InvalidInput);
  CHECK_THROWS_AS(anml::lipschitz_lower_bound(-1.0, 1.0), anml::InvalidInput);
  CHECK_THROWS_AS(anml::lipschitz_lower_bound(1.0, -1.0), anml::InvalidInput);
}

TEST_CASE("inseparability_report") {
  SUBCASE("separated orthogonal classes") {
    MatrixXd x(6, 2);
    x << 1, 0, 2, 0, 3, 0, 0, 1, 0, 2, 0, 3;
    const auto r = anml::inseparability_report(anml::LabeledDataset(x, {1, 1, 1, 2, 2, 2}), 2);
    CHECK(r.fraction == 0.0);
    CHECK(r.delta > 0.0);
    nlohmann::json j = r;
    CHECK(j.at("per_query").size() == 6);
    CHECK(j.contains("fraction"));
    CHECK(j.contains("delta"));
  }
  SUBCASE("interleaved line") {
    // Class A = {0, 2}, class B = {1}: from query 0 with S = {2}, point 1
    // sits at r = 0.5, and symmetrically from query 2.
    const auto r = anml::inseparability_report(line_data({0, 2, 1}, {1, 1, 2}), 1);
    CHECK(r.fraction > 0.0);
    CHECK(r.per_query[0].inseparable_count == 1);
    CHECK(r.per_query[1].inseparable_count == 1);
    CHECK(r.per_query[2].skipped);
    CHECK(r.fraction == doctest::Approx(1.0));
  }
  SUBCASE("zero similars") {
    CHECK_THROWS_AS(anml::inseparability_report(line_data({0, 2, 1}, {1, 1, 2}), 0), anml::InvalidInput);
  }
}
