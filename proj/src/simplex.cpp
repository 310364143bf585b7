#include "anml/simplex.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "anml/errors.hpp"

namespace anml {
namespace {

// Tableau over columns [structural (n) | artificial (m) | rhs]. `cost` holds
// reduced costs for the same columns; cost(rhs) is minus the objective.
struct Tableau {
  Eigen::MatrixXd rows;
  Eigen::RowVectorXd cost;
  std::vector<int> basis;
  int n = 0;
  int m = 0;

  int rhs() const { return n + m; }

  void pivot(int r, int col) {
    rows.row(r) /= rows(r, col);
    for (int i = 0; i < m; ++i) {
      if (i != r && rows(i, col) != 0.0) rows.row(i) -= rows(i, col) * rows.row(r);
    }
    if (cost(col) != 0.0) cost -= cost(col) * rows.row(r);
    basis[r] = col;
  }
};

enum class StepResult { optimal, unbounded };

StepResult run_simplex(Tableau& t, int entering_limit, const LpOptions& opt, int& iterations) {
  for (;;) {
    int entering = -1;
    for (int j = 0; j < entering_limit; ++j) {
      if (t.cost(j) < -opt.cost_tolerance) {
        entering = j;
        break;
      }
    }
    if (entering < 0) return StepResult::optimal;

    int leaving = -1;
    double best_ratio = std::numeric_limits<double>::infinity();
    for (int i = 0; i < t.m; ++i) {
      const double a = t.rows(i, entering);
      if (a <= opt.pivot_tolerance) continue;
      const double ratio = t.rows(i, t.rhs()) / a;
      if (ratio < best_ratio - 1e-14 ||
          (std::abs(ratio - best_ratio) <= 1e-14 && t.basis[i] < t.basis[leaving])) {
        best_ratio = ratio;
        leaving = i;
      }
    }
    if (leaving < 0) return StepResult::unbounded;
    if (++iterations > opt.max_iterations) {
      throw SolverError("simplex: iteration cap reached");
    }
    t.pivot(leaving, entering);
  }
}

}  // namespace

LpResult solve_lp(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& c,
                  const LpOptions& options) {
  const int m = static_cast<int>(a.rows());
  const int n = static_cast<int>(a.cols());
  if (b.size() != m || c.size() != n) throw InvalidInput("solve_lp: shape mismatch");
  if (!a.allFinite() || !b.allFinite() || !c.allFinite()) {
    throw InvalidInput("solve_lp: non-finite coefficients");
  }

  Tableau t;
  t.n = n;
  t.m = m;
  t.rows = Eigen::MatrixXd::Zero(m, n + m + 1);
  t.basis.resize(m);
  for (int i = 0; i < m; ++i) {
    const double s = b(i) < 0.0 ? -1.0 : 1.0;
    t.rows.row(i).head(n) = s * a.row(i);
    t.rows(i, n + i) = 1.0;
    t.rows(i, n + m) = s * b(i);
    t.basis[i] = n + i;
  }

  LpResult result;

  // Phase one: minimise the sum of artificials.
  t.cost = Eigen::RowVectorXd::Zero(n + m + 1);
  for (int i = 0; i < m; ++i) {
    t.cost.head(n) -= t.rows.row(i).head(n);
    t.cost(t.rhs()) -= t.rows(i, t.rhs());
  }
  run_simplex(t, n, options, result.iterations);
  result.infeasibility = -t.cost(t.rhs());
  const double scale = 1.0 + b.lpNorm<1>();
  if (result.infeasibility > options.feasibility_tolerance * scale) {
    result.status = LpStatus::infeasible;
    return result;
  }

  // Drive remaining artificials out of the basis; rows that cannot pivot are
  // redundant and keep a zero-level artificial.
  for (int i = 0; i < m; ++i) {
    if (t.basis[i] < n) continue;
    for (int j = 0; j < n; ++j) {
      if (std::abs(t.rows(i, j)) > 1e-9) {
        t.pivot(i, j);
        break;
      }
    }
  }

  // Phase two.
  t.cost = Eigen::RowVectorXd::Zero(n + m + 1);
  t.cost.head(n) = c.transpose();
  for (int i = 0; i < m; ++i) {
    const int bi = t.basis[i];
    const double cb = bi < n ? c(bi) : 0.0;
    if (cb != 0.0) t.cost -= cb * t.rows.row(i);
  }
  if (run_simplex(t, n, options, result.iterations) == StepResult::unbounded) {
    result.status = LpStatus::unbounded;
    return result;
  }

  result.status = LpStatus::optimal;
  result.x = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < m; ++i) {
    if (t.basis[i] < n) result.x(t.basis[i]) = t.rows(i, t.rhs());
  }
  result.objective = c.dot(result.x);
  return result;
}

}  // namespace anml
