#pragma once

#include <Eigen/Dense>

namespace anml {

enum class LpStatus { optimal, infeasible, unbounded };

struct LpResult {
  LpStatus status = LpStatus::infeasible;
  Eigen::VectorXd x;       // primal solution when optimal
  double objective = 0.0;  // c^T x when optimal
  double infeasibility = 0.0;  // phase-one residual (sum of artificials)
  int iterations = 0;
};

struct LpOptions {
  double pivot_tolerance = 1e-11;
  double cost_tolerance = 1e-11;
  double feasibility_tolerance = 1e-9;  // scaled by 1 + |b|_1
  int max_iterations = 20000;
};

/// Dense two-phase tableau simplex for  min c^T x  s.t.  A x = b, x >= 0.
/// Entering and leaving variables follow Bland's rule, so it cannot cycle.
/// Redundant equality rows are tolerated. Throws SolverError when the
/// iteration cap is hit and InvalidInput on shape mismatch.
LpResult solve_lp(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& c,
                  const LpOptions& options = {});

}  // namespace anml
