#pragma once

// Linear adaptive neighborhood metric learning: the LANML objective over a
// PSD matrix M, the PNCA objective, and a projected-gradient solver on the
// PSD cone.

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "anml/dataset.hpp"
#include "anml/loss_function.hpp"
#include "anml/pairs.hpp"

namespace anml {

/// Symmetric positive semidefinite d x d matrix defining
/// d_M(x, y) = (x - y)^T M (x - y).
class MetricMatrix {
 public:
  static constexpr double kSymmetryTolerance = 1e-10;
  static constexpr double kEigenTolerance = 1e-8;

  MetricMatrix() = default;
  /// Throws InvalidInput unless `m` is square, finite, symmetric within 1e-10
  /// and has no eigenvalue below -1e-8. The stored copy is exactly symmetric.
  explicit MetricMatrix(Eigen::MatrixXd m);

  static MetricMatrix identity(std::size_t dim, double scale = 1.0);
  /// Nearest PSD matrix in Frobenius norm: symmetrize, then clip negative
  /// eigenvalues to zero. Throws NumericError if the eigensolver fails.
  static MetricMatrix project(const Eigen::MatrixXd& m);

  const Eigen::MatrixXd& matrix() const noexcept { return m_; }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(m_.rows()); }
  double min_eigenvalue() const;
  /// L with M = L L^T (columns scaled eigenvectors).
  Eigen::MatrixXd factor() const;

 private:
  struct Trusted {};
  MetricMatrix(Eigen::MatrixXd m, Trusted) : m_(std::move(m)) {}
  Eigen::MatrixXd m_;
};

/// (x - y)^T M (x - y), clamped at zero.
double mahalanobis_sq(const MetricMatrix& m, const Eigen::VectorXd& x, const Eigen::VectorXd& y);

/// knn_similars: S_i is the k Euclidean-nearest same-class samples (LANML-).
/// all_similars: S_i is every other same-class sample (LANML+, PNCA).
/// D_i is every other-class sample in both modes.
enum class PairMode { knn_similars, all_similars };

PairSets build_pair_sets(const LabeledDataset& data, std::size_t similars_per_query, PairMode mode);

struct SolverControls {
  int max_iters = 500;
  double step_size = 1.0;   // initial step for the line search
  double grad_tol = 1e-6;   // stop when the Frobenius norm of an accepted step is below this
  bool line_search = true;  // Armijo backtracking; off means fixed step
  double armijo = 1e-4;
  double shrink = 0.5;
};

struct LanmlConfig {
  double gamma1 = -1.0;
  double gamma2 = 1.0;
  double reg_weight = 0.5;
  LossFunction loss{LossKind::hinge, 1.0};
  std::size_t similars_per_query = 10;
  PairMode pair_mode = PairMode::knn_similars;
  SolverControls solver;

  /// gamma1 < 0 with gamma2 > 0 makes the problem convex.
  bool convex_mode() const noexcept { return gamma1 < 0.0; }
  /// Throws InvalidInput on gamma2 <= 0, negative reg_weight or non-finite values.
  void validate() const;
};

/// Loss (or objective value), its gradient with respect to M, and the
/// per-query term that was fed to the outer loss (LANML) or summed (PNCA).
struct ObjectiveValue {
  double value = 0.0;
  Eigen::MatrixXd grad;
  std::vector<double> per_query;
};

/// sum_i loss(b_S_i(gamma1) - b_D_i(gamma2)) + reg_weight * Omega(M), where b
/// is the log-exp mean of the squared distances to S_i or D_i and
/// Omega(M) = (1/N) sum_i (1/|S_i|) sum_{j in S_i} d_M(x_i, x_j).
ObjectiveValue lanml_objective(const MetricMatrix& m, const LabeledDataset& data,
                               const PairSets& pairs, const LanmlConfig& cfg);

/// sum_i P_i / (Q_i + P_i) with P_i = (sum_{S_i} exp(-alpha d))^(1/alpha) and
/// Q_i = sum_{D_i} exp(-d). To be maximized. At alpha = 1 each summand is the
/// NCA probability of classifying x_i correctly.
ObjectiveValue pnca_objective(const MetricMatrix& m, const LabeledDataset& data,
                              const PairSets& pairs, double alpha);

struct IterationRecord {
  int iter = 0;
  double loss = 0.0;
  double step = 0.0;       // Frobenius norm of the accepted update
  double grad_norm = 0.0;  // Frobenius norm of the gradient at the iterate
};

struct SolveResult {
  MetricMatrix metric;
  std::vector<IterationRecord> trace;
  bool converged = false;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

using MetricObjective = std::function<ObjectiveValue(const MetricMatrix&)>;

/// Projected gradient descent M <- Proj_PSD(M - eta * grad) with optional
/// Armijo backtracking; with backtracking the loss trace is non-increasing.
SolveResult minimize_on_psd_cone(const MetricObjective& objective, const MetricMatrix& init,
                                 const SolverControls& controls);

/// LANML with pair sets built from `cfg`. `init` must be PSD (any PSD matrix
/// is admissible in convex mode); I / sqrt(N) is the customary start.
SolveResult solve_lanml(const LabeledDataset& data, const LanmlConfig& cfg, const MetricMatrix& init);

/// Maximizes the PNCA objective by minimizing its negation.
SolveResult solve_pnca(const LabeledDataset& data, double alpha, const MetricMatrix& init,
                       const SolverControls& controls);

MetricMatrix default_init(const LabeledDataset& data);

void to_json(nlohmann::json& j, const MetricMatrix& m);
void from_json(const nlohmann::json& j, MetricMatrix& m);
/// CSV with header "iter,loss,step,grad_norm".
std::string trace_csv(const std::vector<IterationRecord>& trace);

}  // namespace anml
