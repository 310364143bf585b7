#include "anml/mahalanobis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "anml/errors.hpp"
#include "anml/logexp.hpp"

namespace anml {

MetricMatrix::MetricMatrix(Eigen::MatrixXd m) {
  if (m.rows() != m.cols() || m.rows() == 0) throw InvalidInput("metric: matrix must be square and non-empty");
  if (!m.allFinite()) throw InvalidInput("metric: non-finite entry");
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > kSymmetryTolerance) {
    throw InvalidInput("metric: matrix is not symmetric");
  }
  m_ = 0.5 * (m + m.transpose());
  if (min_eigenvalue() < -kEigenTolerance) throw InvalidInput("metric: matrix is not positive semidefinite");
}

MetricMatrix MetricMatrix::identity(std::size_t dim, double scale) {
  if (dim == 0 || !(scale >= 0.0)) throw InvalidInput("metric: identity needs dim > 0 and scale >= 0");
  const auto d = static_cast<Eigen::Index>(dim);
  return MetricMatrix(Eigen::MatrixXd::Identity(d, d) * scale, Trusted{});
}

MetricMatrix MetricMatrix::project(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols() || !m.allFinite()) throw NumericError("metric: cannot project a non-finite or non-square matrix");
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) throw NumericError("metric: eigendecomposition failed");
  const Eigen::VectorXd clipped = eig.eigenvalues().cwiseMax(0.0);
  Eigen::MatrixXd out = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
  out = 0.5 * (out + out.transpose());
  return MetricMatrix(std::move(out), Trusted{});
}

double MetricMatrix::min_eigenvalue() const {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m_, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw NumericError("metric: eigendecomposition failed");
  return eig.eigenvalues().minCoeff();
}

Eigen::MatrixXd MetricMatrix::factor() const {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m_);
  if (eig.info() != Eigen::Success) throw NumericError("metric: eigendecomposition failed");
  return eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

double mahalanobis_sq(const MetricMatrix& m, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size() || static_cast<std::size_t>(x.size()) != m.dim()) {
    throw InvalidInput("mahalanobis_sq: dimension mismatch");
  }
  const Eigen::VectorXd v = x - y;
  return std::max(0.0, v.dot(m.matrix() * v));
}

PairSets build_pair_sets(const LabeledDataset& data, std::size_t similars_per_query, PairMode mode) {
  const auto counts = data.class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 1) {
      throw InvalidInput("pair sets: class '" + data.label_names()[c] + "' has a single sample");
    }
  }
  if (mode == PairMode::knn_similars && similars_per_query == 0) {
    throw InvalidInput("pair sets: similars_per_query must be positive");
  }

  const std::size_t n = data.size();
  const auto& x = data.features();
  const auto& y = data.labels();
  PairSets out;
  out.similars.resize(n);
  out.dissimilars.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> same;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      (y[j] == y[i] ? same : out.dissimilars[i]).push_back(j);
    }
    if (mode == PairMode::knn_similars) {
      std::vector<double> dist(same.size());
      for (std::size_t k = 0; k < same.size(); ++k) {
        dist[k] = (x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(same[k]))).squaredNorm();
      }
      std::vector<std::size_t> order(same.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
      if (similars_per_query > same.size()) out.truncated = true;
      const std::size_t keep = std::min(similars_per_query, same.size());
      for (std::size_t k = 0; k < keep; ++k) out.similars[i].push_back(same[order[k]]);
    } else {
      out.similars[i] = std::move(same);
    }
  }
  return out;
}

void LanmlConfig::validate() const {
  if (!std::isfinite(gamma1) || !std::isfinite(gamma2) || !std::isfinite(reg_weight)) {
    throw InvalidInput("lanml: non-finite parameter");
  }
  if (!(gamma2 > 0.0)) throw InvalidInput("lanml: gamma2 must be > 0");
  if (reg_weight < 0.0) throw InvalidInput("lanml: reg_weight must be >= 0");
  if (loss.kind == LossKind::hinge && !std::isfinite(loss.margin)) throw InvalidInput("lanml: non-finite hinge margin");
  if (solver.max_iters < 0 || !(solver.step_size > 0.0) || !(solver.grad_tol >= 0.0)) {
    throw InvalidInput("lanml: invalid solver controls");
  }
}

namespace {

void check_shapes(const MetricMatrix& m, const LabeledDataset& data, const PairSets& pairs) {
  if (m.dim() != data.dim()) throw InvalidInput("objective: metric and data dimensions differ");
  if (pairs.size() != data.size()) throw InvalidInput("objective: pair sets do not match the data");
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    for (const auto* list : {&pairs.similars[i], &pairs.dissimilars[i]}) {
      for (std::size_t j : *list) {
        if (j >= data.size() || j == i) throw InvalidInput("objective: invalid pair index");
      }
    }
  }
}

// Accumulates sum over pairs of c_ij (x_i - x_j)(x_i - x_j)^T as
// X^T diag(w) X - X^T U - U^T X, with w the per-point coefficient mass and
// row i of U equal to sum_j c_ij x_j.
class PairGradient {
 public:
  explicit PairGradient(const Eigen::MatrixXd& x)
      : x_(x), weight_(Eigen::VectorXd::Zero(x.rows())), u_(Eigen::MatrixXd::Zero(x.rows(), x.cols())) {}

  void add(std::size_t i, std::size_t j, double c) {
    const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
    weight_(ii) += c;
    weight_(jj) += c;
    u_.row(ii) += c * x_.row(jj);
  }

  Eigen::MatrixXd finish() const {
    const Eigen::MatrixXd cross = x_.transpose() * u_;
    Eigen::MatrixXd g = x_.transpose() * weight_.asDiagonal() * x_ - cross - cross.transpose();
    return 0.5 * (g + g.transpose());
  }

 private:
  const Eigen::MatrixXd& x_;
  Eigen::VectorXd weight_;
  Eigen::MatrixXd u_;
};

// Squared distances from query i to every index in `idx`, using Y = X M.
void distances(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, std::size_t i,
               const std::vector<std::size_t>& idx, std::vector<double>& out) {
  out.resize(idx.size());
  const auto ii = static_cast<Eigen::Index>(i);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto jj = static_cast<Eigen::Index>(idx[k]);
    out[k] = std::max(0.0, (x.row(ii) - x.row(jj)).dot(y.row(ii) - y.row(jj)));
  }
}

double log_sum_exp(const std::vector<double>& v) {
  const double top = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double e : v) s += std::exp(e - top);
  return top + std::log(s);
}

}  // namespace

ObjectiveValue lanml_objective(const MetricMatrix& m, const LabeledDataset& data, const PairSets& pairs,
                               const LanmlConfig& cfg) {
  cfg.validate();
  check_shapes(m, data, pairs);
  const auto& x = data.features();
  const Eigen::MatrixXd y = x * m.matrix();
  const std::size_t n = data.size();

  ObjectiveValue out;
  out.per_query.assign(n, 0.0);
  PairGradient grad(x);
  double loss = 0.0, omega = 0.0;
  std::vector<double> ds, dd;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = pairs.similars[i];
    const auto& d = pairs.dissimilars[i];
    if (s.empty()) continue;
    distances(x, y, i, s, ds);

    const double reg_coef = cfg.reg_weight / (static_cast<double>(n) * static_cast<double>(s.size()));
    for (std::size_t k = 0; k < s.size(); ++k) {
      omega += ds[k] / (static_cast<double>(n) * static_cast<double>(s.size()));
      if (reg_coef != 0.0) grad.add(i, s[k], reg_coef);
    }
    if (d.empty()) continue;
    distances(x, y, i, d, dd);

    const auto near = log_exp_mean_with_weights(ds, cfg.gamma1);
    const auto far = log_exp_mean_with_weights(dd, cfg.gamma2);
    const double arg = near.value - far.value;
    out.per_query[i] = arg;
    loss += cfg.loss.value(arg);
    const double slope = cfg.loss.derivative(arg);
    if (slope == 0.0) continue;
    for (std::size_t k = 0; k < s.size(); ++k) grad.add(i, s[k], slope * near.weights[k]);
    for (std::size_t k = 0; k < d.size(); ++k) grad.add(i, d[k], -slope * far.weights[k]);
  }
  out.value = loss + cfg.reg_weight * omega;
  out.grad = grad.finish();
  if (!std::isfinite(out.value) || !out.grad.allFinite()) {
    throw NumericError("lanml_objective: non-finite loss or gradient");
  }
  return out;
}

ObjectiveValue pnca_objective(const MetricMatrix& m, const LabeledDataset& data, const PairSets& pairs,
                              double alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InvalidInput("pnca: alpha must be > 0");
  check_shapes(m, data, pairs);
  const auto& x = data.features();
  const Eigen::MatrixXd y = x * m.matrix();
  const std::size_t n = data.size();

  ObjectiveValue out;
  out.per_query.assign(n, 0.0);
  PairGradient grad(x);
  std::vector<double> ds, dd, es, ed;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = pairs.similars[i];
    const auto& d = pairs.dissimilars[i];
    if (s.empty()) continue;
    if (d.empty()) {
      out.per_query[i] = 1.0;
      continue;
    }
    distances(x, y, i, s, ds);
    distances(x, y, i, d, dd);
    es.resize(ds.size());
    ed.resize(dd.size());
    for (std::size_t k = 0; k < ds.size(); ++k) es[k] = -alpha * ds[k];
    for (std::size_t k = 0; k < dd.size(); ++k) ed[k] = -dd[k];
    const double lse_s = log_sum_exp(es);
    const double lse_d = log_sum_exp(ed);
    // summand = sigmoid(log P - log Q)
    const double z = lse_s / alpha - lse_d;
    const double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    out.per_query[i] = p;
    out.value += p;

    const double dp = p * (1.0 - p);
    for (std::size_t k = 0; k < s.size(); ++k) grad.add(i, s[k], -dp * std::exp(es[k] - lse_s));
    for (std::size_t k = 0; k < d.size(); ++k) grad.add(i, d[k], dp * std::exp(ed[k] - lse_d));
  }
  out.grad = grad.finish();
  if (!std::isfinite(out.value) || !out.grad.allFinite()) {
    throw NumericError("pnca_objective: non-finite value or gradient");
  }
  return out;
}

SolveResult minimize_on_psd_cone(const MetricObjective& objective, const MetricMatrix& init,
                                 const SolverControls& controls) {
  SolveResult result;
  MetricMatrix current = init;
  ObjectiveValue value = objective(current);
  result.initial_loss = value.value;
  result.trace.push_back({0, value.value, 0.0, value.grad.norm()});

  double eta = controls.step_size;
  const double eta_max = controls.step_size * 1e8;
  const double eta_min = controls.step_size * 1e-20;
  for (int it = 1; it <= controls.max_iters; ++it) {
    bool shrunk = false;
    bool accepted = false;
    MetricMatrix candidate;
    ObjectiveValue next;
    double step_norm = 0.0;
    while (eta >= eta_min) {
      candidate = MetricMatrix::project(current.matrix() - eta * value.grad);
      const Eigen::MatrixXd delta = candidate.matrix() - current.matrix();
      step_norm = delta.norm();
      next = objective(candidate);
      if (!controls.line_search ||
          next.value <= value.value + controls.armijo * (value.grad.array() * delta.array()).sum()) {
        accepted = true;
        break;
      }
      eta *= controls.shrink;
      shrunk = true;
    }
    if (!accepted) {
      // No decrease available at any step length: numerically stationary.
      result.converged = true;
      break;
    }
    current = std::move(candidate);
    value = std::move(next);
    result.trace.push_back({it, value.value, step_norm, value.grad.norm()});
    if (step_norm <= controls.grad_tol) {
      result.converged = true;
      break;
    }
    if (!shrunk && controls.line_search) eta = std::min(2.0 * eta, eta_max);
  }
  result.metric = std::move(current);
  result.final_loss = value.value;
  return result;
}

MetricMatrix default_init(const LabeledDataset& data) {
  return MetricMatrix::identity(data.dim(), 1.0 / std::sqrt(static_cast<double>(data.size())));
}

SolveResult solve_lanml(const LabeledDataset& data, const LanmlConfig& cfg, const MetricMatrix& init) {
  cfg.validate();
  if (init.dim() != data.dim()) throw InvalidInput("solve_lanml: init dimension mismatch");
  const PairSets pairs = build_pair_sets(data, cfg.similars_per_query, cfg.pair_mode);
  return minimize_on_psd_cone([&](const MetricMatrix& m) { return lanml_objective(m, data, pairs, cfg); },
                              init, cfg.solver);
}

SolveResult solve_pnca(const LabeledDataset& data, double alpha, const MetricMatrix& init,
                       const SolverControls& controls) {
  if (init.dim() != data.dim()) throw InvalidInput("solve_pnca: init dimension mismatch");
  const PairSets pairs = build_pair_sets(data, 1, PairMode::all_similars);
  return minimize_on_psd_cone(
      [&](const MetricMatrix& m) {
        ObjectiveValue v = pnca_objective(m, data, pairs, alpha);
        v.value = -v.value;
        v.grad = -v.grad;
        return v;
      },
      init, controls);
}

void to_json(nlohmann::json& j, const MetricMatrix& m) {
  const auto d = static_cast<Eigen::Index>(m.dim());
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(d * d));
  for (Eigen::Index r = 0; r < d; ++r)
    for (Eigen::Index c = 0; c < d; ++c) values.push_back(m.matrix()(r, c));
  j = {{"d", d}, {"values", values}};
}

void from_json(const nlohmann::json& j, MetricMatrix& m) {
  const auto d = j.at("d").get<Eigen::Index>();
  const auto values = j.at("values").get<std::vector<double>>();
  if (d <= 0 || static_cast<Eigen::Index>(values.size()) != d * d) {
    throw InvalidInput("metric record: expected d*d row-major values");
  }
  Eigen::MatrixXd mat(d, d);
  for (Eigen::Index r = 0; r < d; ++r)
    for (Eigen::Index c = 0; c < d; ++c) mat(r, c) = values[static_cast<std::size_t>(r * d + c)];
  m = MetricMatrix(std::move(mat));
}

std::string trace_csv(const std::vector<IterationRecord>& trace) {
  std::ostringstream out;
  out.precision(17);
  out << "iter,loss,step,grad_norm\n";
  for (const auto& r : trace) out << r.iter << ',' << r.loss << ',' << r.step << ',' << r.grad_norm << '\n';
  return out.str();
}

}  // namespace anml
