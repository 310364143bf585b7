#include "anml/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "anml/errors.hpp"
#include "anml/logexp.hpp"

namespace anml {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using Eigen::Index;

Index ix(std::size_t i) { return static_cast<Index>(i); }

// Fixed-order pairwise reduction so the total does not depend on how the
// per-anchor terms were produced.
double pairwise_sum(const double* v, std::size_t n) {
  if (n == 0) return 0.0;
  if (n == 1) return v[0];
  const std::size_t h = n / 2;
  return pairwise_sum(v, h) + pairwise_sum(v + h, n - h);
}

double pairwise_sum(const std::vector<double>& v) { return pairwise_sum(v.data(), v.size()); }

struct Lse {
  double value = 0.0;
  std::vector<double> weights;
};

// log(sum exp(z_k)) with its softmax weights.
Lse log_sum_exp(const std::vector<double>& z) {
  Lse out;
  const double top = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  out.weights.resize(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) {
    out.weights[k] = std::exp(z[k] - top);
    s += out.weights[k];
  }
  for (auto& w : out.weights) w /= s;
  out.value = top + std::log(s);
  return out;
}

double distance(Distance kind, const Eigen::MatrixXd& f, std::size_t i, std::size_t j) {
  if (kind == Distance::sq_euclidean) return (f.row(ix(i)) - f.row(ix(j))).squaredNorm();
  return -f.row(ix(i)).dot(f.row(ix(j)));
}

// grad += w * d distance(i, j) / d f.
void add_distance_grad(Distance kind, const Eigen::MatrixXd& f, std::size_t i, std::size_t j, double w,
                       Eigen::MatrixXd& grad) {
  if (kind == Distance::sq_euclidean) {
    const Eigen::RowVectorXd g = 2.0 * w * (f.row(ix(i)) - f.row(ix(j)));
    grad.row(ix(i)) += g;
    grad.row(ix(j)) -= g;
  } else {
    grad.row(ix(i)) -= w * f.row(ix(j));
    grad.row(ix(j)) -= w * f.row(ix(i));
  }
}

// grad += w * d (f_i . f_j) / d f.
void add_dot_grad(const Eigen::MatrixXd& f, std::size_t i, std::size_t j, double w, Eigen::MatrixXd& grad) {
  grad.row(ix(i)) += w * f.row(ix(j));
  grad.row(ix(j)) += w * f.row(ix(i));
}

LossReport empty_report(const Eigen::MatrixXd& f) {
  LossReport r;
  r.grad = Eigen::MatrixXd::Zero(f.rows(), f.cols());
  r.per_anchor.assign(static_cast<std::size_t>(f.rows()), kNaN);
  return r;
}

void check_pairs(const PairSets& pairs, std::size_t n) {
  if (pairs.similars.size() != n || pairs.dissimilars.size() != n) {
    throw InvalidInput("pair sets do not match the batch size");
  }
  for (const auto* lists : {&pairs.similars, &pairs.dissimilars}) {
    for (const auto& list : *lists) {
      for (auto j : list) {
        if (j >= n) throw InvalidInput("pair index out of range");
      }
    }
  }
}

void require_normalized(const EmbeddingBatch& batch, const char* what) {
  if (!batch.normalized()) {
    throw InvalidInput(std::string(what) + ": cosine similarity needs a normalized batch");
  }
}

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw InvalidInput(std::string(what) + " must be finite");
}

// Anchor row and positive row for each class, in order of first appearance.
std::vector<std::pair<std::size_t, std::size_t>> npair_structure(std::span<const int> labels) {
  std::map<int, std::vector<std::size_t>> rows;
  std::vector<int> order;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& r = rows[labels[i]];
    if (r.empty()) order.push_back(labels[i]);
    r.push_back(i);
  }
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (int c : order) {
    const auto& r = rows[c];
    if (r.size() != 2) {
      throw InvalidInput("npairs: class " + std::to_string(c) + " has " + std::to_string(r.size()) +
                         " rows, need exactly 2");
    }
    out.emplace_back(r[0], r[1]);
  }
  if (out.size() < 2) throw InvalidInput("npairs: need at least two classes");
  return out;
}

}  // namespace

EmbeddingBatch::EmbeddingBatch(Eigen::MatrixXd vectors, std::vector<int> labels, bool normalized)
    : vectors_(std::move(vectors)), labels_(std::move(labels)), normalized_(normalized) {
  if (static_cast<std::size_t>(vectors_.rows()) != labels_.size()) {
    throw InvalidInput("embedding batch: row count does not match label count");
  }
  if (labels_.size() < 2) throw InvalidInput("embedding batch: need at least two rows");
  if (vectors_.cols() < 1) throw InvalidInput("embedding batch: empty embedding dimension");
  if (!vectors_.allFinite()) throw InvalidInput("embedding batch: non-finite entry");
  if (normalized_) {
    for (Index i = 0; i < vectors_.rows(); ++i) {
      const double norm = vectors_.row(i).norm();
      if (std::abs(norm - 1.0) > kUnitNormTolerance) {
        throw InvalidInput("embedding batch: row " + std::to_string(i) + " has norm " + std::to_string(norm) +
                           ", expected 1");
      }
    }
  }
}

EmbeddingBatch EmbeddingBatch::normalized_from(Eigen::MatrixXd vectors, std::vector<int> labels) {
  for (Index i = 0; i < vectors.rows(); ++i) {
    const double norm = vectors.row(i).norm();
    if (!(norm > 0.0)) throw InvalidInput("embedding batch: cannot normalize a zero row");
    vectors.row(i) /= norm;
  }
  return EmbeddingBatch(std::move(vectors), std::move(labels), true);
}

Distance parse_distance(const std::string& text) {
  if (text == "neg_cosine") return Distance::neg_cosine;
  if (text == "sq_euclidean") return Distance::sq_euclidean;
  throw InvalidInput("unknown similarity '" + text + "' (expected neg_cosine or sq_euclidean)");
}

std::string to_string(Distance d) { return d == Distance::neg_cosine ? "neg_cosine" : "sq_euclidean"; }

void to_json(nlohmann::json& j, const LossReport& r) {
  j = {{"loss", r.loss},
       {"skipped_anchors", r.skipped_anchors},
       {"active_pairs", r.active_pairs},
       {"grad_norm", r.grad_norm()}};
}

DanmlConfig DanmlConfig::from_tuning_grid(double gamma1_magnitude, double gamma2_magnitude, double lambda1,
                                          double lambda2, LossFunction loss, Distance similarity) {
  if (lambda2 < lambda1) throw InvalidInput("danml: lambda2 must be at least lambda1");
  DanmlConfig cfg;
  cfg.gamma1 = -std::abs(gamma1_magnitude);
  cfg.gamma2 = std::abs(gamma2_magnitude);
  cfg.lambda1 = lambda1;
  cfg.lambda2 = lambda2;
  cfg.loss = loss;
  cfg.similarity = similarity;
  std::ostringstream note;
  note.precision(17);
  note << "gamma1 " << gamma1_magnitude << " -> " << cfg.gamma1 << ", gamma2 " << gamma2_magnitude << " -> "
       << cfg.gamma2;
  cfg.sign_mapping = note.str();
  cfg.validate();
  return cfg;
}

void DanmlConfig::validate() const {
  require_finite(gamma1, "danml: gamma1");
  require_finite(gamma2, "danml: gamma2");
  require_finite(lambda1, "danml: lambda1");
  require_finite(lambda2, "danml: lambda2");
  require_finite(loss.margin, "danml: loss margin");
  if (!(gamma1 * gamma2 < 0.0)) throw InvalidInput("danml: gamma1 and gamma2 must have opposite signs");
}

namespace kernels {

LossReport danml(const Eigen::MatrixXd& f, const PairSets& pairs, const DanmlConfig& cfg) {
  const auto n = static_cast<std::size_t>(f.rows());
  LossReport r = empty_report(f);
  std::vector<double> terms(n, 0.0);
  std::vector<double> near, far;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& pos = pairs.similars[i];
    const auto& neg = pairs.dissimilars[i];
    if (pos.empty() || neg.empty()) {
      ++r.skipped_anchors;
      continue;
    }
    near.assign(1, cfg.lambda1);
    for (auto j : pos) near.push_back(distance(cfg.similarity, f, i, j));
    far.assign(1, cfg.lambda2);
    for (auto l : neg) far.push_back(distance(cfg.similarity, f, i, l));
    const LogExpMean s = log_exp_mean_with_weights(near, cfg.gamma1);
    const LogExpMean t = log_exp_mean_with_weights(far, cfg.gamma2);
    const double arg = s.value - t.value;
    r.per_anchor[i] = arg;
    terms[i] = cfg.loss.value(arg);
    const double slope = cfg.loss.derivative(arg);
    if (slope == 0.0) continue;
    r.active_pairs += pos.size() + neg.size();
    for (std::size_t k = 0; k < pos.size(); ++k) {
      add_distance_grad(cfg.similarity, f, i, pos[k], slope * s.weights[k + 1], r.grad);
    }
    for (std::size_t k = 0; k < neg.size(); ++k) {
      add_distance_grad(cfg.similarity, f, i, neg[k], -slope * t.weights[k + 1], r.grad);
    }
  }
  r.loss = pairwise_sum(terms);
  return r;
}

LossReport ms(const Eigen::MatrixXd& f, const PairSets& pairs, double alpha, double beta, double margin,
              PairQuantity quantity) {
  const auto n = static_cast<std::size_t>(f.rows());
  const double sign = quantity == PairQuantity::cosine ? 1.0 : -1.0;
  LossReport r = empty_report(f);
  std::vector<double> terms(n, 0.0);
  std::vector<double> z;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& pos = pairs.similars[i];
    const auto& neg = pairs.dissimilars[i];
    double term = 0.0;
    if (!pos.empty()) {
      z.assign(1, 0.0);
      for (auto j : pos) z.push_back(alpha * (sign * f.row(ix(i)).dot(f.row(ix(j))) - margin));
      const Lse l = log_sum_exp(z);
      term += l.value / alpha;
      for (std::size_t k = 0; k < pos.size(); ++k) add_dot_grad(f, i, pos[k], sign * l.weights[k + 1], r.grad);
    }
    if (!neg.empty()) {
      z.assign(1, 0.0);
      for (auto l : neg) z.push_back(beta * (margin - sign * f.row(ix(i)).dot(f.row(ix(l)))));
      const Lse l = log_sum_exp(z);
      term += l.value / beta;
      for (std::size_t k = 0; k < neg.size(); ++k) add_dot_grad(f, i, neg[k], -sign * l.weights[k + 1], r.grad);
    }
    r.active_pairs += pos.size() + neg.size();
    r.per_anchor[i] = term;
    terms[i] = term;
  }
  r.loss = pairwise_sum(terms);
  return r;
}

LossReport lifted(const Eigen::MatrixXd& f, const PairSets& pairs, double gamma1, double gamma2, double lambda1,
                  double lambda2, double margin, LiftedMode mode) {
  const auto n = static_cast<std::size_t>(f.rows());
  const bool improved = mode == LiftedMode::improved;
  const double g1 = improved ? gamma1 : 1.0;
  const double g2 = improved ? gamma2 : 1.0;
  const std::size_t offset = improved ? 1 : 0;
  LossReport r = empty_report(f);
  std::vector<double> terms(n, 0.0);
  std::vector<double> zp, zn;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& pos = pairs.similars[i];
    const auto& neg = pairs.dissimilars[i];
    if (pos.empty() || neg.empty()) {
      ++r.skipped_anchors;
      continue;
    }
    zp.clear();
    zn.clear();
    if (improved) {
      zp.push_back(-g1 * lambda1);
      zn.push_back(g2 * lambda2);
    }
    for (auto j : pos) zp.push_back(-g1 * f.row(ix(i)).dot(f.row(ix(j))));
    for (auto l : neg) zn.push_back(g2 * f.row(ix(i)).dot(f.row(ix(l))));
    const Lse lp = log_sum_exp(zp);
    const Lse ln = log_sum_exp(zn);
    const double arg = lp.value / g1 + ln.value / g2 + margin;
    r.per_anchor[i] = arg;
    if (!(arg > 0.0)) continue;
    terms[i] = arg;
    r.active_pairs += pos.size() + neg.size();
    for (std::size_t k = 0; k < pos.size(); ++k) add_dot_grad(f, i, pos[k], -lp.weights[k + offset], r.grad);
    for (std::size_t k = 0; k < neg.size(); ++k) add_dot_grad(f, i, neg[k], ln.weights[k + offset], r.grad);
  }
  r.loss = pairwise_sum(terms);
  return r;
}

LossReport npairs(const Eigen::MatrixXd& f, std::span<const int> labels, double gamma, double lambda) {
  const auto tuples = npair_structure(labels);
  const std::size_t classes = tuples.size();
  const double scale = 1.0 / (static_cast<double>(classes) * gamma);
  LossReport r = empty_report(f);
  std::vector<double> terms(classes, 0.0);
  std::vector<double> z;
  for (std::size_t i = 0; i < classes; ++i) {
    const auto [a, p] = tuples[i];
    const double own = f.row(ix(a)).dot(f.row(ix(p)));
    z.assign(1, 0.0);
    for (std::size_t j = 0; j < classes; ++j) {
      if (j == i) continue;
      z.push_back(gamma * (-lambda + f.row(ix(a)).dot(f.row(ix(tuples[j].second))) - own));
    }
    const Lse l = log_sum_exp(z);
    terms[i] = scale * l.value;
    r.per_anchor[a] = l.value;
    std::size_t k = 0;
    for (std::size_t j = 0; j < classes; ++j) {
      if (j == i) continue;
      ++k;
      const std::size_t q = tuples[j].second;
      const double w = scale * gamma * l.weights[k];
      r.grad.row(ix(a)) += w * (f.row(ix(q)) - f.row(ix(p)));
      r.grad.row(ix(q)) += w * f.row(ix(a));
      r.grad.row(ix(p)) -= w * f.row(ix(a));
    }
    r.active_pairs += classes - 1;
  }
  r.loss = pairwise_sum(terms);
  return r;
}

LossReport triplet(const Eigen::MatrixXd& f, const PairSets& pairs, double margin) {
  const auto n = static_cast<std::size_t>(f.rows());
  LossReport r = empty_report(f);
  std::vector<double> terms;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& pos = pairs.similars[i];
    const auto& neg = pairs.dissimilars[i];
    if (pos.empty() || neg.empty()) {
      ++r.skipped_anchors;
      continue;
    }
    double hardest_pos = -std::numeric_limits<double>::infinity();
    double hardest_neg = std::numeric_limits<double>::infinity();
    for (auto j : pos) {
      const double dij = distance(Distance::sq_euclidean, f, i, j);
      hardest_pos = std::max(hardest_pos, dij);
      for (auto l : neg) {
        const double dil = distance(Distance::sq_euclidean, f, i, l);
        const double v = dij - dil + margin;
        if (!(v > 0.0)) continue;
        terms.push_back(v);
        add_distance_grad(Distance::sq_euclidean, f, i, j, 1.0, r.grad);
        add_distance_grad(Distance::sq_euclidean, f, i, l, -1.0, r.grad);
      }
    }
    for (auto l : neg) hardest_neg = std::min(hardest_neg, distance(Distance::sq_euclidean, f, i, l));
    r.per_anchor[i] = hardest_pos - hardest_neg + margin;
  }
  r.active_pairs = terms.size();
  if (!terms.empty()) {
    const double inv = 1.0 / static_cast<double>(terms.size());
    r.loss = pairwise_sum(terms) * inv;
    r.grad *= inv;
  }
  return r;
}

}  // namespace kernels

PairSets label_pairs(std::span<const int> labels) {
  const std::size_t n = labels.size();
  PairSets p;
  p.similars.resize(n);
  p.dissimilars.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      (labels[i] == labels[j] ? p.similars[i] : p.dissimilars[i]).push_back(j);
    }
  }
  return p;
}

LossReport danml_loss(const EmbeddingBatch& batch, const DanmlConfig& cfg) {
  return danml_loss(batch, cfg, label_pairs(batch.labels()));
}

LossReport danml_loss(const EmbeddingBatch& batch, const DanmlConfig& cfg, const PairSets& pairs) {
  cfg.validate();
  if (cfg.similarity == Distance::neg_cosine) require_normalized(batch, "danml_loss");
  check_pairs(pairs, batch.size());
  return kernels::danml(batch.vectors(), pairs, cfg);
}

LossReport ms_loss(const EmbeddingBatch& batch, double alpha, double beta, double margin, PairQuantity quantity) {
  return ms_loss(batch, alpha, beta, margin, quantity, label_pairs(batch.labels()));
}

LossReport ms_loss(const EmbeddingBatch& batch, double alpha, double beta, double margin, PairQuantity quantity,
                   const PairSets& pairs) {
  require_finite(alpha, "ms_loss: alpha");
  require_finite(beta, "ms_loss: beta");
  require_finite(margin, "ms_loss: margin");
  if (!(alpha > 0.0) || !(beta > 0.0)) throw InvalidInput("ms_loss: alpha and beta must be positive");
  require_normalized(batch, "ms_loss");
  check_pairs(pairs, batch.size());
  return kernels::ms(batch.vectors(), pairs, alpha, beta, margin, quantity);
}

LossReport lifted_improved_loss(const EmbeddingBatch& batch, double gamma1, double gamma2, double lambda1,
                                double lambda2, double margin, LiftedMode mode) {
  require_finite(gamma1, "lifted: gamma1");
  require_finite(gamma2, "lifted: gamma2");
  require_finite(lambda1, "lifted: lambda1");
  require_finite(lambda2, "lifted: lambda2");
  require_finite(margin, "lifted: margin");
  if (mode == LiftedMode::improved && (std::abs(gamma1) < kGammaEpsilon || std::abs(gamma2) < kGammaEpsilon)) {
    throw InvalidInput("lifted: gamma1 and gamma2 must be nonzero");
  }
  require_normalized(batch, "lifted_improved_loss");
  return kernels::lifted(batch.vectors(), label_pairs(batch.labels()), gamma1, gamma2, lambda1, lambda2, margin,
                         mode);
}

LossReport npairs_improved_loss(const EmbeddingBatch& batch, double gamma, double lambda) {
  require_finite(gamma, "npairs: gamma");
  require_finite(lambda, "npairs: lambda");
  if (!(gamma > 0.0)) throw InvalidInput("npairs: gamma must be positive");
  require_normalized(batch, "npairs_improved_loss");
  return kernels::npairs(batch.vectors(), batch.labels(), gamma, lambda);
}

LossReport triplet_loss(const EmbeddingBatch& batch, double margin) {
  require_finite(margin, "triplet: margin");
  return kernels::triplet(batch.vectors(), label_pairs(batch.labels()), margin);
}

PairSets mine_pairs(const EmbeddingBatch& batch, const MiningConfig& cfg) {
  if (std::isnan(cfg.epsilon) || cfg.epsilon < 0.0) throw InvalidInput("mining: epsilon must be non-negative");
  PairSets all = label_pairs(batch.labels());
  if (!cfg.enabled) return all;
  const auto& f = batch.vectors();
  const std::size_t n = batch.size();
  const Eigen::VectorXd norms = f.rowwise().norm();
  auto cosine = [&](std::size_t i, std::size_t j) {
    return f.row(ix(i)).dot(f.row(ix(j))) / (norms(ix(i)) * norms(ix(j)));
  };
  const bool keep_all = std::isinf(cfg.epsilon);

  PairSets out;
  out.similars.resize(n);
  out.dissimilars.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& pos = all.similars[i];
    const auto& neg = all.dissimilars[i];
    if (pos.empty()) continue;
    if (keep_all) {
      out.similars[i] = pos;
      out.dissimilars[i] = neg;
      continue;
    }
    double least_similar_pos = std::numeric_limits<double>::infinity();
    for (auto j : pos) least_similar_pos = std::min(least_similar_pos, cosine(i, j));
    double most_similar_neg = -std::numeric_limits<double>::infinity();
    for (auto k : neg) most_similar_neg = std::max(most_similar_neg, cosine(i, k));
    for (auto k : neg) {
      if (cosine(i, k) > least_similar_pos - cfg.epsilon) out.dissimilars[i].push_back(k);
    }
    for (auto j : pos) {
      if (cosine(i, j) < most_similar_neg + cfg.epsilon) out.similars[i].push_back(j);
    }
  }
  return out;
}

}  // namespace anml
