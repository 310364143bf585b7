#pragma once

// Batch losses over embedding vectors, each returning the loss and its
// gradient with respect to every row of the batch.
//
// Distance conventions (each loss states which it uses):
//   neg_cosine    d(i, j) = -f_i . f_j       (unit-norm rows)
//   sq_euclidean  d(i, j) = |f_i - f_j|^2
//   cosine        D(i, j) =  f_i . f_j       (a similarity, larger is closer)
// Gradients are taken with respect to the rows as free vectors, i.e. after
// any L2-normalization layer.

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "anml/loss_function.hpp"
#include "anml/pairs.hpp"

namespace anml {

inline constexpr double kUnitNormTolerance = 1e-6;

class EmbeddingBatch {
 public:
  EmbeddingBatch() = default;
  /// Throws InvalidInput on shape mismatch, fewer than two rows, non-finite
  /// entries, or (when `normalized`) a row whose norm is not 1 within 1e-6.
  EmbeddingBatch(Eigen::MatrixXd vectors, std::vector<int> labels, bool normalized);

  /// Rescales every row to unit length.
  static EmbeddingBatch normalized_from(Eigen::MatrixXd vectors, std::vector<int> labels);

  const Eigen::MatrixXd& vectors() const noexcept { return vectors_; }
  const std::vector<int>& labels() const noexcept { return labels_; }
  bool normalized() const noexcept { return normalized_; }
  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(vectors_.cols()); }

 private:
  Eigen::MatrixXd vectors_;
  std::vector<int> labels_;
  bool normalized_ = false;
};

enum class Distance { neg_cosine, sq_euclidean };
enum class PairQuantity { cosine, neg_cosine };

Distance parse_distance(const std::string& text);
std::string to_string(Distance d);

struct LossReport {
  double loss = 0.0;
  Eigen::MatrixXd grad;  // same shape as the batch
  std::size_t skipped_anchors = 0;
  std::size_t active_pairs = 0;
  /// Argument of the outer penalty per anchor (NaN for skipped anchors).
  std::vector<double> per_anchor;

  double grad_norm() const { return grad.norm(); }
};

void to_json(nlohmann::json& j, const LossReport& r);

/// gamma1 < 0 averages the farthest positives, gamma2 > 0 the nearest
/// negatives; lambda1 and lambda2 are fixed radius anchors mixed into the
/// two log-exp means.
struct DanmlConfig {
  double gamma1 = -2.0;
  double gamma2 = 30.0;
  double lambda1 = 0.5;
  double lambda2 = 0.52;
  LossFunction loss{LossKind::logistic, 0.0};
  Distance similarity = Distance::sq_euclidean;

  /// Builds a config from the positive magnitudes used in the published
  /// tuning grids (gamma1 in {1, 2, 3}, gamma2 in {25, 30, 35}) by mapping
  /// them onto the loss's sign convention: gamma1 = -|g1|, gamma2 = +|g2|.
  static DanmlConfig from_tuning_grid(double gamma1_magnitude, double gamma2_magnitude, double lambda1,
                                      double lambda2, LossFunction loss = {LossKind::logistic, 0.0},
                                      Distance similarity = Distance::sq_euclidean);
  /// Human-readable record of the sign mapping applied by from_tuning_grid.
  std::string sign_mapping;

  /// Throws InvalidInput unless gamma1 * gamma2 < 0 and values are finite.
  void validate() const;
};

struct MiningConfig {
  bool enabled = false;
  double epsilon = 0.1;
};

enum class LiftedMode { improved, original };

/// Per anchor i: loss(b({lambda1} + d(i, P_i), gamma1) - b({lambda2} + d(i, N_i), gamma2)),
/// b the log-exp mean. Anchors without an in-batch positive or negative are
/// skipped. neg_cosine needs a normalized batch.
LossReport danml_loss(const EmbeddingBatch& batch, const DanmlConfig& cfg);
/// Same, restricted to the given per-anchor positives and negatives.
LossReport danml_loss(const EmbeddingBatch& batch, const DanmlConfig& cfg, const PairSets& pairs);

/// sum_i (1/alpha) log(1 + sum_P exp(alpha (D_ij - m))) + (1/beta) log(1 + sum_N exp(beta (m - D_ik))).
/// D is the cosine by default; `neg_cosine` evaluates the same expression on
/// negative cosines.
LossReport ms_loss(const EmbeddingBatch& batch, double alpha, double beta, double margin,
                   PairQuantity quantity = PairQuantity::cosine);
LossReport ms_loss(const EmbeddingBatch& batch, double alpha, double beta, double margin,
                   PairQuantity quantity, const PairSets& pairs);

/// sum_i [ (1/g1) log(exp(-g1 l1) + sum_P exp(-g1 S)) + (1/g2) log(exp(g2 l2) + sum_N exp(g2 S)) + m ]_+
/// with S the cosine similarity. `original` drops the lambda terms and uses
/// g1 = g2 = 1.
LossReport lifted_improved_loss(const EmbeddingBatch& batch, double gamma1, double gamma2, double lambda1,
                                double lambda2, double margin, LiftedMode mode = LiftedMode::improved);

/// The batch must hold exactly two rows per class: the first is the anchor
/// f_i, the second its positive f_i+.
/// (1/(N gamma)) sum_i log(1 + sum_{j != i} exp(gamma (-lambda + f_i.f_j+ - f_i.f_i+))).
LossReport npairs_improved_loss(const EmbeddingBatch& batch, double gamma, double lambda);

/// Mean of [d(i,j) - d(i,l) + margin]_+ over active in-batch triplets, with
/// squared Euclidean d. Zero when no triplet is active.
LossReport triplet_loss(const EmbeddingBatch& batch, double margin);

/// Keeps negatives with D_ik > min_P D_ij - eps and positives with
/// D_ij < max_N D_ik + eps (D the cosine). Anchors without positives get
/// empty sets; eps = +inf keeps everything. Disabled mining keeps all pairs.
PairSets mine_pairs(const EmbeddingBatch& batch, const MiningConfig& cfg);

/// All in-batch positives and negatives of every anchor.
PairSets label_pairs(std::span<const int> labels);

namespace kernels {

// Unchecked evaluations on a raw matrix. The public functions above validate
// the batch and forward here; derivative probes call these directly because
// a perturbed batch is no longer exactly unit-norm.
LossReport danml(const Eigen::MatrixXd& f, const PairSets& pairs, const DanmlConfig& cfg);
LossReport ms(const Eigen::MatrixXd& f, const PairSets& pairs, double alpha, double beta, double margin,
              PairQuantity quantity);
LossReport lifted(const Eigen::MatrixXd& f, const PairSets& pairs, double gamma1, double gamma2,
                  double lambda1, double lambda2, double margin, LiftedMode mode);
LossReport npairs(const Eigen::MatrixXd& f, std::span<const int> labels, double gamma, double lambda);
LossReport triplet(const Eigen::MatrixXd& f, const PairSets& pairs, double margin);

}  // namespace kernels

}  // namespace anml
