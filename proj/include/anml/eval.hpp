#pragma once

// Evaluation: k-NN classification under a learned metric, Recall@K, the
// repeated-split experiment driver, and a full-batch training loop for the
// embedding losses on synthetic data.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anml/dataset.hpp"
#include "anml/embedding.hpp"
#include "anml/mahalanobis.hpp"

namespace anml {

inline constexpr int kMaxNeighbors = 40;

struct TrialResult {
  std::map<int, double> accuracy_by_k;
  int best_k = 0;  // smallest k reaching best_accuracy
  double best_accuracy = 0.0;
};

/// 1..min(40, train_size).
std::vector<int> default_k_values(std::size_t train_size);

/// Majority vote among the k nearest training points under d_M; vote ties go
/// to the smaller summed distance, then to the smaller class index. Neighbors
/// at equal distance are taken in training-set order.
TrialResult knn_classify(const LabeledDataset& train, const LabeledDataset& test, const MetricMatrix& metric,
                         std::span<const int> k_values);

struct RecallResult {
  std::map<int, double> recall_at;
};

/// Success for a query when one of its K most cosine-similar other rows
/// shares its label. Every K must satisfy 1 <= K < n.
RecallResult recall_at_k(const EmbeddingBatch& batch, std::span<const int> k_values);

enum class Learner { identity, lanml_minus, lanml_plus, pnca };
Learner parse_learner(const std::string& text);
std::string to_string(Learner learner);

/// Coordinate search over parameter grids, scored by k-fold cross-validated
/// k-NN accuracy (best k of the fold-averaged curve) on the first trial's
/// training portion. The chosen values are then used for every trial.
struct TuningGrid {
  std::vector<double> reg_weights;
  std::vector<double> gamma1s;
  std::vector<double> gamma2s;
  std::vector<double> alphas;
  std::size_t folds = 5;
  std::size_t sweeps = 2;
  int max_iters = 150;  // solver budget per candidate
};

/// The published grids for the given learner: reg weight {0.1, 0.3, ..., 1.5},
/// gamma magnitudes 2^-5 .. 2^5 in half-power steps (gamma1 negative for
/// lanml-minus), PNCA alpha 2^-8 .. 2^10.
TuningGrid paper_uci_grid(Learner learner);

struct ExperimentConfig {
  Learner learner = Learner::lanml_minus;
  LanmlConfig lanml;
  double pnca_alpha = 1.0;
  SplitPlan plan;
  std::vector<int> k_values;  // empty: 1..40 capped by the training size
  bool standardize = true;
  std::size_t pca_dim = 150;  // reduce when the input has more features; 0 disables
  /// Fit standardization and PCA on the whole dataset before splitting
  /// instead of on each training portion.
  bool paper_protocol = false;
  std::optional<TuningGrid> tuning;
  /// Evaluate this metric instead of learning one (dimension must match the
  /// preprocessed data).
  std::optional<MetricMatrix> fixed_metric;
};

struct ChosenParams {
  double gamma1 = 0.0;
  double gamma2 = 0.0;
  double reg_weight = 0.0;
  double alpha = 0.0;
  double cv_accuracy = -1.0;  // negative when no tuning ran
};

struct TrialRow {
  std::size_t trial = 0;
  TrialResult result;
  double final_loss = 0.0;
  bool converged = true;
  std::size_t iterations = 0;
};

struct ExperimentResult {
  std::vector<TrialRow> trials;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation over trials, 0 for one trial
  std::map<int, std::size_t> best_k_histogram;
  ChosenParams params;
  std::size_t input_dim = 0;
  std::size_t working_dim = 0;
  /// Metric from the last trial.
  MetricMatrix last_metric;
  std::vector<IterationRecord> last_trace;
};

/// For each split: preprocess, learn a metric on the training part, score
/// k-NN on the test part. Errors carry the failing trial index.
ExperimentResult run_experiment(const LabeledDataset& data, const ExperimentConfig& cfg);

/// {mean, std, best_k_histogram, ...}. Contains nothing run-dependent beyond
/// the inputs, so equal seeds give byte-identical output.
nlohmann::json summary_json(const ExperimentResult& result, const ExperimentConfig& cfg, const std::string& dataset);
/// Long format: trial,k,accuracy.
std::string accuracy_csv(const ExperimentResult& result);
/// trial,best_k,best_accuracy,final_loss,converged,iterations.
std::string trials_csv(const ExperimentResult& result);

struct SyntheticSpec {
  std::size_t classes = 2;
  std::size_t per_class = 10;
  std::size_t dim = 8;
  std::uint64_t seed = 0;
};

/// Class-balanced batch of Gaussian directions projected onto the unit
/// sphere; rows are grouped by class.
EmbeddingBatch synthetic_batch(const SyntheticSpec& spec);

enum class EmbeddingLossKind { danml, triplet, ms, lifted };
EmbeddingLossKind parse_embedding_loss(const std::string& text);
std::string to_string(EmbeddingLossKind kind);

struct ToyTrainConfig {
  EmbeddingLossKind loss = EmbeddingLossKind::danml;
  DanmlConfig danml;
  double triplet_margin = 0.2;
  double ms_alpha = 2.0;
  double ms_beta = 50.0;
  double ms_margin = 0.5;
  double lifted_margin = 1.0;
  MiningConfig mining;
  std::size_t steps = 500;
  double step_size = 0.05;
  bool renormalize = true;
};

struct ToyTrainResult {
  EmbeddingBatch batch;
  std::vector<double> loss_trace;  // steps + 1 values, the last one after the final update
  double recall1_before = 0.0;
  double recall1_after = 0.0;
};

/// Full-batch gradient descent on the embedding rows themselves. Throws
/// NumericError naming the step when the loss stops being finite.
ToyTrainResult toy_embedding_train(const EmbeddingBatch& init, const ToyTrainConfig& cfg);

/// Loss of `batch` under the configured embedding loss.
LossReport embedding_loss(const EmbeddingBatch& batch, const ToyTrainConfig& cfg);

}  // namespace anml
