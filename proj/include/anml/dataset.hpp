#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace anml {

/// N x d feature matrix with class labels in 1..C. Construction validates
/// shape, finiteness and label range.
class LabeledDataset {
 public:
  LabeledDataset() = default;
  /// `label_names[c - 1]` names class c. When empty, names "1".."C" are
  /// generated from the largest label.
  LabeledDataset(Eigen::MatrixXd features, std::vector<int> labels,
                 std::vector<std::string> label_names = {}, std::string name = {});

  const Eigen::MatrixXd& features() const noexcept { return features_; }
  const std::vector<int>& labels() const noexcept { return labels_; }
  const std::vector<std::string>& label_names() const noexcept { return label_names_; }
  const std::string& name() const noexcept { return name_; }

  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(features_.cols()); }
  std::size_t num_classes() const noexcept { return label_names_.size(); }
  Eigen::VectorXd row(std::size_t i) const { return features_.row(static_cast<Eigen::Index>(i)).transpose(); }

  /// Number of samples carrying each label; index c - 1 for class c.
  std::vector<std::size_t> class_counts() const;

  LabeledDataset subset(std::span<const std::size_t> indices) const;
  LabeledDataset with_features(Eigen::MatrixXd features) const;

 private:
  Eigen::MatrixXd features_;
  std::vector<int> labels_;
  std::vector<std::string> label_names_;
  std::string name_;
};

enum class FileFormat { libsvm, csv_last_label, csv_first_label };

FileFormat parse_file_format(const std::string& text);
std::string to_string(FileFormat format);

struct LoadOptions {
  FileFormat format = FileFormat::csv_last_label;
  char delimiter = ',';
  bool has_header = false;
  /// LIBSVM only: feature dimension. Inferred from the largest index when unset.
  std::optional<std::size_t> dim;
};

/// Raw label strings are remapped to 1..C: numerically ascending when every
/// label parses as a number, lexicographically otherwise. The mapping is kept
/// in `label_names()`.
LabeledDataset load_dataset(const std::filesystem::path& path, const LoadOptions& options);
LabeledDataset parse_dataset(const std::string& text, const LoadOptions& options,
                             const std::string& name = {});

/// Per-feature affine map x -> (x - mean) / scale. Columns whose population
/// standard deviation is below 1e-12 are centred only (scale 1, flagged).
struct StandardizeTransform {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;
  std::vector<bool> degenerate;
  std::string std_convention = "population";

  Eigen::MatrixXd apply(const Eigen::MatrixXd& features) const;
  Eigen::MatrixXd invert(const Eigen::MatrixXd& features) const;
  LabeledDataset apply(const LabeledDataset& data) const;
};

StandardizeTransform fit_standardize(const Eigen::MatrixXd& features);
std::pair<LabeledDataset, StandardizeTransform> standardize(const LabeledDataset& data);

/// Projection onto the leading principal components. Components are unit
/// columns sorted by decreasing variance, each signed so that its largest
/// magnitude entry is positive.
struct PcaProjection {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;           // d x k
  Eigen::VectorXd explained_variance;   // k leading covariance eigenvalues
  Eigen::VectorXd explained_fraction;   // relative to the total variance

  Eigen::MatrixXd apply(const Eigen::MatrixXd& features) const;
  LabeledDataset apply(const LabeledDataset& data) const;
};

PcaProjection fit_pca(const Eigen::MatrixXd& features, std::size_t target_dim);
std::pair<LabeledDataset, PcaProjection> pca_reduce(const LabeledDataset& data, std::size_t target_dim);

struct SplitPlan {
  double train_fraction = 0.7;
  std::size_t trials = 30;
  std::uint64_t seed = 0;
  bool stratified = false;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded random partitions; trial t depends only on (seed, t). Unstratified
/// splits put ceil(train_fraction * n) indices in the training part.
std::vector<Split> make_splits(std::size_t n, const SplitPlan& plan);
/// Stratified variant: ceil(train_fraction * n_c) per class, at least one
/// sample of each class left for testing when the class has two or more.
std::vector<Split> make_stratified_splits(std::span<const int> labels, const SplitPlan& plan);

void to_json(nlohmann::json& j, const StandardizeTransform& t);
void from_json(const nlohmann::json& j, StandardizeTransform& t);
void to_json(nlohmann::json& j, const PcaProjection& p);
void from_json(const nlohmann::json& j, PcaProjection& p);

}  // namespace anml
