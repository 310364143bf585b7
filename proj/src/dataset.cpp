#include "anml/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "anml/errors.hpp"
#include "anml/random.hpp"

namespace anml {

LabeledDataset::LabeledDataset(Eigen::MatrixXd features, std::vector<int> labels,
                               std::vector<std::string> label_names, std::string name)
    : features_(std::move(features)),
      labels_(std::move(labels)),
      label_names_(std::move(label_names)),
      name_(std::move(name)) {
  if (static_cast<std::size_t>(features_.rows()) != labels_.size()) {
    throw InvalidInput("dataset: " + std::to_string(features_.rows()) + " feature rows but " +
                       std::to_string(labels_.size()) + " labels");
  }
  if (!features_.allFinite()) throw InvalidInput("dataset: non-finite feature value");
  if (label_names_.empty()) {
    int top = 0;
    for (int y : labels_) top = std::max(top, y);
    for (int c = 1; c <= top; ++c) label_names_.push_back(std::to_string(c));
  }
  const int classes = static_cast<int>(label_names_.size());
  for (int y : labels_) {
    if (y < 1 || y > classes) {
      throw InvalidInput("dataset: label " + std::to_string(y) + " outside 1.." +
                         std::to_string(classes));
    }
  }
}

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes(), 0);
  for (int y : labels_) ++counts[static_cast<std::size_t>(y - 1)];
  return counts;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(indices.size()), features_.cols());
  std::vector<int> y;
  y.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= size()) throw InvalidInput("dataset: subset index out of range");
    x.row(static_cast<Eigen::Index>(r)) = features_.row(static_cast<Eigen::Index>(indices[r]));
    y.push_back(labels_[indices[r]]);
  }
  return LabeledDataset(std::move(x), std::move(y), label_names_, name_);
}

LabeledDataset LabeledDataset::with_features(Eigen::MatrixXd features) const {
  return LabeledDataset(std::move(features), labels_, label_names_, name_);
}

FileFormat parse_file_format(const std::string& text) {
  if (text == "libsvm") return FileFormat::libsvm;
  if (text == "csv_last_label" || text == "csv") return FileFormat::csv_last_label;
  if (text == "csv_first_label") return FileFormat::csv_first_label;
  throw InvalidInput("unknown dataset format '" + text + "'");
}

std::string to_string(FileFormat format) {
  switch (format) {
    case FileFormat::libsvm: return "libsvm";
    case FileFormat::csv_last_label: return "csv_last_label";
    case FileFormat::csv_first_label: return "csv_first_label";
  }
  return "unknown";
}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

bool parse_double(std::string_view text, double& out) {
  text = trim(text);
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size() && std::isfinite(out);
}

std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(delim, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string_view> split_whitespace(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

// Remaps raw label strings to 1..C.
std::pair<std::vector<int>, std::vector<std::string>> remap_labels(
    const std::vector<std::string>& raw) {
  std::vector<std::string> names(raw.begin(), raw.end());
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());

  std::vector<double> numeric(names.size());
  const bool all_numeric = std::all_of(names.begin(), names.end(), [&, i = 0](const std::string& s) mutable {
    return parse_double(s, numeric[static_cast<std::size_t>(i++)]);
  });
  if (all_numeric) {
    std::vector<std::size_t> order(names.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return numeric[a] < numeric[b]; });
    std::vector<std::string> sorted;
    for (std::size_t i : order) sorted.push_back(names[i]);
    names = std::move(sorted);
  }

  std::map<std::string, int> index;
  for (std::size_t i = 0; i < names.size(); ++i) index[names[i]] = static_cast<int>(i) + 1;
  std::vector<int> labels;
  labels.reserve(raw.size());
  for (const auto& r : raw) labels.push_back(index.at(r));
  return {std::move(labels), std::move(names)};
}

}  // namespace

LabeledDataset parse_dataset(const std::string& text, const LoadOptions& options,
                             const std::string& name) {
  std::vector<std::vector<std::pair<std::size_t, double>>> sparse_rows;
  std::vector<std::vector<double>> dense_rows;
  std::vector<std::string> raw_labels;
  std::size_t max_index = 0;
  std::size_t max_index_line = 0;
  std::size_t width = 0;

  std::istringstream in(text);
  std::string line_buf;
  std::size_t line_no = 0;
  bool header_pending = options.has_header;
  while (std::getline(in, line_buf)) {
    ++line_no;
    const std::string_view line = trim(line_buf);
    if (line.empty() || line.front() == '#') continue;
    if (header_pending) {
      header_pending = false;
      continue;
    }

    if (options.format == FileFormat::libsvm) {
      const auto tokens = split_whitespace(line);
      if (tokens.front().find(':') != std::string_view::npos) {
        throw ParseError("missing label before '" + std::string(tokens.front()) + "'", line_no);
      }
      raw_labels.emplace_back(tokens.front());
      std::vector<std::pair<std::size_t, double>> row;
      for (std::size_t t = 1; t < tokens.size(); ++t) {
        const auto colon = tokens[t].find(':');
        if (colon == std::string_view::npos) {
          throw ParseError("expected index:value, got '" + std::string(tokens[t]) + "'", line_no);
        }
        std::size_t idx = 0;
        const auto key = tokens[t].substr(0, colon);
        const auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), idx);
        double value = 0.0;
        if (ec != std::errc() || ptr != key.data() + key.size() || idx == 0 ||
            !parse_double(tokens[t].substr(colon + 1), value)) {
          throw ParseError("malformed feature '" + std::string(tokens[t]) + "'", line_no);
        }
        if (idx > max_index) {
          max_index = idx;
          max_index_line = line_no;
        }
        row.emplace_back(idx, value);
      }
      sparse_rows.push_back(std::move(row));
    } else {
      const auto fields = split(line, options.delimiter);
      if (fields.size() < 2) throw ParseError("need at least one feature and a label", line_no);
      const bool first = options.format == FileFormat::csv_first_label;
      std::vector<double> row;
      for (std::size_t f = 0; f < fields.size(); ++f) {
        const bool is_label = first ? f == 0 : f + 1 == fields.size();
        if (is_label) {
          if (fields[f].empty()) throw ParseError("empty label", line_no);
          raw_labels.emplace_back(fields[f]);
          continue;
        }
        double v = 0.0;
        if (!parse_double(fields[f], v)) {
          throw ParseError("malformed value '" + std::string(fields[f]) + "'", line_no);
        }
        row.push_back(v);
      }
      if (width == 0) width = row.size();
      if (row.size() != width) {
        throw ParseError("expected " + std::to_string(width) + " features, got " +
                             std::to_string(row.size()),
                         line_no);
      }
      dense_rows.push_back(std::move(row));
    }
  }
  if (raw_labels.empty()) throw InvalidInput("dataset '" + name + "' is empty");

  Eigen::MatrixXd x;
  if (options.format == FileFormat::libsvm) {
    const std::size_t d = options.dim.value_or(max_index);
    if (max_index > d) {
      throw ParseError("index " + std::to_string(max_index) + " exceeds dim " + std::to_string(d),
                       max_index_line);
    }
    if (d == 0) throw InvalidInput("libsvm data has no features");
    x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(sparse_rows.size()), static_cast<Eigen::Index>(d));
    for (std::size_t r = 0; r < sparse_rows.size(); ++r) {
      for (const auto& [idx, v] : sparse_rows[r]) {
        x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(idx - 1)) = v;
      }
    }
  } else {
    x.resize(static_cast<Eigen::Index>(dense_rows.size()), static_cast<Eigen::Index>(width));
    for (std::size_t r = 0; r < dense_rows.size(); ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = dense_rows[r][c];
      }
    }
  }
  auto [labels, names] = remap_labels(raw_labels);
  return LabeledDataset(std::move(x), std::move(labels), std::move(names), name);
}

LabeledDataset load_dataset(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("dataset not found: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str(), options, path.stem().string());
}

Eigen::MatrixXd StandardizeTransform::apply(const Eigen::MatrixXd& features) const {
  if (features.cols() != mean.size()) throw InvalidInput("standardize: dimension mismatch");
  return (features.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
}

Eigen::MatrixXd StandardizeTransform::invert(const Eigen::MatrixXd& features) const {
  if (features.cols() != mean.size()) throw InvalidInput("standardize: dimension mismatch");
  Eigen::MatrixXd out = features.array().rowwise() * scale.transpose().array();
  return out.rowwise() + mean.transpose();
}

LabeledDataset StandardizeTransform::apply(const LabeledDataset& data) const {
  return data.with_features(apply(data.features()));
}

StandardizeTransform fit_standardize(const Eigen::MatrixXd& features) {
  if (features.rows() < 2) throw InvalidInput("standardize: need at least two samples");
  StandardizeTransform t;
  const double n = static_cast<double>(features.rows());
  t.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - t.mean.transpose();
  t.scale = (centered.colwise().squaredNorm() / n).cwiseSqrt().transpose();
  t.degenerate.assign(static_cast<std::size_t>(features.cols()), false);
  for (Eigen::Index c = 0; c < t.scale.size(); ++c) {
    if (t.scale(c) < 1e-12) {
      t.scale(c) = 1.0;
      t.degenerate[static_cast<std::size_t>(c)] = true;
    }
  }
  return t;
}

std::pair<LabeledDataset, StandardizeTransform> standardize(const LabeledDataset& data) {
  auto t = fit_standardize(data.features());
  return {t.apply(data), std::move(t)};
}

Eigen::MatrixXd PcaProjection::apply(const Eigen::MatrixXd& features) const {
  if (features.cols() != mean.size()) throw InvalidInput("pca: dimension mismatch");
  return (features.rowwise() - mean.transpose()) * components;
}

LabeledDataset PcaProjection::apply(const LabeledDataset& data) const {
  return data.with_features(apply(data.features()));
}

PcaProjection fit_pca(const Eigen::MatrixXd& features, std::size_t target_dim) {
  const auto n = static_cast<std::size_t>(features.rows());
  const auto d = static_cast<std::size_t>(features.cols());
  if (target_dim < 1 || target_dim > std::min(n, d)) {
    throw InvalidInput("pca: target_dim " + std::to_string(target_dim) + " must be in [1, " +
                       std::to_string(std::min(n, d)) + "]");
  }
  PcaProjection p;
  p.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - p.mean.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("pca: eigendecomposition failed");

  // Eigen returns ascending eigenvalues.
  const auto k = static_cast<Eigen::Index>(target_dim);
  const auto dd = static_cast<Eigen::Index>(d);
  p.components.resize(dd, k);
  p.explained_variance.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    Eigen::VectorXd v = eig.eigenvectors().col(dd - 1 - j);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    p.components.col(j) = v;
    p.explained_variance(j) = std::max(0.0, eig.eigenvalues()(dd - 1 - j));
  }
  const double total = std::max(0.0, cov.trace());
  p.explained_fraction = total > 0 ? Eigen::VectorXd(p.explained_variance / total)
                                   : Eigen::VectorXd::Zero(k);
  return p;
}

std::pair<LabeledDataset, PcaProjection> pca_reduce(const LabeledDataset& data,
                                                    std::size_t target_dim) {
  auto p = fit_pca(data.features(), target_dim);
  return {p.apply(data), std::move(p)};
}

namespace {

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.below(i)]);
  }
}

std::size_t train_count(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
}

void validate_plan(const SplitPlan& plan) {
  if (!(plan.train_fraction > 0.0 && plan.train_fraction < 1.0)) {
    throw InvalidInput("split: train_fraction must lie in (0, 1)");
  }
  if (plan.trials < 1) throw InvalidInput("split: trials must be positive");
}

}  // namespace

std::vector<Split> make_splits(std::size_t n, const SplitPlan& plan) {
  if (n < 2) throw InvalidInput("split: need at least two samples");
  validate_plan(plan);
  const std::size_t n_train = std::min(train_count(n, plan.train_fraction), n - 1);
  std::vector<Split> out;
  for (std::size_t t = 0; t < plan.trials; ++t) {
    Rng rng(plan.seed, t);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    shuffle(idx, rng);
    Split s;
    s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Split> make_stratified_splits(std::span<const int> labels, const SplitPlan& plan) {
  if (labels.size() < 2) throw InvalidInput("split: need at least two samples");
  validate_plan(plan);
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

  std::vector<Split> out;
  for (std::size_t t = 0; t < plan.trials; ++t) {
    Rng rng(plan.seed, t);
    Split s;
    for (auto& [label, members] : by_class) {
      std::vector<std::size_t> idx = members;
      shuffle(idx, rng);
      std::size_t k = train_count(idx.size(), plan.train_fraction);
      if (idx.size() >= 2) k = std::min(k, idx.size() - 1);
      s.train.insert(s.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
      s.test.insert(s.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end());
    }
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

nlohmann::json vec_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void to_json(nlohmann::json& j, const StandardizeTransform& t) {
  j = {{"kind", "standardize"},
       {"std_convention", t.std_convention},
       {"mean", vec_json(t.mean)},
       {"scale", vec_json(t.scale)},
       {"degenerate", t.degenerate}};
}

void from_json(const nlohmann::json& j, StandardizeTransform& t) {
  t.std_convention = j.value("std_convention", "population");
  t.mean = json_vec(j.at("mean"));
  t.scale = json_vec(j.at("scale"));
  t.degenerate = j.at("degenerate").get<std::vector<bool>>();
  if (t.mean.size() != t.scale.size()) throw InvalidInput("standardize record: size mismatch");
}

void to_json(nlohmann::json& j, const PcaProjection& p) {
  const auto d = p.components.rows(), k = p.components.cols();
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(d * k));
  for (Eigen::Index r = 0; r < d; ++r)
    for (Eigen::Index c = 0; c < k; ++c) values.push_back(p.components(r, c));
  j = {{"kind", "pca"},
       {"input_dim", d},
       {"target_dim", k},
       {"mean", vec_json(p.mean)},
       {"components_row_major", values},
       {"explained_variance", vec_json(p.explained_variance)},
       {"explained_fraction", vec_json(p.explained_fraction)}};
}

void from_json(const nlohmann::json& j, PcaProjection& p) {
  const auto d = j.at("input_dim").get<Eigen::Index>();
  const auto k = j.at("target_dim").get<Eigen::Index>();
  const auto values = j.at("components_row_major").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(values.size()) != d * k) {
    throw InvalidInput("pca record: component count mismatch");
  }
  p.components.resize(d, k);
  for (Eigen::Index r = 0; r < d; ++r)
    for (Eigen::Index c = 0; c < k; ++c) p.components(r, c) = values[static_cast<std::size_t>(r * k + c)];
  p.mean = json_vec(j.at("mean"));
  p.explained_variance = json_vec(j.at("explained_variance"));
  p.explained_fraction = json_vec(j.at("explained_fraction"));
}

}  // namespace anml
