#include "anml/checks.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "anml/embedding.hpp"
#include "anml/errors.hpp"
#include "anml/mahalanobis.hpp"
#include "anml/random.hpp"

namespace anml {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;

constexpr double kStep = 1e-5;
constexpr double kGradTolerance = 1e-4;
constexpr double kKinkGap = 1e-3;
constexpr int kMaxDraws = 200;

double relative_error(const MatrixXd& analytic, const MatrixXd& numeric) {
  const double scale = std::max({analytic.norm(), numeric.norm(), 1e-6});
  return (analytic - numeric).norm() / scale;
}

void maybe_corrupt(MatrixXd& grad, bool corrupt) {
  if (corrupt) grad(0, 0) += 0.05 * (1.0 + std::abs(grad(0, 0)));
}

double metric_fd_error(const MetricObjective& f, const MetricMatrix& m, bool corrupt) {
  MatrixXd g = f(m).grad;
  maybe_corrupt(g, corrupt);
  const Index d = static_cast<Index>(m.dim());
  MatrixXd analytic = MatrixXd::Zero(d, d), numeric = MatrixXd::Zero(d, d);
  for (Index a = 0; a < d; ++a) {
    for (Index b = a; b < d; ++b) {
      MatrixXd e = MatrixXd::Zero(d, d);
      e(a, b) += 1.0;
      if (a != b) e(b, a) += 1.0;
      const double up = f(MetricMatrix(m.matrix() + kStep * e)).value;
      const double down = f(MetricMatrix(m.matrix() - kStep * e)).value;
      numeric(a, b) = (up - down) / (2.0 * kStep);
      analytic(a, b) = a == b ? g(a, a) : g(a, b) + g(b, a);
    }
  }
  return relative_error(analytic, numeric);
}

double embedding_fd_error(const std::function<LossReport(const MatrixXd&)>& f, const MatrixXd& x, bool corrupt) {
  MatrixXd g = f(x).grad;
  maybe_corrupt(g, corrupt);
  MatrixXd numeric(x.rows(), x.cols());
  MatrixXd probe = x;
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index c = 0; c < x.cols(); ++c) {
      probe(i, c) = x(i, c) + kStep;
      const double up = f(probe).loss;
      probe(i, c) = x(i, c) - kStep;
      const double down = f(probe).loss;
      probe(i, c) = x(i, c);
      numeric(i, c) = (up - down) / (2.0 * kStep);
    }
  }
  return relative_error(g, numeric);
}

LabeledDataset random_dataset(Rng& rng, std::size_t per_class, std::size_t classes, std::size_t dim) {
  const std::size_t n = per_class * classes;
  MatrixXd x(static_cast<Index>(n), static_cast<Index>(dim));
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(i % classes) + 1;
    for (std::size_t c = 0; c < dim; ++c) x(static_cast<Index>(i), static_cast<Index>(c)) = 0.7 * rng.normal();
  }
  return LabeledDataset(std::move(x), std::move(y));
}

MetricMatrix random_metric(Rng& rng, std::size_t dim) {
  const Index d = static_cast<Index>(dim);
  MatrixXd b(d, d);
  for (Index i = 0; i < d; ++i) {
    for (Index j = 0; j < d; ++j) b(i, j) = 0.5 * rng.normal();
  }
  return MetricMatrix(b * b.transpose() + 0.5 * MatrixXd::Identity(d, d));
}

MatrixXd random_sphere(Rng& rng, std::size_t n, std::size_t dim) {
  MatrixXd f(static_cast<Index>(n), static_cast<Index>(dim));
  for (Index i = 0; i < f.rows(); ++i) {
    for (Index c = 0; c < f.cols(); ++c) f(i, c) = rng.normal();
    f.row(i).normalize();
  }
  return f;
}

std::vector<int> cyclic_labels(std::size_t n, std::size_t classes) {
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % classes) + 1;
  return y;
}

double nearest_kink(const std::vector<double>& args, double kink) {
  double gap = std::numeric_limits<double>::infinity();
  for (double a : args) {
    if (!std::isnan(a)) gap = std::min(gap, std::abs(a - kink));
  }
  return gap;
}

double triplet_kink_gap(const MatrixXd& f, const PairSets& pairs, double margin) {
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    for (auto j : pairs.similars[i]) {
      for (auto l : pairs.dissimilars[i]) {
        const auto ii = static_cast<Index>(i);
        const double v = (f.row(ii) - f.row(static_cast<Index>(j))).squaredNorm() -
                         (f.row(ii) - f.row(static_cast<Index>(l))).squaredNorm() + margin;
        gap = std::min(gap, std::abs(v));
      }
    }
  }
  return gap;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

struct Runner {
  const CheckOptions& options;
  std::vector<CheckOutcome> outcomes;

  bool corrupt(const std::string& name) const { return options.corrupt == name; }

  // Draws instances until `instances` non-degenerate ones were scored; each
  // draw returns a negative value to ask for a redraw.
  void run(const std::string& name, double tolerance, const std::function<double(Rng&)>& draw) {
    CheckOutcome out;
    out.name = name;
    out.tolerance = tolerance;
    Rng rng(options.seed, fnv1a(name));
    int redraws = 0;
    while (out.instances < options.instances) {
      const double err = draw(rng);
      if (err < 0.0) {
        if (++redraws > kMaxDraws) {
          out.detail = "too many degenerate draws";
          break;
        }
        continue;
      }
      out.worst = std::max(out.worst, std::isnan(err) ? std::numeric_limits<double>::infinity() : err);
      ++out.instances;
    }
    out.passed = out.instances == options.instances && out.worst <= tolerance;
    if (out.detail.empty()) {
      std::ostringstream d;
      d << "worst " << out.worst << " vs tolerance " << tolerance << " over " << out.instances << " instances";
      out.detail = d.str();
    }
    outcomes.push_back(std::move(out));
  }
};

void check_lanml(Runner& r) {
  r.run("lanml_objective", kGradTolerance, [&](Rng& rng) {
    const LabeledDataset data = random_dataset(rng, 4, 3, 3);
    LanmlConfig cfg;
    cfg.gamma1 = rng.uniform() < 0.5 ? -rng.uniform(0.3, 3.0) : rng.uniform(0.3, 3.0);
    cfg.gamma2 = rng.uniform(0.3, 3.0);
    cfg.reg_weight = rng.uniform(0.0, 1.0);
    cfg.loss = rng.uniform() < 0.5 ? LossFunction{LossKind::hinge, 1.0} : LossFunction{LossKind::logistic, 0.0};
    cfg.similars_per_query = 2;
    const PairSets pairs = build_pair_sets(data, cfg.similars_per_query, PairMode::knn_similars);
    const MetricMatrix m = random_metric(rng, data.dim());
    const ObjectiveValue v = lanml_objective(m, data, pairs, cfg);
    if (cfg.loss.kind == LossKind::hinge && nearest_kink(v.per_query, -cfg.loss.margin) < kKinkGap) return -1.0;
    return metric_fd_error([&](const MetricMatrix& mm) { return lanml_objective(mm, data, pairs, cfg); }, m,
                           r.corrupt("lanml_objective"));
  });
}

void check_pnca(Runner& r) {
  r.run("pnca_objective", kGradTolerance, [&](Rng& rng) {
    const LabeledDataset data = random_dataset(rng, 4, 3, 3);
    const double alpha = rng.uniform(0.3, 3.0);
    const PairSets pairs = build_pair_sets(data, 1, PairMode::all_similars);
    const MetricMatrix m = random_metric(rng, data.dim());
    return metric_fd_error([&](const MetricMatrix& mm) { return pnca_objective(mm, data, pairs, alpha); }, m,
                           r.corrupt("pnca_objective"));
  });
}

void check_embedding_gradients(Runner& r) {
  r.run("danml_loss", kGradTolerance, [&](Rng& rng) {
    const MatrixXd f = random_sphere(rng, 10, 4);
    const PairSets pairs = label_pairs(cyclic_labels(10, 3));
    DanmlConfig cfg;
    cfg.gamma1 = -rng.uniform(0.5, 5.0);
    cfg.gamma2 = rng.uniform(0.5, 30.0);
    cfg.lambda1 = rng.uniform(0.0, 1.0);
    cfg.lambda2 = cfg.lambda1 + rng.uniform(0.0, 0.5);
    cfg.similarity = rng.uniform() < 0.5 ? Distance::sq_euclidean : Distance::neg_cosine;
    return embedding_fd_error([&](const MatrixXd& x) { return kernels::danml(x, pairs, cfg); }, f,
                              r.corrupt("danml_loss"));
  });
  r.run("ms_loss", kGradTolerance, [&](Rng& rng) {
    const MatrixXd f = random_sphere(rng, 10, 4);
    const PairSets pairs = label_pairs(cyclic_labels(10, 3));
    const double alpha = rng.uniform(1.0, 4.0), beta = rng.uniform(2.0, 50.0), margin = rng.uniform(0.0, 1.0);
    const auto q = rng.uniform() < 0.5 ? PairQuantity::cosine : PairQuantity::neg_cosine;
    return embedding_fd_error([&](const MatrixXd& x) { return kernels::ms(x, pairs, alpha, beta, margin, q); }, f,
                              r.corrupt("ms_loss"));
  });
  r.run("lifted_improved_loss", kGradTolerance, [&](Rng& rng) {
    const MatrixXd f = random_sphere(rng, 10, 4);
    const PairSets pairs = label_pairs(cyclic_labels(10, 3));
    const double g1 = rng.uniform(0.5, 5.0), g2 = rng.uniform(0.5, 5.0);
    const double l1 = rng.uniform(0.0, 1.0), l2 = rng.uniform(-1.0, 0.0), margin = rng.uniform(0.0, 1.0);
    const auto mode = rng.uniform() < 0.5 ? LiftedMode::improved : LiftedMode::original;
    const auto eval = [&](const MatrixXd& x) { return kernels::lifted(x, pairs, g1, g2, l1, l2, margin, mode); };
    if (nearest_kink(eval(f).per_anchor, 0.0) < kKinkGap) return -1.0;
    return embedding_fd_error(eval, f, r.corrupt("lifted_improved_loss"));
  });
  r.run("npairs_improved_loss", kGradTolerance, [&](Rng& rng) {
    const MatrixXd f = random_sphere(rng, 8, 4);
    std::vector<int> labels{1, 2, 3, 4, 1, 2, 3, 4};
    const double gamma = rng.uniform(0.5, 5.0), lambda = rng.uniform(-0.5, 0.5);
    return embedding_fd_error([&](const MatrixXd& x) { return kernels::npairs(x, labels, gamma, lambda); }, f,
                              r.corrupt("npairs_improved_loss"));
  });
  r.run("triplet_loss", kGradTolerance, [&](Rng& rng) {
    const MatrixXd f = random_sphere(rng, 8, 4);
    const PairSets pairs = label_pairs(cyclic_labels(8, 2));
    const double margin = rng.uniform(0.1, 1.0);
    if (triplet_kink_gap(f, pairs, margin) < kKinkGap) return -1.0;
    return embedding_fd_error([&](const MatrixXd& x) { return kernels::triplet(x, pairs, margin); }, f,
                              r.corrupt("triplet_loss"));
  });
}

// LANML at |gamma| = 1e3 against the hardest-pair constraint: farthest similar
// minus nearest dissimilar squared distance.
void check_prop3(Runner& r) {
  r.run("prop3", 1e-2, [&](Rng& rng) {
    const LabeledDataset data = random_dataset(rng, 5, 3, 3);
    LanmlConfig cfg;
    cfg.gamma1 = -1e3;
    cfg.gamma2 = 1e3;
    cfg.loss = {LossKind::identity, 0.0};
    cfg.similars_per_query = 3;
    const PairSets pairs = build_pair_sets(data, cfg.similars_per_query, PairMode::knn_similars);
    const MetricMatrix m = random_metric(rng, data.dim());
    const ObjectiveValue v = lanml_objective(m, data, pairs, cfg);
    double worst = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      double far = -std::numeric_limits<double>::infinity(), near = std::numeric_limits<double>::infinity();
      for (auto j : pairs.similars[i]) far = std::max(far, mahalanobis_sq(m, data.row(i), data.row(j)));
      for (auto l : pairs.dissimilars[i]) near = std::min(near, mahalanobis_sq(m, data.row(i), data.row(l)));
      worst = std::max(worst, std::abs(v.per_query[i] - (far - near)));
    }
    return worst;
  });
}

// PNCA at alpha = 1 against the NCA probability written out directly.
void check_prop4(Runner& r) {
  r.run("prop4", 1e-10, [&](Rng& rng) {
    const LabeledDataset data = random_dataset(rng, 4, 3, 3);
    const PairSets pairs = build_pair_sets(data, 1, PairMode::all_similars);
    const MetricMatrix m = random_metric(rng, data.dim());
    const ObjectiveValue v = pnca_objective(m, data, pairs, 1.0);
    double worst = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      double same = 0.0, all = 0.0;
      for (std::size_t j = 0; j < data.size(); ++j) {
        if (j == i) continue;
        const double w = std::exp(-mahalanobis_sq(m, data.row(i), data.row(j)));
        all += w;
        if (data.labels()[j] == data.labels()[i]) same += w;
      }
      worst = std::max(worst, std::abs(v.per_query[i] - same / all));
    }
    return worst;
  });
}

// DANML and lifted at |gamma| = 1e3 against hardest positive / negative.
void check_prop6(Runner& r) {
  r.run("prop6", 1e-2, [&](Rng& rng) {
    const MatrixXd f = random_sphere(rng, 10, 4);
    const PairSets pairs = label_pairs(cyclic_labels(10, 3));
    DanmlConfig cfg;
    cfg.gamma1 = -1e3;
    cfg.gamma2 = 1e3;
    cfg.lambda1 = 0.0;  // below every squared distance on the sphere
    cfg.lambda2 = 4.0;  // above every squared distance on the sphere
    cfg.loss = {LossKind::identity, 0.0};
    const LossReport d = kernels::danml(f, pairs, cfg);
    const double margin = 0.3;
    const LossReport l = kernels::lifted(f, pairs, 1e3, 1e3, 1.0, -1.0, margin, LiftedMode::improved);
    double worst = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto ii = static_cast<Index>(i);
      double far = -1.0, near = 5.0, least_pos = 2.0, most_neg = -2.0;
      for (auto j : pairs.similars[i]) {
        far = std::max(far, (f.row(ii) - f.row(static_cast<Index>(j))).squaredNorm());
        least_pos = std::min(least_pos, f.row(ii).dot(f.row(static_cast<Index>(j))));
      }
      for (auto k : pairs.dissimilars[i]) {
        near = std::min(near, (f.row(ii) - f.row(static_cast<Index>(k))).squaredNorm());
        most_neg = std::max(most_neg, f.row(ii).dot(f.row(static_cast<Index>(k))));
      }
      worst = std::max(worst, std::abs(d.per_anchor[i] - (far - near)));
      worst = std::max(worst, std::abs(l.per_anchor[i] - (most_neg - least_pos + margin)));
    }
    return worst;
  });
}

// Multi-similarity as a DANML special case: equal gradients, and a value gap
// that depends only on the per-anchor positive / negative counts.
void check_prop7(Runner& r) {
  r.run("prop7", 1e-10, [&](Rng& rng) {
    const std::vector<int> labels = cyclic_labels(9, 3);
    const PairSets pairs = label_pairs(labels);
    const double alpha = rng.uniform(1.0, 4.0), beta = rng.uniform(2.0, 20.0), m = rng.uniform(0.0, 1.0);
    DanmlConfig cfg;
    cfg.gamma1 = -alpha;
    cfg.gamma2 = beta;
    cfg.lambda1 = cfg.lambda2 = m;
    cfg.loss = {LossKind::identity, 0.0};
    cfg.similarity = Distance::neg_cosine;
    double worst = 0.0;
    double gaps[2];
    for (int b = 0; b < 2; ++b) {
      const MatrixXd f = random_sphere(rng, labels.size(), 4);
      const LossReport d = kernels::danml(f, pairs, cfg);
      const LossReport s = kernels::ms(f, pairs, alpha, beta, m, PairQuantity::neg_cosine);
      MatrixXd gd = d.grad;
      maybe_corrupt(gd, r.corrupt("prop7"));
      const double scale = std::max(1.0, s.grad.cwiseAbs().maxCoeff());
      worst = std::max(worst, (gd - s.grad).cwiseAbs().maxCoeff() / scale);
      gaps[b] = s.loss - d.loss;
    }
    double expected = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      expected += std::log(static_cast<double>(pairs.similars[i].size()) + 1.0) / alpha +
                  std::log(static_cast<double>(pairs.dissimilars[i].size()) + 1.0) / beta;
    }
    const double scale = std::max(1.0, std::abs(expected));
    worst = std::max(worst, std::abs(gaps[0] - gaps[1]) / scale);
    worst = std::max(worst, std::abs(gaps[0] - expected) / scale);
    return worst;
  });
}

}  // namespace

const std::vector<std::string>& check_names() {
  static const std::vector<std::string> names{"lanml_objective", "pnca_objective", "danml_loss",
                                              "ms_loss",         "lifted_improved_loss",
                                              "npairs_improved_loss", "triplet_loss",
                                              "prop3",           "prop4",           "prop6",
                                              "prop7"};
  return names;
}

std::vector<CheckOutcome> run_loss_checks(const CheckOptions& options) {
  const auto& names = check_names();
  const auto known = [&](const std::string& n) { return std::find(names.begin(), names.end(), n) != names.end(); };
  for (const auto& n : options.only) {
    if (!known(n)) throw InvalidInput("losscheck: unknown check '" + n + "'");
  }
  if (!options.corrupt.empty() && !known(options.corrupt)) {
    throw InvalidInput("losscheck: unknown check '" + options.corrupt + "' to corrupt");
  }
  if (options.instances == 0) throw InvalidInput("losscheck: instances must be positive");

  CheckOptions selected = options;
  if (selected.only.empty()) selected.only = names;
  Runner runner{selected, {}};
  const auto wanted = [&](std::initializer_list<const char*> group) {
    return std::any_of(group.begin(), group.end(), [&](const char* g) {
      return std::find(selected.only.begin(), selected.only.end(), g) != selected.only.end();
    });
  };
  if (wanted({"lanml_objective"})) check_lanml(runner);
  if (wanted({"pnca_objective"})) check_pnca(runner);
  if (wanted({"danml_loss", "ms_loss", "lifted_improved_loss", "npairs_improved_loss", "triplet_loss"})) {
    check_embedding_gradients(runner);
  }
  if (wanted({"prop3"})) check_prop3(runner);
  if (wanted({"prop4"})) check_prop4(runner);
  if (wanted({"prop6"})) check_prop6(runner);
  if (wanted({"prop7"})) check_prop7(runner);

  std::vector<CheckOutcome> out;
  for (auto& o : runner.outcomes) {
    if (std::find(selected.only.begin(), selected.only.end(), o.name) != selected.only.end()) out.push_back(std::move(o));
  }
  return out;
}

void to_json(nlohmann::json& j, const CheckOutcome& c) {
  j = {{"name", c.name},
       {"passed", c.passed},
       {"worst", c.worst},
       {"tolerance", c.tolerance},
       {"instances", c.instances},
       {"detail", c.detail}};
}

}  // namespace anml
