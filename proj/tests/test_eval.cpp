#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "anml/errors.hpp"
#include "anml/eval.hpp"
#include "support.hpp"

using anml::MetricMatrix;
using Eigen::MatrixXd;

namespace {

anml::LabeledDataset iris() {
  return anml::load_dataset(std::filesystem::path(ANML_TEST_DATA_DIR) / "iris.csv", {});
}

anml::LabeledDataset line(std::vector<double> xs, std::vector<int> ys) {
  MatrixXd x(static_cast<Eigen::Index>(xs.size()), 1);
  for (std::size_t i = 0; i < xs.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = xs[i];
  return anml::LabeledDataset(x, std::move(ys));
}

/// Plain 1-NN with Euclidean distance on features standardized by the
/// training portion's mean and population standard deviation.
double one_nn_accuracy(const anml::LabeledDataset& train, const anml::LabeledDataset& test) {
  const Eigen::RowVectorXd mu = train.features().colwise().mean();
  const MatrixXd c = train.features().rowwise() - mu;
  Eigen::RowVectorXd sd = (c.colwise().squaredNorm() / static_cast<double>(train.size())).cwiseSqrt();
  const MatrixXd a = c.array().rowwise() / sd.array();
  const MatrixXd b = (test.features().rowwise() - mu).array().rowwise() / sd.array();
  std::size_t hit = 0;
  for (Eigen::Index t = 0; t < b.rows(); ++t) {
    Eigen::Index best = 0;
    (a.rowwise() - b.row(t)).rowwise().squaredNorm().minCoeff(&best);
    if (train.labels()[static_cast<std::size_t>(best)] == test.labels()[static_cast<std::size_t>(t)]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(b.rows());
}

}  // namespace

TEST_CASE("knn examples") {
  const auto train = line({0, 1, 5, 6}, {1, 1, 2, 2});
  const std::vector<int> k1{1};
  CHECK(anml::knn_classify(train, line({5}, {2}), MetricMatrix::identity(1), k1).best_accuracy == 1.0);
  CHECK(anml::knn_classify(train, line({0.4, 0.9, 5.2, 6.5}, {1, 1, 2, 2}), MetricMatrix::identity(1), k1)
            .best_accuracy == 1.0);

  // M = 0: every distance vanishes and the vote goes to the biggest class,
  // then to the smaller class index.
  const MetricMatrix zero(MatrixXd::Zero(1, 1));
  const auto skewed = line({0, 1, 2, 3, 4}, {2, 2, 2, 1, 1});
  const std::vector<int> all{5};
  CHECK(anml::knn_classify(skewed, line({9, 9}, {2, 1}), zero, all).accuracy_by_k.at(5) == 0.5);
  const auto even = line({0, 1, 2, 3}, {2, 2, 1, 1});
  const std::vector<int> four{4};
  CHECK(anml::knn_classify(even, line({9}, {1}), zero, four).best_accuracy == 1.0);
}

TEST_CASE("knn tie-breaks and validation") {
  // Two votes each; class 2 is closer in total.
  const auto train = line({-3, 3, 1, 1.5}, {1, 1, 2, 2});
  const std::vector<int> k4{4};
  CHECK(anml::knn_classify(train, line({0}, {2}), MetricMatrix::identity(1), k4).best_accuracy == 1.0);

  const std::vector<int> bad{0};
  CHECK_THROWS_AS(anml::knn_classify(train, line({0}, {1}), MetricMatrix::identity(1), bad), anml::InvalidInput);
  const std::vector<int> big{5};
  CHECK_THROWS_AS(anml::knn_classify(train, line({0}, {1}), MetricMatrix::identity(1), big), anml::InvalidInput);
  const std::vector<int> k1{1};
  CHECK_THROWS_AS(anml::knn_classify(train, line({0}, {1}), MetricMatrix::identity(2), k1), anml::InvalidInput);

  CHECK(anml::default_k_values(10).size() == 10);
  CHECK(anml::default_k_values(100).size() == 40);
}

TEST_CASE("best k is the smallest at the maximum") {
  const auto train = line({0, 1, 5, 6}, {1, 1, 2, 2});
  const std::vector<int> ks{1, 2, 3};
  const auto r = anml::knn_classify(train, line({0.2, 5.5}, {1, 2}), MetricMatrix::identity(1), ks);
  CHECK(r.best_k == 1);
  double best = 0.0;
  for (const auto& [k, acc] : r.accuracy_by_k) best = std::max(best, acc);
  CHECK(r.best_accuracy == best);
}

TEST_CASE("recall at k") {
  const MatrixXd tight = (MatrixXd(4, 2) << 1, 0, 0.999, 0.0447, 0, 1, 0.0447, 0.999).finished();
  const auto clustered = anml::EmbeddingBatch::normalized_from(tight, {1, 1, 2, 2});
  const std::vector<int> k1{1};
  CHECK(anml::recall_at_k(clustered, k1).recall_at.at(1) == 1.0);

  anml::Rng rng(1, 0);
  const anml::EmbeddingBatch distinct(testutil::random_sphere(rng, 6, 3), {1, 2, 3, 4, 5, 6}, true);
  const std::vector<int> ks{1, 2, 3, 4, 5};
  for (const auto& [k, r] : anml::recall_at_k(distinct, ks).recall_at) CHECK(r == 0.0);
  const std::vector<int> too_big{6};
  CHECK_THROWS_AS(anml::recall_at_k(distinct, too_big), anml::InvalidInput);

  for (int t = 0; t < 10; ++t) {
    const anml::EmbeddingBatch b(testutil::random_sphere(rng, 20, 4), testutil::cyclic_labels(20, 4), true);
    const std::vector<int> all{1, 2, 4, 8, 16};
    double prev = -1.0;
    for (const auto& [k, r] : anml::recall_at_k(b, all).recall_at) {
      CHECK(r >= prev);
      prev = r;
    }
  }
}

TEST_CASE("identity baseline on iris matches a plain 1-NN") {
  const auto data = iris();
  anml::ExperimentConfig cfg;
  cfg.learner = anml::Learner::identity;
  cfg.plan.trials = 5;
  cfg.plan.seed = 3;
  const auto r = anml::run_experiment(data, cfg);
  CHECK(r.mean > 0.90);
  const auto splits = anml::make_splits(data.size(), cfg.plan);
  for (std::size_t t = 0; t < splits.size(); ++t) {
    const double plain = one_nn_accuracy(data.subset(splits[t].train), data.subset(splits[t].test));
    CHECK(r.trials[t].result.accuracy_by_k.at(1) == doctest::Approx(plain));
  }
}

TEST_CASE("experiment bookkeeping") {
  const auto data = iris();
  anml::ExperimentConfig cfg;
  cfg.plan.trials = 1;
  cfg.lanml.solver.max_iters = 20;
  const auto one = anml::run_experiment(data, cfg);
  CHECK(one.std == 0.0);
  CHECK(one.trials.size() == 1);
  CHECK(one.working_dim == 4);

  cfg.plan.trials = 3;
  cfg.plan.seed = 5;
  const auto a = anml::run_experiment(data, cfg);
  const auto b = anml::run_experiment(data, cfg);
  CHECK(anml::summary_json(a, cfg, "iris").dump() == anml::summary_json(b, cfg, "iris").dump());
  CHECK(anml::accuracy_csv(a) == anml::accuracy_csv(b));
  const auto j = anml::summary_json(a, cfg, "iris");
  for (const char* key : {"mean", "std", "best_k_histogram", "per_trial", "params"}) CHECK(j.contains(key));
  std::size_t total = 0;
  for (const auto& [k, c] : a.best_k_histogram) total += c;
  CHECK(total == 3);
  CHECK(anml::accuracy_csv(a).rfind("trial,k,accuracy\n", 0) == 0);

  cfg.lanml.gamma2 = -1.0;
  CHECK_THROWS_AS(anml::run_experiment(data, cfg), anml::InvalidInput);

  cfg.lanml.gamma2 = 1.0;
  cfg.fixed_metric = MetricMatrix::identity(3);
  try {
    anml::run_experiment(data, cfg);
    FAIL("expected an error");
  } catch (const anml::InvalidInput& e) {
    CHECK(std::string(e.what()).find("trial 0") != std::string::npos);
  }
}

TEST_CASE("pca kicks in above the target dimension") {
  anml::Rng rng(2, 0);
  const auto data = testutil::random_dataset(rng, 10, 2, 6);
  anml::ExperimentConfig cfg;
  cfg.learner = anml::Learner::identity;
  cfg.plan.trials = 2;
  cfg.pca_dim = 3;
  const auto r = anml::run_experiment(data, cfg);
  CHECK(r.input_dim == 6);
  CHECK(r.working_dim == 3);
}

TEST_CASE("synthetic batches") {
  const auto b = anml::synthetic_batch({3, 5, 4, 1});
  CHECK(b.size() == 15);
  CHECK(b.dim() == 4);
  CHECK(b.normalized());
  CHECK(b.labels()[0] == 1);
  CHECK(b.labels()[14] == 3);
  const auto again = anml::synthetic_batch({3, 5, 4, 1});
  CHECK(again.vectors() == b.vectors());
}

TEST_CASE("toy training") {
  const auto init = anml::synthetic_batch({2, 10, 8, 0});
  anml::ToyTrainConfig cfg;
  cfg.steps = 0;
  const auto none = anml::toy_embedding_train(init, cfg);
  CHECK(none.batch.vectors() == init.vectors());
  CHECK(none.loss_trace.size() == 1);

  cfg.steps = 500;
  for (auto kind : {anml::EmbeddingLossKind::danml, anml::EmbeddingLossKind::triplet}) {
    cfg.loss = kind;
    const auto r = anml::toy_embedding_train(init, cfg);
    CAPTURE(anml::to_string(kind));
    CHECK(r.loss_trace.size() == 501);
    CHECK(r.loss_trace.back() < r.loss_trace.front());
    CHECK(r.recall1_after >= r.recall1_before);
    for (Eigen::Index i = 0; i < r.batch.vectors().rows(); ++i) CHECK(r.batch.vectors().row(i).norm() == doctest::Approx(1.0));
  }

  cfg.step_size = 1e300;
  cfg.steps = 5;
  cfg.loss = anml::EmbeddingLossKind::triplet;
  cfg.renormalize = false;
  CHECK_THROWS_AS(anml::toy_embedding_train(init, cfg), anml::NumericError);

  CHECK(anml::parse_embedding_loss("triplet") == anml::EmbeddingLossKind::triplet);
  CHECK_THROWS_AS(anml::parse_embedding_loss("contrastive"), anml::InvalidInput);
  CHECK(anml::parse_learner("lanml-minus") == anml::Learner::lanml_minus);
  CHECK_THROWS_AS(anml::parse_learner("lmnn"), anml::InvalidInput);
}

TEST_CASE("paper grids") {
  const auto g = anml::paper_uci_grid(anml::Learner::lanml_minus);
  CHECK(g.reg_weights.size() == 8);
  CHECK(g.reg_weights.front() == doctest::Approx(0.1));
  CHECK(g.reg_weights.back() == doctest::Approx(1.5));
  CHECK(g.gamma1s.size() == 21);
  for (double v : g.gamma1s) CHECK(v < 0.0);
  for (double v : g.gamma2s) CHECK(v > 0.0);
  CHECK(g.gamma2s.front() == doctest::Approx(std::exp2(-5.0)));
  CHECK(g.gamma2s.back() == doctest::Approx(32.0));
  CHECK(g.alphas.front() == doctest::Approx(std::exp2(-8.0)));
  CHECK(g.alphas.back() == doctest::Approx(1024.0));
}
