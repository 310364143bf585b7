#include "anml/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "anml/errors.hpp"
#include "anml/random.hpp"

namespace anml {
namespace {

using Eigen::Index;

Index ix(std::size_t i) { return static_cast<Index>(i); }

// Squared distances between every test row and every training row.
Eigen::MatrixXd cross_distances(const Eigen::MatrixXd& test, const Eigen::MatrixXd& train) {
  const Eigen::VectorXd tn = test.rowwise().squaredNorm();
  const Eigen::VectorXd rn = train.rowwise().squaredNorm();
  Eigen::MatrixXd d = -2.0 * test * train.transpose();
  d.colwise() += tn;
  d.rowwise() += rn.transpose();
  return d.cwiseMax(0.0);
}

std::vector<double> half_power_grid(double sign) {
  std::vector<double> out;
  for (int h = -10; h <= 10; ++h) out.push_back(sign * std::exp2(0.5 * h));
  return out;
}

struct Prepared {
  LabeledDataset train;
  LabeledDataset test;
};

Prepared preprocess(const LabeledDataset& train, const LabeledDataset& test, const ExperimentConfig& cfg) {
  Prepared p{train, test};
  if (cfg.standardize) {
    const StandardizeTransform t = fit_standardize(p.train.features());
    p.train = t.apply(p.train);
    p.test = t.apply(p.test);
  }
  if (cfg.pca_dim > 0 && p.train.dim() > cfg.pca_dim) {
    const PcaProjection pca = fit_pca(p.train.features(), cfg.pca_dim);
    p.train = pca.apply(p.train);
    p.test = pca.apply(p.test);
  }
  return p;
}

SolveResult learn(const LabeledDataset& train, const ExperimentConfig& cfg, const ChosenParams& params,
                  int max_iters) {
  if (cfg.fixed_metric || cfg.learner == Learner::identity) {
    SolveResult r;
    if (cfg.fixed_metric && cfg.fixed_metric->dim() != train.dim()) {
      throw InvalidInput("metric dimension " + std::to_string(cfg.fixed_metric->dim()) + " does not match data dimension " +
                         std::to_string(train.dim()));
    }
    r.metric = cfg.fixed_metric ? *cfg.fixed_metric : MetricMatrix::identity(train.dim());
    r.converged = true;
    return r;
  }
  const MetricMatrix init = default_init(train);
  SolverControls controls = cfg.lanml.solver;
  controls.max_iters = max_iters;
  if (cfg.learner == Learner::pnca) return solve_pnca(train, params.alpha, init, controls);
  LanmlConfig lc = cfg.lanml;
  lc.gamma1 = params.gamma1;
  lc.gamma2 = params.gamma2;
  lc.reg_weight = params.reg_weight;
  lc.solver = controls;
  lc.pair_mode = cfg.learner == Learner::lanml_minus ? PairMode::knn_similars : PairMode::all_similars;
  return solve_lanml(train, lc, init);
}

std::vector<int> k_values_for(const ExperimentConfig& cfg, std::size_t train_size) {
  if (cfg.k_values.empty()) return default_k_values(train_size);
  std::vector<int> ks;
  for (int k : cfg.k_values) {
    if (k >= 1 && static_cast<std::size_t>(k) <= train_size) ks.push_back(k);
  }
  if (ks.empty()) throw InvalidInput("no k value fits the training size");
  return ks;
}

double cv_score(const LabeledDataset& data, const ExperimentConfig& cfg, const ChosenParams& params,
                const std::vector<Split>& folds, int max_iters) {
  std::map<int, double> sum;
  for (const auto& fold : folds) {
    const LabeledDataset train = data.subset(fold.train);
    const LabeledDataset held = data.subset(fold.test);
    const SolveResult s = learn(train, cfg, params, max_iters);
    const TrialResult r = knn_classify(train, held, s.metric, k_values_for(cfg, train.size()));
    for (const auto& [k, acc] : r.accuracy_by_k) sum[k] += acc;
  }
  double best = 0.0;
  for (const auto& [k, s] : sum) best = std::max(best, s / static_cast<double>(folds.size()));
  return best;
}

std::vector<Split> kfold(std::size_t n, std::size_t folds, std::uint64_t seed) {
  if (folds < 2 || folds > n) throw InvalidInput("tuning: fold count must be in [2, n]");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed, 0xF01D);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  std::vector<Split> out(folds);
  for (std::size_t f = 0; f < folds; ++f) {
    for (std::size_t i = 0; i < n; ++i) (i % folds == f ? out[f].test : out[f].train).push_back(perm[i]);
    std::sort(out[f].train.begin(), out[f].train.end());
    std::sort(out[f].test.begin(), out[f].test.end());
  }
  return out;
}

ChosenParams tune(const LabeledDataset& train, const ExperimentConfig& cfg, ChosenParams start) {
  const TuningGrid& grid = *cfg.tuning;
  const auto folds = kfold(train.size(), grid.folds, cfg.plan.seed);
  ChosenParams best = start;
  best.cv_accuracy = cv_score(train, cfg, best, folds, grid.max_iters);

  std::vector<std::pair<double ChosenParams::*, const std::vector<double>*>> axes;
  if (cfg.learner == Learner::pnca) {
    axes.emplace_back(&ChosenParams::alpha, &grid.alphas);
  } else {
    axes.emplace_back(&ChosenParams::reg_weight, &grid.reg_weights);
    axes.emplace_back(&ChosenParams::gamma1, &grid.gamma1s);
    axes.emplace_back(&ChosenParams::gamma2, &grid.gamma2s);
  }
  for (std::size_t sweep = 0; sweep < grid.sweeps; ++sweep) {
    bool moved = false;
    for (const auto& [field, values] : axes) {
      for (double v : *values) {
        if (v == best.*field) continue;
        ChosenParams trial = best;
        trial.*field = v;
        const double score = cv_score(train, cfg, trial, folds, grid.max_iters);
        if (score > best.cv_accuracy) {
          best = trial;
          best.cv_accuracy = score;
          moved = true;
        }
      }
    }
    if (!moved) break;
  }
  return best;
}

[[noreturn]] void rethrow_with_trial(std::size_t trial) {
  const std::string prefix = "trial " + std::to_string(trial) + ": ";
  try {
    throw;
  } catch (const InvalidInput& e) {
    throw InvalidInput(prefix + e.what());
  } catch (const ConvergenceError& e) {
    throw ConvergenceError(prefix + e.what());
  } catch (const NumericError& e) {
    throw NumericError(prefix + e.what());
  } catch (const SolverError& e) {
    throw SolverError(prefix + e.what());
  } catch (const Error& e) {
    throw Error(prefix + e.what());
  }
}

}  // namespace

std::vector<int> default_k_values(std::size_t train_size) {
  std::vector<int> ks;
  for (int k = 1; k <= kMaxNeighbors && static_cast<std::size_t>(k) <= train_size; ++k) ks.push_back(k);
  return ks;
}

TrialResult knn_classify(const LabeledDataset& train, const LabeledDataset& test, const MetricMatrix& metric,
                         std::span<const int> k_values) {
  if (train.size() == 0 || test.size() == 0) throw InvalidInput("knn: empty train or test set");
  if (train.dim() != test.dim() || metric.dim() != train.dim()) throw InvalidInput("knn: dimension mismatch");
  if (k_values.empty()) throw InvalidInput("knn: no k values");
  for (int k : k_values) {
    if (k < 1 || k > kMaxNeighbors || static_cast<std::size_t>(k) > train.size()) {
      throw InvalidInput("knn: k = " + std::to_string(k) + " outside [1, min(40, train size)]");
    }
  }
  std::vector<int> ks(k_values.begin(), k_values.end());
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  const int max_k = ks.back();

  const Eigen::MatrixXd l = metric.factor();
  const Eigen::MatrixXd dist = cross_distances(test.features() * l, train.features() * l);
  const std::size_t classes = std::max(train.num_classes(), test.num_classes());
  std::map<int, std::size_t> correct;

  std::vector<std::size_t> order(train.size());
  std::vector<std::size_t> votes(classes);
  std::vector<double> dist_sum(classes);
  for (std::size_t t = 0; t < test.size(); ++t) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto row = dist.row(ix(t));
    std::partial_sort(order.begin(), order.begin() + max_k, order.end(), [&](std::size_t a, std::size_t b) {
      return row(ix(a)) < row(ix(b)) || (row(ix(a)) == row(ix(b)) && a < b);
    });
    std::fill(votes.begin(), votes.end(), 0);
    std::fill(dist_sum.begin(), dist_sum.end(), 0.0);
    std::size_t next = 0;
    for (int k : ks) {
      for (; next < static_cast<std::size_t>(k); ++next) {
        const auto c = static_cast<std::size_t>(train.labels()[order[next]] - 1);
        ++votes[c];
        dist_sum[c] += row(ix(order[next]));
      }
      std::size_t winner = 0;
      for (std::size_t c = 1; c < classes; ++c) {
        if (votes[c] > votes[winner] || (votes[c] == votes[winner] && dist_sum[c] < dist_sum[winner])) winner = c;
      }
      if (static_cast<int>(winner) + 1 == test.labels()[t]) ++correct[k];
    }
  }

  TrialResult r;
  r.best_accuracy = -1.0;
  for (int k : ks) {
    const double acc = static_cast<double>(correct[k]) / static_cast<double>(test.size());
    r.accuracy_by_k[k] = acc;
    if (acc > r.best_accuracy) {
      r.best_accuracy = acc;
      r.best_k = k;
    }
  }
  return r;
}

RecallResult recall_at_k(const EmbeddingBatch& batch, std::span<const int> k_values) {
  const std::size_t n = batch.size();
  if (k_values.empty()) throw InvalidInput("recall: no k values");
  for (int k : k_values) {
    if (k < 1 || static_cast<std::size_t>(k) >= n) {
      throw InvalidInput("recall: k = " + std::to_string(k) + " must be in [1, n)");
    }
  }
  Eigen::MatrixXd f = batch.vectors();
  for (Index i = 0; i < f.rows(); ++i) {
    const double norm = f.row(i).norm();
    if (norm > 0.0) f.row(i) /= norm;
  }
  const Eigen::MatrixXd sim = f * f.transpose();
  const auto& y = batch.labels();

  // Rank (0-based) of the first same-label neighbor; n when there is none.
  std::vector<std::size_t> first_hit(n, n);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    order.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) order.push_back(j);
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return sim(ix(i), ix(a)) > sim(ix(i), ix(b)) || (sim(ix(i), ix(a)) == sim(ix(i), ix(b)) && a < b);
    });
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (y[order[r]] == y[i]) {
        first_hit[i] = r;
        break;
      }
    }
  }
  RecallResult out;
  for (int k : k_values) {
    const auto hits = std::count_if(first_hit.begin(), first_hit.end(),
                                    [&](std::size_t r) { return r < static_cast<std::size_t>(k); });
    out.recall_at[k] = static_cast<double>(hits) / static_cast<double>(n);
  }
  return out;
}

Learner parse_learner(const std::string& text) {
  if (text == "identity") return Learner::identity;
  if (text == "lanml-minus") return Learner::lanml_minus;
  if (text == "lanml-plus") return Learner::lanml_plus;
  if (text == "pnca") return Learner::pnca;
  throw InvalidInput("unknown learner '" + text + "' (expected identity, lanml-minus, lanml-plus or pnca)");
}

std::string to_string(Learner learner) {
  switch (learner) {
    case Learner::identity: return "identity";
    case Learner::lanml_minus: return "lanml-minus";
    case Learner::lanml_plus: return "lanml-plus";
    case Learner::pnca: return "pnca";
  }
  return "unknown";
}

TuningGrid paper_uci_grid(Learner learner) {
  TuningGrid g;
  for (int i = 0; i < 8; ++i) g.reg_weights.push_back(0.1 + 0.2 * i);
  g.gamma1s = half_power_grid(learner == Learner::lanml_minus ? -1.0 : 1.0);
  g.gamma2s = half_power_grid(1.0);
  for (int p = -8; p <= 10; ++p) g.alphas.push_back(std::exp2(p));
  return g;
}

ExperimentResult run_experiment(const LabeledDataset& data, const ExperimentConfig& cfg) {
  if (data.num_classes() < 2) throw InvalidInput("experiment: need at least two classes");
  if (cfg.learner == Learner::lanml_minus || cfg.learner == Learner::lanml_plus) cfg.lanml.validate();
  if (cfg.learner == Learner::pnca && !(cfg.pnca_alpha > 0.0)) throw InvalidInput("experiment: pnca alpha must be positive");

  ExperimentResult out;
  out.input_dim = data.dim();

  LabeledDataset source = data;
  ExperimentConfig trial_cfg = cfg;
  if (cfg.paper_protocol) {
    source = preprocess(data, data, cfg).train;
    trial_cfg.standardize = false;
    trial_cfg.pca_dim = 0;
  }
  const auto splits = cfg.plan.stratified ? make_stratified_splits(source.labels(), cfg.plan)
                                          : make_splits(source.size(), cfg.plan);

  ChosenParams params;
  params.gamma1 = cfg.lanml.gamma1;
  params.gamma2 = cfg.lanml.gamma2;
  params.reg_weight = cfg.lanml.reg_weight;
  params.alpha = cfg.pnca_alpha;

  for (std::size_t t = 0; t < splits.size(); ++t) {
    try {
      const Prepared p = preprocess(source.subset(splits[t].train), source.subset(splits[t].test), trial_cfg);
      out.working_dim = p.train.dim();
      if (t == 0 && cfg.tuning && !cfg.fixed_metric && cfg.learner != Learner::identity) params = tune(p.train, trial_cfg, params);
      const SolveResult s = learn(p.train, trial_cfg, params, cfg.lanml.solver.max_iters);
      TrialRow row;
      row.trial = t;
      row.result = knn_classify(p.train, p.test, s.metric, k_values_for(cfg, p.train.size()));
      row.final_loss = s.final_loss;
      row.converged = s.converged;
      row.iterations = s.trace.empty() ? 0 : s.trace.size() - 1;
      out.trials.push_back(std::move(row));
      out.last_metric = s.metric;
      out.last_trace = s.trace;
    } catch (const Error&) {
      rethrow_with_trial(t);
    }
  }

  double sum = 0.0;
  for (const auto& row : out.trials) {
    sum += row.result.best_accuracy;
    ++out.best_k_histogram[row.result.best_k];
  }
  const auto n = static_cast<double>(out.trials.size());
  out.mean = sum / n;
  if (out.trials.size() > 1) {
    double ss = 0.0;
    for (const auto& row : out.trials) ss += (row.result.best_accuracy - out.mean) * (row.result.best_accuracy - out.mean);
    out.std = std::sqrt(ss / (n - 1.0));
  }
  out.params = params;
  return out;
}

nlohmann::json summary_json(const ExperimentResult& result, const ExperimentConfig& cfg, const std::string& dataset) {
  nlohmann::json hist = nlohmann::json::object();
  for (const auto& [k, count] : result.best_k_histogram) hist[std::to_string(k)] = count;
  nlohmann::json per_trial = nlohmann::json::array();
  for (const auto& row : result.trials) {
    per_trial.push_back({{"trial", row.trial},
                         {"best_k", row.result.best_k},
                         {"best_accuracy", row.result.best_accuracy},
                         {"final_loss", row.final_loss},
                         {"converged", row.converged},
                         {"iterations", row.iterations}});
  }
  nlohmann::json params = {{"cv_accuracy", result.params.cv_accuracy}};
  if (cfg.learner == Learner::pnca) {
    params["alpha"] = result.params.alpha;
  } else if (cfg.learner != Learner::identity) {
    params["gamma1"] = result.params.gamma1;
    params["gamma2"] = result.params.gamma2;
    params["reg_weight"] = result.params.reg_weight;
  }
  return {{"dataset", dataset},
          {"learner", to_string(cfg.learner)},
          {"trials", result.trials.size()},
          {"mean", result.mean},
          {"std", result.std},
          {"std_convention", "sample"},
          {"best_k_histogram", hist},
          {"k_selection", "best k on the test split, reported alongside accuracy_by_k"},
          {"preprocessing",
           {{"standardize", cfg.standardize},
            {"pca_dim", cfg.pca_dim},
            {"fit_on", cfg.paper_protocol ? "full dataset" : "training split"},
            {"input_dim", result.input_dim},
            {"working_dim", result.working_dim}}},
          {"params", params},
          {"per_trial", per_trial}};
}

std::string accuracy_csv(const ExperimentResult& result) {
  std::ostringstream out;
  out.precision(17);
  out << "trial,k,accuracy\n";
  for (const auto& row : result.trials) {
    for (const auto& [k, acc] : row.result.accuracy_by_k) out << row.trial << ',' << k << ',' << acc << '\n';
  }
  return out.str();
}

std::string trials_csv(const ExperimentResult& result) {
  std::ostringstream out;
  out.precision(17);
  out << "trial,best_k,best_accuracy,final_loss,converged,iterations\n";
  for (const auto& row : result.trials) {
    out << row.trial << ',' << row.result.best_k << ',' << row.result.best_accuracy << ',' << row.final_loss << ','
        << (row.converged ? 1 : 0) << ',' << row.iterations << '\n';
  }
  return out.str();
}

EmbeddingBatch synthetic_batch(const SyntheticSpec& spec) {
  if (spec.classes < 1 || spec.per_class < 1 || spec.dim < 1 || spec.classes * spec.per_class < 2) {
    throw InvalidInput("synthetic batch: need positive sizes and at least two rows");
  }
  const std::size_t n = spec.classes * spec.per_class;
  Rng rng(spec.seed, 0x5EED);
  Eigen::MatrixXd f(ix(n), ix(spec.dim));
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<int>(i / spec.per_class) + 1;
    do {
      for (std::size_t c = 0; c < spec.dim; ++c) f(ix(i), ix(c)) = rng.normal();
    } while (f.row(ix(i)).norm() == 0.0);
  }
  return EmbeddingBatch::normalized_from(std::move(f), std::move(labels));
}

EmbeddingLossKind parse_embedding_loss(const std::string& text) {
  if (text == "danml") return EmbeddingLossKind::danml;
  if (text == "triplet") return EmbeddingLossKind::triplet;
  if (text == "ms") return EmbeddingLossKind::ms;
  if (text == "lifted") return EmbeddingLossKind::lifted;
  throw InvalidInput("unknown embedding loss '" + text + "' (expected danml, triplet, ms or lifted)");
}

std::string to_string(EmbeddingLossKind kind) {
  switch (kind) {
    case EmbeddingLossKind::danml: return "danml";
    case EmbeddingLossKind::triplet: return "triplet";
    case EmbeddingLossKind::ms: return "ms";
    case EmbeddingLossKind::lifted: return "lifted";
  }
  return "unknown";
}

LossReport embedding_loss(const EmbeddingBatch& batch, const ToyTrainConfig& cfg) {
  switch (cfg.loss) {
    case EmbeddingLossKind::danml: return danml_loss(batch, cfg.danml, mine_pairs(batch, cfg.mining));
    case EmbeddingLossKind::triplet: return triplet_loss(batch, cfg.triplet_margin);
    case EmbeddingLossKind::ms:
      return ms_loss(batch, cfg.ms_alpha, cfg.ms_beta, cfg.ms_margin, PairQuantity::cosine, mine_pairs(batch, cfg.mining));
    case EmbeddingLossKind::lifted:
      return lifted_improved_loss(batch, 1.0, 1.0, 0.0, 0.0, cfg.lifted_margin, LiftedMode::original);
  }
  throw InvalidInput("unknown embedding loss");
}

ToyTrainResult toy_embedding_train(const EmbeddingBatch& init, const ToyTrainConfig& cfg) {
  if (!(cfg.step_size > 0.0) || !std::isfinite(cfg.step_size)) throw InvalidInput("toy train: step size must be positive");
  const std::vector<int> one{1};
  ToyTrainResult out;
  out.batch = init;
  out.recall1_before = recall_at_k(init, one).recall_at.at(1);
  for (std::size_t step = 0;; ++step) {
    const LossReport r = embedding_loss(out.batch, cfg);
    if (!std::isfinite(r.loss) || !r.grad.allFinite()) {
      throw NumericError("toy train: non-finite loss at step " + std::to_string(step));
    }
    out.loss_trace.push_back(r.loss);
    if (step == cfg.steps) break;
    Eigen::MatrixXd next = out.batch.vectors() - cfg.step_size * r.grad;
    if (!next.allFinite() || !next.rowwise().squaredNorm().allFinite()) {
      throw NumericError("toy train: non-finite embedding at step " + std::to_string(step));
    }
    out.batch = cfg.renormalize ? EmbeddingBatch::normalized_from(std::move(next), out.batch.labels())
                                : EmbeddingBatch(std::move(next), out.batch.labels(), false);
  }
  out.recall1_after = recall_at_k(out.batch, one).recall_at.at(1);
  return out;
}

}  // namespace anml
