#include "anml/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "anml/checks.hpp"
#include "anml/dataset.hpp"
#include "anml/errors.hpp"
#include "anml/eval.hpp"
#include "anml/geometry.hpp"
#include "anml/mahalanobis.hpp"

#ifndef ANML_VERSION
#define ANML_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace anml::cli {
namespace {

enum Command : unsigned { kTrain = 1, kEval = 2, kAnalyze = 4, kLosscheck = 8, kFetch = 16 };
constexpr unsigned kData = kTrain | kEval | kAnalyze;

enum class Kind { real, integer, text, boolean, text_list };

struct OptionSpec {
  const char* key;
  const char* flag;
  Kind kind;
  json fallback;
  unsigned commands;
  const char* help;
  bool flag_sets = true;  // value stored when a boolean flag is present
};

// null fallbacks mean "the default of whichever component consumes it".
const std::vector<OptionSpec>& option_specs() {
  static const std::vector<OptionSpec> specs{
      {"dataset", "--dataset", Kind::text, nullptr, kData, "Dataset file, or a bundled/fetched name (iris, wine, ...)"},
      {"format", "--format", Kind::text, nullptr, kData, "libsvm, csv (last column label), csv_first_label"},
      {"delimiter", "--delimiter", Kind::text, ",", kData, "CSV field delimiter"},
      {"header", "--header", Kind::boolean, false, kData, "CSV file starts with a header row"},
      {"dim", "--dim", Kind::integer, nullptr, kData, "LIBSVM feature dimension (default: largest index)"},
      {"standardize", "--no-standardize", Kind::boolean, true, kData, "Skip per-feature standardization", false},
      {"pca_dim", "--pca-dim", Kind::integer, 150, kData, "PCA target when the data has more features (0: off)"},
      {"learner", "--learner", Kind::text, "lanml-minus", kTrain,
       "identity, lanml-minus, lanml-plus, pnca, or an embedding loss: danml, triplet, ms, lifted"},
      {"gamma1", "--gamma1", Kind::real, nullptr, kTrain, "Similar-side log-exp parameter"},
      {"gamma2", "--gamma2", Kind::real, nullptr, kTrain, "Dissimilar-side log-exp parameter"},
      {"lambda", "--lambda", Kind::real, nullptr, kTrain, "Regularization weight"},
      {"lambda1", "--lambda1", Kind::real, nullptr, kTrain, "DANML similar-side radius anchor"},
      {"lambda2", "--lambda2", Kind::real, nullptr, kTrain, "DANML dissimilar-side radius anchor"},
      {"loss", "--loss", Kind::text, nullptr, kTrain, "Outer loss: hinge, logistic, identity"},
      {"margin", "--margin", Kind::real, nullptr, kTrain, "Hinge margin, or the embedding loss margin"},
      {"similars", "--similars", Kind::integer, 10, kTrain | kAnalyze, "Nearest same-class samples per query"},
      {"alpha", "--alpha", Kind::real, 1.0, kTrain, "PNCA alpha"},
      {"trials", "--trials", Kind::integer, 30, kTrain | kEval, "Number of random splits"},
      {"train_fraction", "--train-fraction", Kind::real, 0.7, kTrain | kEval, "Training share of each split"},
      {"stratified", "--stratified", Kind::boolean, false, kTrain | kEval, "Class-stratified splits"},
      {"paper_protocol", "--paper-protocol", Kind::boolean, false, kTrain | kEval,
       "Fit preprocessing on the full dataset before splitting"},
      {"seed", "--seed", Kind::integer, 0, kTrain | kEval | kLosscheck, "Random seed"},
      {"k_max", "--k-max", Kind::integer, 40, kTrain | kEval, "Largest k for k-NN (at most 40)"},
      {"max_iters", "--max-iters", Kind::integer, 500, kTrain, "Solver iteration cap"},
      {"step_size", "--step-size", Kind::real, nullptr, kTrain, "Initial solver step (embedding losses: fixed step)"},
      {"grad_tol", "--grad-tol", Kind::real, 1e-6, kTrain, "Stop when an accepted step is smaller than this"},
      {"preset", "--preset", Kind::text, nullptr, kTrain, "Parameter grid preset: paper-uci"},
      {"metric", "--metric", Kind::text, nullptr, kEval | kAnalyze, "Metric JSON written by train"},
      {"steps", "--steps", Kind::integer, 500, kTrain, "Gradient steps for embedding losses"},
      {"classes", "--classes", Kind::integer, 2, kTrain, "Synthetic classes for embedding losses"},
      {"per_class", "--per-class", Kind::integer, 10, kTrain, "Synthetic samples per class"},
      {"embed_dim", "--embed-dim", Kind::integer, 8, kTrain, "Synthetic embedding dimension"},
      {"similarity", "--similarity", Kind::text, "sq_euclidean", kTrain, "DANML distance: sq_euclidean, neg_cosine"},
      {"mining", "--mining", Kind::boolean, false, kTrain, "Enable pair mining for danml and ms"},
      {"mining_epsilon", "--mining-epsilon", Kind::real, 0.1, kTrain, "Mining margin"},
      {"instances", "--instances", Kind::integer, 20, kLosscheck, "Random instances per check"},
      {"only", "--only", Kind::text_list, json::array(), kLosscheck, "Run only these checks"},
      {"corrupt", "--corrupt", Kind::text, nullptr, kLosscheck, "Perturb one check's gradient (harness self-test)"},
      {"out", "--out", Kind::text, nullptr, kTrain | kEval | kAnalyze | kLosscheck, "Output directory"},
  };
  return specs;
}

const OptionSpec* find_spec(const std::string& key) {
  for (const auto& s : option_specs()) {
    if (key == s.key) return &s;
  }
  return nullptr;
}

json coerce(const OptionSpec& spec, const json& v, const std::string& origin) {
  const auto fail = [&]() -> json {
    throw InvalidInput(origin + ": '" + spec.key + "' has the wrong type (" + v.dump() + ")");
  };
  if (v.is_null()) return v;
  switch (spec.kind) {
    case Kind::real:
      if (!v.is_number()) fail();
      return v.get<double>();
    case Kind::integer:
      if (v.is_number_unsigned()) return v;
      if (v.is_number_integer()) {
        if (v.get<long long>() < 0) throw InvalidInput(origin + ": '" + spec.key + "' must be non-negative");
        return v.get<unsigned long long>();
      }
      return fail();
    case Kind::text:
      if (!v.is_string()) fail();
      return v;
    case Kind::boolean:
      if (!v.is_boolean()) fail();
      return v;
    case Kind::text_list:
      if (!v.is_array()) fail();
      for (const auto& e : v) {
        if (!e.is_string()) fail();
      }
      return v;
  }
  return fail();
}

json parse_flag_text(const OptionSpec& spec, const std::string& text) {
  try {
    std::size_t used = 0;
    switch (spec.kind) {
      case Kind::real: {
        const double v = std::stod(text, &used);
        if (used != text.size()) break;
        return v;
      }
      case Kind::integer: {
        if (!text.empty() && text[0] == '-') throw InvalidInput(std::string(spec.flag) + " must be non-negative");
        const unsigned long long v = std::stoull(text, &used);
        if (used != text.size()) break;
        return v;
      }
      default:
        return text;
    }
  } catch (const std::logic_error&) {
  }
  throw InvalidInput(std::string(spec.flag) + ": cannot parse '" + text + "'");
}

struct Parsed {
  json flags = json::object();  // explicitly given on the command line
  std::string config_path;
  std::string fetch_name;
  bool fetch_list = false;
  bool fetch_force = false;
};

void add_options(CLI::App& sub, unsigned command, Parsed& parsed,
                 std::map<std::string, std::string>& raw, std::map<std::string, std::vector<std::string>>& lists) {
  sub.add_option("--config", parsed.config_path, "JSON config file (flags override it)");
  for (const auto& spec : option_specs()) {
    if (!(spec.commands & command)) continue;
    const std::string key = spec.key;
    if (spec.kind == Kind::boolean) {
      sub.add_flag_callback(spec.flag, [&parsed, key, v = spec.flag_sets] { parsed.flags[key] = v; }, spec.help);
    } else if (spec.kind == Kind::text_list) {
      sub.add_option(spec.flag, lists[key], spec.help)->delimiter(',');
    } else {
      sub.add_option(spec.flag, raw[key], spec.help);
    }
  }
}

json defaults_for(unsigned command) {
  json cfg = json::object();
  for (const auto& spec : option_specs()) {
    if (spec.commands & command) cfg[spec.key] = spec.fallback;
  }
  return cfg;
}

json merge_config(unsigned command, const std::string& name, const Parsed& parsed) {
  json cfg = defaults_for(command);
  if (!parsed.config_path.empty()) {
    std::ifstream in(parsed.config_path);
    if (!in) throw InvalidInput("config not found: " + parsed.config_path);
    json file;
    try {
      file = json::parse(in);
    } catch (const json::parse_error& e) {
      throw InvalidInput("config " + parsed.config_path + ": " + e.what());
    }
    if (!file.is_object()) throw InvalidInput("config must be a JSON object");
    for (const auto& [key, value] : file.items()) {
      const OptionSpec* spec = find_spec(key);
      if (!spec) throw InvalidInput("config: unknown key '" + key + "'");
      if (!(spec->commands & command)) throw InvalidInput("config: key '" + key + "' does not apply to " + name);
      cfg[key] = coerce(*spec, value, "config");
    }
  }
  for (const auto& [key, value] : parsed.flags.items()) cfg[key] = value;
  return cfg;
}

template <class T>
T get_or(const json& cfg, const char* key, T fallback) {
  const auto it = cfg.find(key);
  return it == cfg.end() || it->is_null() ? fallback : it->get<T>();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path output_dir(const json& cfg) {
  const fs::path dir = get_or<std::string>(cfg, "out", ".");
  fs::create_directories(dir);
  return dir;
}

struct ResolvedData {
  LabeledDataset data;
  fs::path path;
  std::string name;
};

FileFormat format_for(const json& cfg, const fs::path& path, const std::string& manifest_format) {
  if (auto f = get_or<std::string>(cfg, "format", ""); !f.empty()) return parse_file_format(f);
  if (!manifest_format.empty()) return parse_file_format(manifest_format);
  return path.extension() == ".csv" ? FileFormat::csv_last_label : FileFormat::libsvm;
}

ResolvedData resolve_dataset(const json& cfg) {
  const std::string name = get_or<std::string>(cfg, "dataset", "");
  if (name.empty()) throw InvalidInput("no dataset given (use --dataset)");
  fs::path path = name;
  std::string manifest_format;
  if (!fs::is_regular_file(path)) {
    path.clear();
    json manifest;
    try {
      manifest = load_manifest();
    } catch (const InvalidInput&) {
    }
    if (manifest.contains("datasets") && manifest["datasets"].contains(name)) {
      const auto& entry = manifest["datasets"][name];
      manifest_format = entry.value("format", "");
      const fs::path candidate =
          entry.contains("bundled") ? data_dir() / entry["bundled"].get<std::string>() : cache_dir() / name;
      if (fs::is_regular_file(candidate)) path = candidate;
    }
    if (path.empty()) throw InvalidInput("dataset not found: " + name);
  }
  LoadOptions opts;
  opts.format = format_for(cfg, path, manifest_format);
  const std::string delim = get_or<std::string>(cfg, "delimiter", ",");
  if (delim.size() != 1) throw InvalidInput("--delimiter must be a single character");
  opts.delimiter = delim[0];
  opts.has_header = get_or<bool>(cfg, "header", false);
  if (cfg.contains("dim") && !cfg["dim"].is_null()) opts.dim = cfg["dim"].get<std::size_t>();
  return {load_dataset(path, opts), path, name};
}

json manifest_for(const std::string& command, const json& cfg, const ResolvedData* data) {
  json m = {{"command", command},
            {"config", cfg},
            {"seed", cfg.value("seed", json(0))},
            {"versions",
             {{"anml", ANML_VERSION},
              {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
              {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
              {"compiler", __VERSION__}}}};
  if (data) {
    m["dataset"] = {{"name", data->name},
                    {"path", data->path.string()},
                    {"sha256", sha256_file(data->path)},
                    {"rows", data->data.size()},
                    {"features", data->data.dim()},
                    {"classes", data->data.num_classes()}};
  }
  return m;
}

std::vector<int> k_values_from(const json& cfg) {
  const auto k_max = get_or<std::size_t>(cfg, "k_max", kMaxNeighbors);
  if (k_max < 1 || k_max > static_cast<std::size_t>(kMaxNeighbors)) throw InvalidInput("--k-max must be in [1, 40]");
  std::vector<int> ks;
  for (int k = 1; k <= static_cast<int>(k_max); ++k) ks.push_back(k);
  return ks;
}

SplitPlan plan_from(const json& cfg) {
  SplitPlan plan;
  plan.trials = get_or<std::size_t>(cfg, "trials", 30);
  plan.train_fraction = get_or<double>(cfg, "train_fraction", 0.7);
  plan.seed = get_or<std::uint64_t>(cfg, "seed", 0);
  plan.stratified = get_or<bool>(cfg, "stratified", false);
  if (plan.trials < 1) throw InvalidInput("--trials must be positive");
  if (!(plan.train_fraction > 0.0 && plan.train_fraction < 1.0)) throw InvalidInput("--train-fraction must be in (0, 1)");
  return plan;
}

ExperimentConfig experiment_from(const json& cfg, Learner learner) {
  ExperimentConfig ec;
  ec.learner = learner;
  ec.plan = plan_from(cfg);
  ec.k_values = k_values_from(cfg);
  ec.standardize = get_or<bool>(cfg, "standardize", true);
  ec.pca_dim = get_or<std::size_t>(cfg, "pca_dim", 150);
  ec.paper_protocol = get_or<bool>(cfg, "paper_protocol", false);
  LanmlConfig& lc = ec.lanml;
  lc.gamma1 = get_or<double>(cfg, "gamma1", lc.gamma1);
  lc.gamma2 = get_or<double>(cfg, "gamma2", lc.gamma2);
  lc.reg_weight = get_or<double>(cfg, "lambda", lc.reg_weight);
  lc.loss.kind = parse_loss_kind(get_or<std::string>(cfg, "loss", to_string(lc.loss.kind)));
  lc.loss.margin = get_or<double>(cfg, "margin", lc.loss.margin);
  lc.similars_per_query = get_or<std::size_t>(cfg, "similars", lc.similars_per_query);
  lc.solver.max_iters = static_cast<int>(get_or<std::size_t>(cfg, "max_iters", 500));
  lc.solver.step_size = get_or<double>(cfg, "step_size", lc.solver.step_size);
  lc.solver.grad_tol = get_or<double>(cfg, "grad_tol", lc.solver.grad_tol);
  lc.pair_mode = learner == Learner::lanml_plus ? PairMode::all_similars : PairMode::knn_similars;
  ec.pnca_alpha = get_or<double>(cfg, "alpha", 1.0);
  if (learner == Learner::lanml_minus || learner == Learner::lanml_plus) lc.validate();
  if (learner == Learner::pnca && !(ec.pnca_alpha > 0.0)) throw InvalidInput("--alpha must be positive");
  if (!(lc.solver.step_size > 0.0)) throw InvalidInput("--step-size must be positive");

  const std::string preset = get_or<std::string>(cfg, "preset", "");
  if (preset == "paper-uci") {
    ec.tuning = paper_uci_grid(learner);
  } else if (!preset.empty()) {
    throw InvalidInput("unknown preset '" + preset + "' (expected paper-uci)");
  }
  return ec;
}

MetricMatrix load_metric(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("metric not found: " + path);
  try {
    return json::parse(in).get<MetricMatrix>();
  } catch (const json::exception& e) {
    throw InvalidInput("metric " + path + ": " + e.what());
  }
}

void report_experiment(const ExperimentResult& result, const ExperimentConfig& ec, const ResolvedData& rd,
                       const fs::path& dir, std::ostream& out) {
  write_json(dir / "summary.json", summary_json(result, ec, rd.name));
  write_text(dir / "accuracy.csv", accuracy_csv(result));
  write_text(dir / "trials.csv", trials_csv(result));
  std::ostringstream line;
  line << std::fixed << std::setprecision(4) << rd.name << " " << to_string(ec.learner) << ": mean "
       << 100.0 * result.mean << " std " << 100.0 * result.std << " over " << result.trials.size() << " trials";
  out << line.str() << '\n';
}

int cmd_train_embedding(const json& cfg, EmbeddingLossKind kind, std::ostream& out, std::ostream& err) {
  SyntheticSpec spec;
  spec.classes = get_or<std::size_t>(cfg, "classes", 2);
  spec.per_class = get_or<std::size_t>(cfg, "per_class", 10);
  spec.dim = get_or<std::size_t>(cfg, "embed_dim", 8);
  spec.seed = get_or<std::uint64_t>(cfg, "seed", 0);
  if (spec.classes < 2 || spec.per_class < 2) throw InvalidInput("--classes and --per-class must be at least 2");

  ToyTrainConfig tc;
  tc.loss = kind;
  tc.steps = get_or<std::size_t>(cfg, "steps", 500);
  tc.step_size = get_or<double>(cfg, "step_size", tc.step_size);
  tc.mining.enabled = get_or<bool>(cfg, "mining", false);
  tc.mining.epsilon = get_or<double>(cfg, "mining_epsilon", 0.1);
  if (tc.mining.epsilon < 0.0) throw InvalidInput("--mining-epsilon must be non-negative");
  if (kind == EmbeddingLossKind::danml) {
    const std::string loss = get_or<std::string>(cfg, "loss", "logistic");
    tc.danml = DanmlConfig::from_tuning_grid(
        get_or<double>(cfg, "gamma1", 2.0), get_or<double>(cfg, "gamma2", 30.0), get_or<double>(cfg, "lambda1", 0.5),
        get_or<double>(cfg, "lambda2", 0.52), {parse_loss_kind(loss), get_or<double>(cfg, "margin", 0.0)},
        parse_distance(get_or<std::string>(cfg, "similarity", "sq_euclidean")));
    err << "danml sign mapping: " << tc.danml.sign_mapping << '\n';
  } else if (kind == EmbeddingLossKind::triplet) {
    tc.triplet_margin = get_or<double>(cfg, "margin", tc.triplet_margin);
  } else if (kind == EmbeddingLossKind::ms) {
    tc.ms_margin = get_or<double>(cfg, "margin", tc.ms_margin);
  } else {
    tc.lifted_margin = get_or<double>(cfg, "margin", tc.lifted_margin);
  }

  const fs::path dir = output_dir(cfg);
  const ToyTrainResult r = toy_embedding_train(synthetic_batch(spec), tc);
  json summary = {{"loss", to_string(kind)},
                  {"steps", tc.steps},
                  {"initial_loss", r.loss_trace.front()},
                  {"final_loss", r.loss_trace.back()},
                  {"recall_at_1_before", r.recall1_before},
                  {"recall_at_1_after", r.recall1_after},
                  {"final_report", embedding_loss(r.batch, tc)}};
  if (kind == EmbeddingLossKind::danml) summary["sign_mapping"] = tc.danml.sign_mapping;
  write_json(dir / "summary.json", summary);

  std::ostringstream trace;
  trace.precision(17);
  trace << "step,loss\n";
  for (std::size_t s = 0; s < r.loss_trace.size(); ++s) trace << s << ',' << r.loss_trace[s] << '\n';
  write_text(dir / "loss_trace.csv", trace.str());

  std::ostringstream emb;
  emb.precision(17);
  const auto& f = r.batch.vectors();
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    for (Eigen::Index c = 0; c < f.cols(); ++c) emb << f(i, c) << ',';
    emb << r.batch.labels()[static_cast<std::size_t>(i)] << '\n';
  }
  write_text(dir / "embeddings.csv", emb.str());
  write_json(dir / "manifest.json", manifest_for("train", cfg, nullptr));
  out << to_string(kind) << ": loss " << r.loss_trace.front() << " -> " << r.loss_trace.back() << ", recall@1 "
      << r.recall1_before << " -> " << r.recall1_after << '\n';
  return kOk;
}

int cmd_train(const json& cfg, std::ostream& out, std::ostream& err) {
  const std::string learner = get_or<std::string>(cfg, "learner", "lanml-minus");
  if (learner == "danml" || learner == "triplet" || learner == "ms" || learner == "lifted") {
    return cmd_train_embedding(cfg, parse_embedding_loss(learner), out, err);
  }
  const ExperimentConfig ec = experiment_from(cfg, parse_learner(learner));
  const ResolvedData rd = resolve_dataset(cfg);
  const fs::path dir = output_dir(cfg);
  const ExperimentResult result = run_experiment(rd.data, ec);
  report_experiment(result, ec, rd, dir, out);
  write_json(dir / "metric.json", json(result.last_metric));
  write_text(dir / "trace.csv", trace_csv(result.last_trace));
  write_json(dir / "manifest.json", manifest_for("train", cfg, &rd));
  return kOk;
}

int cmd_eval(const json& cfg, std::ostream& out) {
  ExperimentConfig ec = experiment_from(cfg, Learner::identity);
  if (auto m = get_or<std::string>(cfg, "metric", ""); !m.empty()) ec.fixed_metric = load_metric(m);
  const ResolvedData rd = resolve_dataset(cfg);
  const fs::path dir = output_dir(cfg);
  const ExperimentResult result = run_experiment(rd.data, ec);
  report_experiment(result, ec, rd, dir, out);
  write_json(dir / "manifest.json", manifest_for("eval", cfg, &rd));
  return kOk;
}

int cmd_analyze(const json& cfg, std::ostream& out) {
  const ResolvedData rd = resolve_dataset(cfg);
  LabeledDataset data = rd.data;
  if (get_or<bool>(cfg, "standardize", true)) data = standardize(data).first;
  const auto pca_dim = get_or<std::size_t>(cfg, "pca_dim", 150);
  if (pca_dim > 0 && data.dim() > pca_dim) data = pca_reduce(data, pca_dim).first;

  const auto k = get_or<std::size_t>(cfg, "similars", 10);
  const InseparabilityReport report = inseparability_report(data, k);
  const ClassGap before = class_gap(data);
  json result = {{"dataset", rd.name}, {"similars", k}, {"inseparability", report}, {"class_gap", before}};
  if (auto m = get_or<std::string>(cfg, "metric", ""); !m.empty()) {
    const MetricMatrix metric = load_metric(m);
    if (metric.dim() != data.dim()) throw InvalidInput("metric dimension does not match the data");
    const ClassGap after = class_gap(data.with_features(data.features() * metric.factor()));
    result["class_gap_projected"] = after;
    result["lipschitz_lower_bound"] = lipschitz_lower_bound(before.delta, after.delta);
  }
  const fs::path dir = output_dir(cfg);
  write_json(dir / "analysis.json", result);
  write_json(dir / "manifest.json", manifest_for("analyze", cfg, &rd));
  out << rd.name << ": inseparable fraction " << report.fraction << ", class gap " << before.delta << '\n';
  return kOk;
}

int cmd_losscheck(const json& cfg, std::ostream& out, std::ostream& err) {
  CheckOptions opts;
  opts.seed = get_or<std::uint64_t>(cfg, "seed", 0);
  opts.instances = get_or<std::size_t>(cfg, "instances", 20);
  opts.only = get_or<std::vector<std::string>>(cfg, "only", {});
  opts.corrupt = get_or<std::string>(cfg, "corrupt", "");
  const auto outcomes = run_loss_checks(opts);

  std::vector<std::string> failed;
  out << std::left << std::setw(24) << "check" << std::setw(6) << "result" << "  detail\n";
  for (const auto& o : outcomes) {
    out << std::setw(24) << o.name << std::setw(6) << (o.passed ? "pass" : "FAIL") << "  " << o.detail << '\n';
    if (!o.passed) failed.push_back(o.name);
  }
  if (cfg.contains("out") && !cfg["out"].is_null()) write_json(output_dir(cfg) / "losscheck.json", json(outcomes));
  if (!failed.empty()) {
    json msg = {{"error", "check_failed"}, {"failed", failed}};
    err << msg.dump() << '\n';
    return kCheckFailed;
  }
  return kOk;
}

int cmd_fetch(const Parsed& parsed, std::ostream& out) {
  if (parsed.fetch_list) {
    const json manifest = load_manifest();
    for (const auto& [name, entry] : manifest.at("datasets").items()) {
      out << name << "  " << (entry.contains("bundled") ? "bundled" : entry.value("url", "")) << '\n';
    }
    return kOk;
  }
  if (parsed.fetch_name.empty()) throw InvalidInput("fetch: give a dataset name or --list");
  out << fetch_dataset(parsed.fetch_name, parsed.fetch_force, out).string() << '\n';
  return kOk;
}

int fail(std::ostream& err, int code, const std::string& kind, const std::string& message) {
  err << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << '\n';
  return code;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adaptive neighborhood metric learning toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ANML_VERSION);

  Parsed parsed;
  std::map<unsigned, std::map<std::string, std::string>> raw;
  std::map<unsigned, std::map<std::string, std::vector<std::string>>> lists;
  const std::vector<std::pair<unsigned, std::pair<const char*, const char*>>> commands{
      {kTrain, {"train", "Learn a metric over repeated splits, or train toy embeddings"}},
      {kEval, {"eval", "k-NN evaluation of a stored (or identity) metric over repeated splits"}},
      {kAnalyze, {"analyze", "Inseparability and class-gap report"}},
      {kLosscheck, {"losscheck", "Gradient and reduction self-checks"}},
  };
  std::map<unsigned, CLI::App*> subs;
  for (const auto& [bit, names] : commands) {
    CLI::App* sub = app.add_subcommand(names.first, names.second);
    add_options(*sub, bit, parsed, raw[bit], lists[bit]);
    subs[bit] = sub;
  }
  CLI::App* fetch = app.add_subcommand("fetch", "Download a dataset listed in the manifest into the cache");
  fetch->add_option("name", parsed.fetch_name, "Dataset name");
  fetch->add_flag("--list", parsed.fetch_list, "List known datasets");
  fetch->add_flag("--force", parsed.fetch_force, "Download even when cached");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << ANML_VERSION << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    return fail(err, kUsage, "usage", e.what());
  }

  try {
    if (fetch->parsed()) return cmd_fetch(parsed, out);
    for (const auto& [bit, names] : commands) {
      CLI::App* sub = subs[bit];
      if (!sub->parsed()) continue;
      for (const auto& spec : option_specs()) {
        if (!(spec.commands & bit)) continue;
        if (spec.kind == Kind::boolean) continue;
        if (sub->get_option(spec.flag)->count() == 0) continue;
        parsed.flags[spec.key] = spec.kind == Kind::text_list ? json(lists[bit][spec.key])
                                                               : parse_flag_text(spec, raw[bit][spec.key]);
      }
      const json cfg = merge_config(bit, names.first, parsed);
      switch (bit) {
        case kTrain: return cmd_train(cfg, out, err);
        case kEval: return cmd_eval(cfg, out);
        case kAnalyze: return cmd_analyze(cfg, out);
        default: return cmd_losscheck(cfg, out, err);
      }
    }
    return fail(err, kUsage, "usage", "no command");
  } catch (const InvalidInput& e) {
    return fail(err, kUsage, "invalid_input", e.what());
  } catch (const NumericError& e) {
    return fail(err, kRuntime, "numeric", e.what());
  } catch (const Error& e) {
    return fail(err, kRuntime, "runtime", e.what());
  } catch (const json::exception& e) {
    return fail(err, kUsage, "invalid_input", e.what());
  } catch (const std::exception& e) {
    return fail(err, kRuntime, "runtime", e.what());
  }
}

}  // namespace anml::cli
