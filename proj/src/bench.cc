#include "metapn/bench.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <thread>

#include <fmt/format.h>

#include "json.hpp"
#include "metapn/error.h"

namespace metapn {
namespace fs = std::filesystem;

namespace {

double test_accuracy(const MlpParams& theta, const GraphBundle& bundle, const SplitSpec& split) {
  std::vector<ClassIndex> labels;
  for (NodeIndex node : split.test) labels.push_back(bundle.labels[node]);
  return evaluate(theta, bundle.features.gather_rows(split.test), labels).accuracy;
}

MetaProblem problem_for(const GraphBundle& bundle, const SplitSpec& split, std::size_t k_max) {
  const CsrMatrix adjacency = from_edge_list(bundle.n, bundle.edges);
  return make_problem(adjacency, bundle.features, bundle.labels, split, bundle.c, k_max);
}

template <typename T>
T get_scalar(const toml::Value& value, const std::string& key) {
  const auto* scalar = std::get_if<toml::Scalar>(&value);
  if (scalar == nullptr) throw Error(ErrorCode::kMalformedInput, key + " must not be an array");
  if constexpr (std::is_same_v<T, double>) {
    if (const auto* i = std::get_if<std::int64_t>(scalar)) return static_cast<double>(*i);
    if (const auto* d = std::get_if<double>(scalar)) return *d;
  } else if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
    if (const auto* i = std::get_if<std::int64_t>(scalar); i != nullptr && *i >= 0) {
      return static_cast<T>(*i);
    }
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (const auto* s = std::get_if<std::string>(scalar)) return *s;
  }
  throw Error(ErrorCode::kMalformedInput, key + " has the wrong type");
}

template <typename T>
std::vector<T> get_array(const toml::Value& value, const std::string& key) {
  const auto* items = std::get_if<std::vector<toml::Scalar>>(&value);
  if (items == nullptr) return {get_scalar<T>(value, key)};
  std::vector<T> out;
  for (const auto& item : *items) out.push_back(get_scalar<T>(toml::Value(item), key));
  return out;
}

std::string log_file_name(const RunResult& r, std::uint64_t seed) {
  return fmt::format("{}-{}-{}shot-k{}-seed{}.jsonl", to_string(r.method), r.dataset, r.shots,
                     r.k_max, seed);
}

}  // namespace

std::string to_string(Method method) {
  switch (method) {
    case Method::kMetaPn: return "meta-pn";
    case Method::kLp: return "lp";
    case Method::kMlp: return "mlp";
    case Method::kStaticLp: return "static-lp";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::kMetaPn, Method::kLp, Method::kMlp, Method::kStaticLp}) {
    if (to_string(m) == name) return m;
  }
  throw Error(ErrorCode::kInvalidArgument,
              "unknown method '" + name + "' (expected meta-pn, lp, mlp or static-lp)");
}

ExperimentConfig config_from_toml(const toml::Document& doc) {
  ExperimentConfig cfg;
  for (const auto& [key, value] : doc) {
    if (key == "bundle") cfg.bundle = get_scalar<std::string>(value, key);
    else if (key == "dataset") cfg.dataset = get_scalar<std::string>(value, key);
    else if (key == "method") cfg.method = parse_method(get_scalar<std::string>(value, key));
    else if (key == "methods") {
      cfg.methods.clear();
      for (const auto& m : get_array<std::string>(value, key)) cfg.methods.push_back(parse_method(m));
    }
    else if (key == "shots") cfg.shots = get_scalar<std::size_t>(value, key);
    else if (key == "k_max") cfg.k_max = get_scalar<std::size_t>(value, key);
    else if (key == "k_values") cfg.k_values = get_array<std::size_t>(value, key);
    else if (key == "alpha") cfg.alpha = get_scalar<double>(value, key);
    else if (key == "runs") cfg.runs = get_scalar<std::size_t>(value, key);
    else if (key == "seeds") cfg.seeds = get_array<std::uint64_t>(value, key);
    else if (key == "val_per_class") cfg.val_per_class = get_scalar<std::size_t>(value, key);
    else if (key == "jobs") cfg.jobs = get_scalar<std::size_t>(value, key);
    else if (key == "results_csv") cfg.results_csv = get_scalar<std::string>(value, key);
    else if (key == "results_jsonl") cfg.results_jsonl = get_scalar<std::string>(value, key);
    else if (key == "log_dir") cfg.log_dir = get_scalar<std::string>(value, key);
    else if (key == "train.eta_theta") cfg.train.eta_theta = get_scalar<double>(value, key);
    else if (key == "train.eta_phi") cfg.train.eta_phi = get_scalar<double>(value, key);
    else if (key == "train.epsilon_scale") cfg.train.epsilon_scale = get_scalar<double>(value, key);
    else if (key == "train.batch_size") cfg.train.batch_size = get_scalar<std::size_t>(value, key);
    else if (key == "train.k_max") cfg.k_max = get_scalar<std::size_t>(value, key);
    else if (key == "train.hidden_dim") cfg.train.hidden_dim = get_scalar<std::size_t>(value, key);
    else if (key == "train.l2_lambda") cfg.train.l2_lambda = get_scalar<double>(value, key);
    else if (key == "train.dropout") cfg.train.dropout = get_scalar<double>(value, key);
    else if (key == "train.patience") cfg.train.patience = get_scalar<std::size_t>(value, key);
    else if (key == "train.max_epochs") cfg.train.max_epochs = get_scalar<std::size_t>(value, key);
    else if (key == "train.finetune_epochs") {
      cfg.train.finetune_epochs = get_scalar<std::size_t>(value, key);
    } else {
      throw Error(ErrorCode::kMalformedInput, "unknown config key '" + key + "'");
    }
  }
  if (!cfg.seeds.empty() && !doc.contains("runs")) cfg.runs = cfg.seeds.size();
  cfg.train.k_max = cfg.k_max;
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  auto cfg = config_from_toml(toml::parse_file(path));
  if (!cfg.bundle.empty() && cfg.bundle.is_relative()) {
    cfg.bundle = path.parent_path() / cfg.bundle;
  }
  return cfg;
}

std::vector<std::uint64_t> resolve_seeds(const ExperimentConfig& cfg) {
  if (!cfg.seeds.empty()) {
    if (cfg.runs != 0 && cfg.runs != cfg.seeds.size()) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("runs={} but {} seeds were given", cfg.runs, cfg.seeds.size()));
    }
    return cfg.seeds;
  }
  if (cfg.runs == 0) throw Error(ErrorCode::kInvalidArgument, "runs must be >= 1");
  std::vector<std::uint64_t> seeds(cfg.runs);
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = i;
  return seeds;
}

double ci95(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sample_std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return 1.96 * sample_std / std::sqrt(static_cast<double>(values.size()));
}

double run_lp_baseline(const GraphBundle& bundle, const SplitSpec& split, std::size_t k_max) {
  if (split.test.empty()) return 0.0;
  const CsrMatrix t = sym_normalize_with_self_loops(from_edge_list(bundle.n, bundle.edges));
  const auto trace = power_iterate(t, seed_labels(bundle.labels, split.train, bundle.n, bundle.c),
                                   k_max);
  const LabelMatrix& final_step = trace.steps.back();

  std::vector<double> class_counts(bundle.c, 0.0);
  for (NodeIndex node : split.train) class_counts[bundle.labels[node]] += 1.0;
  const ClassIndex majority = argmax(class_counts);

  std::size_t correct = 0;
  for (NodeIndex node : split.test) {
    auto row = final_step.row(node);
    double mass = 0.0;
    for (double v : row) mass += v;
    const ClassIndex predicted = mass < kUnreachableMass ? majority : argmax(row);
    if (predicted == bundle.labels[node]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(split.test.size());
}

double run_mlp_baseline(const GraphBundle& bundle, const SplitSpec& split, const TrainConfig& cfg,
                        std::vector<EpochLog>* log) {
  const auto problem = problem_for(bundle, split, cfg.k_max);
  auto result = train_supervised(problem, cfg);
  const double acc = test_accuracy(result.state.theta, bundle, split);
  if (log != nullptr) *log = std::move(result.log);
  return acc;
}

namespace {

TrainResult fit_static_lp(const GraphBundle& bundle, const SplitSpec& split,
                          const TrainConfig& cfg, double alpha) {
  const auto problem = problem_for(bundle, split, cfg.k_max);
  const auto pseudo = ppr_iterate(problem.transition, problem.trace.steps.front(),
                                  PprConfig{alpha, cfg.k_max});
  return train_static(problem, pseudo, cfg);
}

}  // namespace

double run_static_lp(const GraphBundle& bundle, const SplitSpec& split, const TrainConfig& cfg,
                     double alpha, std::vector<EpochLog>* log) {
  auto result = fit_static_lp(bundle, split, cfg, alpha);
  const double acc = test_accuracy(result.state.theta, bundle, split);
  if (log != nullptr) *log = std::move(result.log);
  return acc;
}

double run_meta_pn(const GraphBundle& bundle, const SplitSpec& split, const TrainConfig& cfg,
                   std::vector<EpochLog>* log) {
  auto result = train(problem_for(bundle, split, cfg.k_max), cfg);
  const double acc = test_accuracy(result.state.theta, bundle, split);
  if (log != nullptr) *log = std::move(result.log);
  return acc;
}

MethodOutcome run_method_detailed(Method method, const GraphBundle& bundle,
                                  const SplitSpec& split, const ExperimentConfig& cfg,
                                  std::uint64_t seed) {
  TrainConfig train_cfg = cfg.train;
  train_cfg.k_max = cfg.k_max;
  train_cfg.rng_seed = seed;
  MethodOutcome outcome;
  switch (method) {
    case Method::kLp:
      outcome.accuracy = run_lp_baseline(bundle, split, cfg.k_max);
      return outcome;
    case Method::kMlp:
      outcome.trained = train_supervised(problem_for(bundle, split, cfg.k_max), train_cfg);
      break;
    case Method::kStaticLp:
      outcome.trained = fit_static_lp(bundle, split, train_cfg, cfg.alpha);
      break;
    case Method::kMetaPn:
      outcome.trained = train(problem_for(bundle, split, cfg.k_max), train_cfg);
      break;
  }
  outcome.accuracy = test_accuracy(outcome.trained->state.theta, bundle, split);
  return outcome;
}

double run_method(Method method, const GraphBundle& bundle, const SplitSpec& split,
                  const ExperimentConfig& cfg, std::uint64_t seed, std::vector<EpochLog>* log) {
  auto outcome = run_method_detailed(method, bundle, split, cfg, seed);
  if (log != nullptr && outcome.trained) *log = std::move(outcome.trained->log);
  return outcome.accuracy;
}

RunResult run_experiment(const ExperimentConfig& cfg, const GraphBundle& bundle) {
  RunResult result;
  result.method = cfg.method;
  result.dataset = cfg.dataset.empty() ? bundle.name : cfg.dataset;
  result.shots = cfg.shots;
  result.k_max = cfg.k_max;
  result.seeds = resolve_seeds(cfg);

  const std::size_t runs = result.seeds.size();
  std::vector<double> accuracies(runs, 0.0);
  std::vector<std::vector<EpochLog>> logs(runs);
  std::vector<std::exception_ptr> errors(runs);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < runs; i = next++) {
      try {
        const auto split = sample_kshot_split(bundle, cfg.shots, cfg.val_per_class, result.seeds[i]);
        accuracies[i] = run_method(cfg.method, bundle, split, cfg, result.seeds[i], &logs[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::clamp<std::size_t>(cfg.jobs, 1, runs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }

  for (std::size_t i = 0; i < runs; ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const Error& e) {
      throw Error(e.code(), fmt::format("{} run with seed {} failed: {}", to_string(cfg.method),
                                        result.seeds[i], e.what()));
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("{} run with seed {} failed: {}", to_string(cfg.method),
                              result.seeds[i], e.what()));
    }
  }

  for (double a : accuracies) result.accuracies.push_back(100.0 * a);
  double total = 0.0;
  for (double a : result.accuracies) total += a;
  result.mean = total / static_cast<double>(runs);
  result.ci95 = ci95(result.accuracies);

  if (cfg.log_dir) {
    fs::create_directories(*cfg.log_dir);
    for (std::size_t i = 0; i < runs; ++i) {
      if (logs[i].empty()) continue;
      std::ofstream out(*cfg.log_dir / log_file_name(result, result.seeds[i]), std::ios::trunc);
      for (const auto& entry : logs[i]) out << to_json_line(entry) << '\n';
    }
  }
  if (cfg.results_csv) append_csv(*cfg.results_csv, {result});
  if (cfg.results_jsonl) append_jsonl(*cfg.results_jsonl, {result});
  return result;
}

RunResult run_experiment(const ExperimentConfig& cfg) {
  return run_experiment(cfg, load_bundle(cfg.bundle));
}

std::vector<RunResult> ablate_k(const ExperimentConfig& cfg, const GraphBundle& bundle) {
  const std::vector<Method> methods =
      cfg.methods.empty() ? std::vector<Method>{cfg.method} : cfg.methods;
  const std::vector<std::size_t> ks =
      cfg.k_values.empty() ? std::vector<std::size_t>{cfg.k_max} : cfg.k_values;
  for (Method m : methods) {
    if (m != Method::kMetaPn && m != Method::kStaticLp) {
      throw Error(ErrorCode::kInvalidArgument,
                  "K ablation supports meta-pn and static-lp, got " + to_string(m));
    }
  }
  std::vector<RunResult> table;
  for (Method m : methods) {
    for (std::size_t k : ks) {
      ExperimentConfig cell = cfg;
      cell.method = m;
      cell.k_max = k;
      cell.train.k_max = k;
      table.push_back(run_experiment(cell, bundle));
    }
  }
  return table;
}

std::string csv_header() { return "method,dataset,shots,k,runs,mean,ci95"; }

std::string to_csv_row(const RunResult& r) {
  return fmt::format("{},{},{},{},{},{:.2f},{:.2f}", to_string(r.method), r.dataset, r.shots,
                     r.k_max, r.accuracies.size(), r.mean, r.ci95);
}

std::string to_json_line(const RunResult& r) {
  nlohmann::ordered_json j;
  j["method"] = to_string(r.method);
  j["dataset"] = r.dataset;
  j["shots"] = r.shots;
  j["k"] = r.k_max;
  j["runs"] = r.accuracies.size();
  j["seeds"] = r.seeds;
  j["accuracies"] = r.accuracies;
  j["mean"] = r.mean;
  j["ci95"] = r.ci95;
  return j.dump();
}

void append_csv(const fs::path& path, const std::vector<RunResult>& results) {
  const bool needs_header = !fs::exists(path) || fs::file_size(path) == 0;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error(ErrorCode::kIo, "cannot append to " + path.string());
  if (needs_header) out << csv_header() << '\n';
  for (const auto& r : results) out << to_csv_row(r) << '\n';
}

void append_jsonl(const fs::path& path, const std::vector<RunResult>& results) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error(ErrorCode::kIo, "cannot append to " + path.string());
  for (const auto& r : results) out << to_json_line(r) << '\n';
}

}  // namespace metapn
