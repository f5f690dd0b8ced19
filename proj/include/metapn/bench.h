#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "metapn/bundle.h"
#include "metapn/meta_trainer.h"
#include "metapn/toml_lite.h"

namespace metapn {

enum class Method { kMetaPn, kLp, kMlp, kStaticLp };

std::string to_string(Method method);
Method parse_method(const std::string& name);

struct ExperimentConfig {
  std::filesystem::path bundle;
  std::string dataset;                 // defaults to the bundle name
  Method method = Method::kMetaPn;
  std::vector<Method> methods;         // ablate-k only
  std::size_t shots = 5;
  std::size_t k_max = 10;
  std::vector<std::size_t> k_values;   // ablate-k only
  double alpha = 0.1;                  // teleport probability for Static-LP
  std::size_t runs = 10;
  std::vector<std::uint64_t> seeds;    // empty: 0 .. runs-1
  std::size_t val_per_class = 30;
  std::size_t jobs = 1;                // seeds trained concurrently
  TrainConfig train;

  std::optional<std::filesystem::path> results_csv;
  std::optional<std::filesystem::path> results_jsonl;
  std::optional<std::filesystem::path> log_dir;
};

// Reads top-level experiment keys plus a [train] table. Unknown keys are errors.
ExperimentConfig config_from_toml(const toml::Document& doc);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Seeds actually used, checking runs == len(seeds) when both are given.
std::vector<std::uint64_t> resolve_seeds(const ExperimentConfig& cfg);

struct RunResult {
  Method method = Method::kMetaPn;
  std::string dataset;
  std::size_t shots = 0;
  std::size_t k_max = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;  // percent, one per seed
  double mean = 0.0;
  double ci95 = 0.0;
};

// 1.96 * sample_std / sqrt(runs); zero for a single run.
double ci95(const std::vector<double>& values);

// Test accuracy in [0, 1] of argmax over K-step propagated labels. Test nodes
// without label mass fall back to the most frequent training class.
double run_lp_baseline(const GraphBundle& bundle, const SplitSpec& split, std::size_t k_max);

double run_mlp_baseline(const GraphBundle& bundle, const SplitSpec& split, const TrainConfig& cfg,
                        std::vector<EpochLog>* log = nullptr);

// MLP trained on personalized-PageRank pseudo-labels with a fixed teleport
// probability, then fine-tuned on the labeled nodes.
double run_static_lp(const GraphBundle& bundle, const SplitSpec& split, const TrainConfig& cfg,
                     double alpha, std::vector<EpochLog>* log = nullptr);

double run_meta_pn(const GraphBundle& bundle, const SplitSpec& split, const TrainConfig& cfg,
                   std::vector<EpochLog>* log = nullptr);

struct MethodOutcome {
  double accuracy = 0.0;              // on split.test, in [0, 1]
  std::optional<TrainResult> trained; // absent for the LP baseline
};

MethodOutcome run_method_detailed(Method method, const GraphBundle& bundle,
                                  const SplitSpec& split, const ExperimentConfig& cfg,
                                  std::uint64_t seed);

// Test accuracy in [0, 1] of `method` on one split.
double run_method(Method method, const GraphBundle& bundle, const SplitSpec& split,
                  const ExperimentConfig& cfg, std::uint64_t seed,
                  std::vector<EpochLog>* log = nullptr);

// Fresh split and fresh initialization per seed. Writes results/logs when the
// corresponding paths are configured.
RunResult run_experiment(const ExperimentConfig& cfg, const GraphBundle& bundle);
RunResult run_experiment(const ExperimentConfig& cfg);

// One run_experiment per (method, K), methods outer, K inner.
std::vector<RunResult> ablate_k(const ExperimentConfig& cfg, const GraphBundle& bundle);

std::string csv_header();
std::string to_csv_row(const RunResult& result);
std::string to_json_line(const RunResult& result);

// Appends rows, writing the header first when the file is new or empty.
void append_csv(const std::filesystem::path& path, const std::vector<RunResult>& results);
void append_jsonl(const std::filesystem::path& path, const std::vector<RunResult>& results);

}  // namespace metapn
