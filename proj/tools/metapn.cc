// metapn: dataset utilities and few-shot node classification benchmarks.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "metapn/bench.h"
#include "metapn/checkpoint.h"
#include "metapn/error.h"

namespace fs = std::filesystem;
using namespace metapn;

namespace {

std::vector<std::size_t> parse_k_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const auto value = std::stoull(item, &used);
    if (used != item.size()) throw Error(ErrorCode::kInvalidArgument, "bad K value '" + item + "'");
    out.push_back(value);
  }
  if (out.empty()) throw Error(ErrorCode::kInvalidArgument, "--k needs at least one value");
  return out;
}

// Output locations: explicit --out-dir wins, then config paths, then the cwd.
void apply_outputs(ExperimentConfig& cfg, const std::string& out_dir) {
  if (!out_dir.empty()) {
    const fs::path dir(out_dir);
    cfg.results_csv = dir / "results.csv";
    cfg.results_jsonl = dir / "results.jsonl";
    cfg.log_dir = dir / "logs";
    return;
  }
  if (!cfg.results_csv) cfg.results_csv = "results.csv";
  if (!cfg.results_jsonl) cfg.results_jsonl = "results.jsonl";
  if (!cfg.log_dir) cfg.log_dir = "logs";
}

int cmd_validate(const std::string& dir) {
  const auto bundle = load_bundle(dir);
  nlohmann::ordered_json report = {{"name", bundle.name}, {"n", bundle.n},
                                   {"m", bundle.edges.size()}, {"f", bundle.f}, {"c", bundle.c}};
  std::cout << report.dump() << '\n';
  return 0;
}

int cmd_synth(const SbmSpec& spec, const std::string& out) {
  const auto bundle = generate_sbm(spec);
  store_bundle(bundle, out);
  nlohmann::ordered_json report = {{"out", out}, {"n", bundle.n}, {"m", bundle.edges.size()},
                                   {"f", bundle.f}, {"c", bundle.c}};
  std::cout << report.dump() << '\n';
  return 0;
}

int cmd_train(ExperimentConfig cfg, const std::string& bundle_dir, const std::string& method,
              std::size_t shots, std::uint64_t seed, const std::string& checkpoint,
              const std::string& log_path) {
  if (!bundle_dir.empty()) cfg.bundle = bundle_dir;
  if (!method.empty()) cfg.method = parse_method(method);
  if (shots != 0) cfg.shots = shots;
  const auto bundle = load_bundle(cfg.bundle);
  const auto split = sample_kshot_split(bundle, cfg.shots, cfg.val_per_class, seed);
  const auto outcome = run_method_detailed(cfg.method, bundle, split, cfg, seed);

  nlohmann::ordered_json report = {{"method", to_string(cfg.method)},
                                   {"dataset", cfg.dataset.empty() ? bundle.name : cfg.dataset},
                                   {"shots", cfg.shots},
                                   {"k", cfg.k_max},
                                   {"seed", seed},
                                   {"test_acc", 100.0 * outcome.accuracy}};
  if (outcome.trained) {
    report["best_epoch"] = outcome.trained->best_epoch;
    report["epochs"] = outcome.trained->log.size();
    if (!checkpoint.empty()) {
      auto tensors = to_tensors(outcome.trained->state.theta);
      if (cfg.method == Method::kMetaPn) {
        auto phi = to_tensors(outcome.trained->state.phi);
        tensors.insert(tensors.end(), phi.begin(), phi.end());
      }
      save_checkpoint(checkpoint, tensors);
    }
    if (!log_path.empty()) {
      std::ofstream out(log_path, std::ios::trunc);
      for (const auto& entry : outcome.trained->log) out << to_json_line(entry) << '\n';
    }
  }
  std::cout << report.dump() << '\n';
  return 0;
}

int cmd_bench(ExperimentConfig cfg) {
  const auto result = run_experiment(cfg);
  std::cout << to_json_line(result) << '\n';
  std::cerr << fmt::format("{} {} {}-shot K={}: {:.2f} +/- {:.2f}\n", to_string(result.method),
                           result.dataset, result.shots, result.k_max, result.mean, result.ci95);
  return 0;
}

int cmd_ablate(ExperimentConfig cfg, const std::string& k_list) {
  if (!k_list.empty()) cfg.k_values = parse_k_list(k_list);
  if (cfg.methods.empty()) cfg.methods = {Method::kMetaPn, Method::kStaticLp};
  const auto bundle = load_bundle(cfg.bundle);
  const auto table = ablate_k(cfg, bundle);
  std::cout << csv_header() << '\n';
  for (const auto& row : table) std::cout << to_csv_row(row) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-learned label propagation for few-shot node classification"};
  app.require_subcommand(1);

  std::string validate_dir;
  auto* validate_cmd = app.add_subcommand("bundle-validate", "Load and validate a graph bundle");
  validate_cmd->add_option("dir", validate_dir, "Bundle directory")->required();

  SbmSpec sbm;
  std::string sbm_out;
  auto* synth_cmd = app.add_subcommand("synth-sbm", "Write a stochastic block model bundle");
  synth_cmd->add_option("--n", sbm.n, "Number of nodes")->capture_default_str();
  synth_cmd->add_option("--blocks", sbm.blocks, "Number of blocks (classes)")->capture_default_str();
  synth_cmd->add_option("--p-in", sbm.p_in, "Within-block edge probability")->capture_default_str();
  synth_cmd->add_option("--p-out", sbm.p_out, "Between-block edge probability")->capture_default_str();
  synth_cmd->add_option("--sigma", sbm.feature_noise_sigma, "Feature noise std")->capture_default_str();
  synth_cmd->add_option("--seed", sbm.seed, "RNG seed")->capture_default_str();
  synth_cmd->add_option("--out", sbm_out, "Output directory")->required();

  std::string config_path;
  std::string bundle_dir;
  std::string method;
  std::size_t shots = 0;
  std::uint64_t seed = 0;
  std::string checkpoint;
  std::string log_path;
  auto* train_cmd = app.add_subcommand("train", "Train and evaluate one method on one split");
  train_cmd->add_option("--bundle", bundle_dir, "Bundle directory");
  train_cmd->add_option("--method", method, "meta-pn, lp, mlp or static-lp");
  train_cmd->add_option("--shots", shots, "Labeled nodes per class");
  train_cmd->add_option("--config", config_path, "TOML experiment config");
  train_cmd->add_option("--seed", seed, "Split and initialization seed")->capture_default_str();
  train_cmd->add_option("--checkpoint", checkpoint, "Write trained parameters (MPN1 format)");
  train_cmd->add_option("--log", log_path, "Write the per-epoch training log (JSON lines)");

  std::string out_dir;
  auto* bench_cmd = app.add_subcommand("bench", "Multi-seed benchmark of one method");
  bench_cmd->add_option("--config", config_path, "TOML experiment config")->required();
  bench_cmd->add_option("--out-dir", out_dir, "Directory for results.csv, results.jsonl, logs/");

  std::string k_list;
  auto* ablate_cmd = app.add_subcommand("ablate-k", "Sweep the number of propagation steps");
  ablate_cmd->add_option("--config", config_path, "TOML experiment config")->required();
  ablate_cmd->add_option("--k", k_list, "Comma-separated K values, e.g. 1,2,5,10");
  ablate_cmd->add_option("--out-dir", out_dir, "Directory for results.csv, results.jsonl, logs/");

  CLI11_PARSE(app, argc, argv);

  try {
    if (validate_cmd->parsed()) return cmd_validate(validate_dir);
    if (synth_cmd->parsed()) return cmd_synth(sbm, sbm_out);

    ExperimentConfig cfg;
    if (!config_path.empty()) cfg = load_experiment_config(config_path);
    if (train_cmd->parsed()) {
      if (bundle_dir.empty() && cfg.bundle.empty()) {
        throw Error(ErrorCode::kInvalidArgument, "train needs --bundle or a config with bundle");
      }
      return cmd_train(cfg, bundle_dir, method, shots, seed, checkpoint, log_path);
    }
    apply_outputs(cfg, out_dir);
    if (bench_cmd->parsed()) return cmd_bench(cfg);
    if (ablate_cmd->parsed()) return cmd_ablate(cfg, k_list);
  } catch (const std::exception& e) {
    std::cerr << "metapn: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
