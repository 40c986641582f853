// Command-line front end: scene simulation, the geometric and learned
// pipelines, training, curve analysis and the attention profile.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "relpose/harness.hpp"
#include "relpose/serialization.hpp"
#include "relpose/simulator.hpp"
#include "relpose/training.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct SimulateArgs {
  std::string config_path;
  int count = 100;
  std::uint64_t seed = 0;
  std::string out_path;
};

struct SolveArgs {
  std::string data_path;
  std::string mode = "geo";
  std::string out_path;
  int threads = 1;
  double sigma_meas = 1.0;
};

struct TrainArgs {
  std::string data_path;
  std::string config_path;
  std::string out_path;
  int threads = 1;
};

struct InferArgs {
  std::string data_path;
  std::string weights_path;
  std::string mode = "fused";
  std::string out_path;
  int threads = 1;
  double sigma_meas = 1.0;
};

struct AnalyzeArgs {
  std::string results_path;
  std::string sort_key = "total_trans_ivar";
  int window = 50;
  std::string out_path;
};

struct AttnProfArgs {
  std::string data_path;
  std::string weights_path;
  std::string out_path;
};

int run_simulate(const SimulateArgs& args) {
  relpose::DatasetTemplate tpl;
  if (!args.config_path.empty()) tpl = relpose::dataset_template_from_json(relpose::json_from_file(args.config_path));
  const auto scenes = relpose::generate_scenes(tpl, args.count, args.seed);
  relpose::write_dataset(args.out_path, scenes);
  std::cout << "wrote " << scenes.size() << " scenes to " << args.out_path << "\n";
  return kExitOk;
}

int run_solve(const SolveArgs& args) {
  const auto mode = relpose::parse_mode(args.mode);
  if (!mode || *mode != relpose::PipelineMode::kGeo) {
    std::cerr << "solve: only --mode geo is supported (use infer for learned modes)\n";
    return kExitUsage;
  }
  relpose::PipelineOptions opts;
  opts.threads = args.threads;
  opts.sigma_meas = args.sigma_meas;
  const auto results = relpose::run_pipeline(args.data_path, std::nullopt, *mode, args.out_path, opts);
  std::cout << "wrote " << results.size() << " rows to " << args.out_path << "\n";
  return kExitOk;
}

int run_train(const TrainArgs& args) {
  relpose::TrainConfig cfg;
  if (!args.config_path.empty()) cfg = relpose::train_config_from_json(relpose::json_from_file(args.config_path));
  if (args.threads > 1) cfg.threads = args.threads;

  const auto scenes = relpose::read_dataset(args.data_path);
  relpose::PipelineOptions opts;
  opts.threads = cfg.threads;
  const auto training = relpose::precompute_training_scenes(scenes, opts);
  relpose::TrainResult result = relpose::train(training, cfg);
  result.weights.median_geo_ivar = relpose::median_geo_inverse_variances(training);
  relpose::write_weights(args.out_path, result.weights, result.epoch_loss);
  std::cout << "trained " << cfg.epochs << " epochs on " << scenes.size() << " scenes; first/last epoch loss "
            << result.epoch_loss.front() << " / " << result.epoch_loss.back() << "\n";
  return kExitOk;
}

int run_infer(const InferArgs& args) {
  const auto mode = relpose::parse_mode(args.mode);
  if (!mode || *mode == relpose::PipelineMode::kGeo) {
    std::cerr << "infer: --mode must be one of dnn|fused|median|no_unc\n";
    return kExitUsage;
  }
  relpose::PipelineOptions opts;
  opts.threads = args.threads;
  opts.sigma_meas = args.sigma_meas;
  const auto results = relpose::run_pipeline(args.data_path, args.weights_path, *mode, args.out_path, opts);
  std::cout << "wrote " << results.size() << " rows to " << args.out_path << "\n";
  return kExitOk;
}

int run_analyze(const AnalyzeArgs& args) {
  const auto& keys = relpose::analyze_sort_keys();
  if (std::find(keys.begin(), keys.end(), args.sort_key) == keys.end()) {
    std::cerr << "analyze: --sort-key must be one of:";
    for (const auto& k : keys) std::cerr << " " << k;
    std::cerr << "\n";
    return kExitUsage;
  }
  const relpose::CsvTable table = relpose::read_csv(args.results_path);
  relpose::write_csv(args.out_path, relpose::analyze(table, args.sort_key, args.window));
  std::cout << "wrote curves to " << args.out_path << "\n";
  return kExitOk;
}

int run_attnprof(const AttnProfArgs& args) {
  const auto scenes = relpose::read_dataset(args.data_path);
  const auto weights = relpose::read_weights(args.weights_path);
  const auto profile = relpose::attention_profile(scenes, weights);
  relpose::write_attention_profile_csv(args.out_path, profile);
  std::cout << "wrote attention profile (" << profile.samples << " samples) to " << args.out_path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-view relative pose estimation with geometric-learned fusion"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "generate a synthetic dataset (JSON Lines)");
  simulate->add_option("--config", sim.config_path, "scene config JSON (axes as scalars or [lo, hi] ranges)");
  simulate->add_option("--count", sim.count, "number of scenes")->required();
  simulate->add_option("--seed", sim.seed, "master seed")->required();
  simulate->add_option("--out", sim.out_path, "output dataset path")->required();

  SolveArgs solve;
  auto* solve_cmd = app.add_subcommand("solve", "run the geometric pipeline");
  solve_cmd->add_option("--data", solve.data_path, "dataset path")->required();
  solve_cmd->add_option("--mode", solve.mode, "must be geo");
  solve_cmd->add_option("--out", solve.out_path, "results CSV path")->required();
  solve_cmd->add_option("--threads", solve.threads, "worker threads");
  solve_cmd->add_option("--sigma-meas", solve.sigma_meas, "measurement noise scale for the information matrix");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train the learned branch with fusion in the loop");
  train_cmd->add_option("--data", train.data_path, "training dataset path")->required();
  train_cmd->add_option("--config", train.config_path, "train config JSON");
  train_cmd->add_option("--out", train.out_path, "output weights path")->required();
  train_cmd->add_option("--threads", train.threads, "worker threads");

  InferArgs infer;
  auto* infer_cmd = app.add_subcommand("infer", "run a learned or fused pipeline");
  infer_cmd->add_option("--data", infer.data_path, "dataset path")->required();
  infer_cmd->add_option("--weights", infer.weights_path, "weights path")->required();
  infer_cmd->add_option("--mode", infer.mode, "dnn|fused|median|no_unc");
  infer_cmd->add_option("--out", infer.out_path, "results CSV path")->required();
  infer_cmd->add_option("--threads", infer.threads, "worker threads");
  infer_cmd->add_option("--sigma-meas", infer.sigma_meas, "measurement noise scale for the information matrix");

  AnalyzeArgs analyze;
  auto* analyze_cmd = app.add_subcommand("analyze", "sort results and smooth error curves");
  analyze_cmd->add_option("--results", analyze.results_path, "results CSV path")->required();
  analyze_cmd->add_option("--sort-key", analyze.sort_key,
                          "total_trans_ivar|total_rot_ivar|h_ratio|phi_forward|inlier_count");
  analyze_cmd->add_option("--window", analyze.window, "trailing moving-average window");
  analyze_cmd->add_option("--out", analyze.out_path, "curves CSV path")->required();

  AttnProfArgs attn;
  auto* attn_cmd = app.add_subcommand("attnprof", "attention-vs-distance profile of a trained model");
  attn_cmd->add_option("--data", attn.data_path, "dataset path")->required();
  attn_cmd->add_option("--weights", attn.weights_path, "weights path")->required();
  attn_cmd->add_option("--out", attn.out_path, "profile CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (simulate->parsed()) return run_simulate(sim);
    if (solve_cmd->parsed()) return run_solve(solve);
    if (train_cmd->parsed()) return run_train(train);
    if (infer_cmd->parsed()) return run_infer(infer);
    if (analyze_cmd->parsed()) return run_analyze(analyze);
    if (attn_cmd->parsed()) return run_attnprof(attn);
  } catch (const relpose::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const relpose::Error& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitUsage;
}
