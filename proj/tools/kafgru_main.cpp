// Command-line harness. Subcommands:
//   train          one training run, artifacts under --out
//   eval           accuracy of a saved checkpoint on a dataset split
//   ablate         the four gate configurations across n seeds
//   export-shapes  gate shape tables for plotting
//   export-gammas  per-unit bandwidth values of a trained checkpoint

#include <cstdio>
#include <exception>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kafgru/config.hpp"
#include "kafgru/harness.hpp"

namespace {

// Every protocol value is a flag with the reference default; --config points
// at a JSON file applied before the flags, so flags win over the file.
void add_config_options(CLI::App& app, kafgru::RunConfig& cfg) {
  app.add_option("--dataset", cfg.dataset, "rmnist | pmnist | ppmnist");
  app.add_option("--gate", cfg.gate, "standard | kaf | kaf-noresidual");
  app.add_option("--init", cfg.init, "identity | random");
  app.add_option("--hidden", cfg.hidden_size, "hidden state width");
  app.add_option("--dict-size", cfg.dict_size, "dictionary elements");
  app.add_option("--dict-min", cfg.dict_min, "dictionary lower bound");
  app.add_option("--dict-max", cfg.dict_max, "dictionary upper bound");
  app.add_option("--epsilon-ridge", cfg.epsilon_ridge, "ridge regularizer for identity init");
  app.add_option("--random-init-scale", cfg.random_init_scale, "stddev for random init");
  app.add_option("--min-gamma", cfg.min_gamma, "bandwidth positivity floor");
  app.add_option("--batch", cfg.batch_size, "mini-batch size");
  app.add_option("--lr", cfg.lr, "Adam learning rate");
  app.add_option("--clip-norm", cfg.clip_norm, "global gradient norm bound");
  app.add_option("--bn-momentum", cfg.bn_momentum, "batch norm running-stat momentum");
  app.add_option("--bn-eps", cfg.bn_eps, "batch norm variance epsilon");
  app.add_option("--eval-every", cfg.eval_every, "iterations between validations");
  app.add_option("--patience", cfg.patience, "early-stopping patience in iterations");
  app.add_option("--val-count", cfg.val_count, "training tail held out for validation");
  app.add_option("--max-iterations", cfg.max_iterations, "hard iteration cap (0: none)");
  app.add_option("--train-limit", cfg.train_limit, "restrict training images (0: all)");
  app.add_option("--val-limit", cfg.val_limit, "restrict validation images (0: all)");
  app.add_option("--eval-batch", cfg.eval_batch, "batch size used for evaluation passes");
  app.add_option("--weight-seed", cfg.weight_seed, "weight initialization seed");
  app.add_option("--shuffle-seed", cfg.shuffle_seed, "epoch shuffle seed");
  app.add_option("--permutation-seed", cfg.permutation_seed, "pixel permutation seed");
  app.add_option("--data-dir", cfg.data_dir, "directory with MNIST IDX files");
  app.add_option("--out", cfg.out_dir, "output directory for run artifacts");
}

// Applied before CLI11 parses, so explicit flags override file values.
void apply_config_file(int argc, char** argv, kafgru::RunConfig& cfg) {
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") {
      std::ifstream in(argv[i + 1]);
      if (!in) throw kafgru::DataError(std::string("cannot open config file ") + argv[i + 1]);
      nlohmann::json j;
      in >> j;
      kafgru::apply_json_overrides(cfg, j);
      return;
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GRU training engine with kernel-adaptive flexible gates"};
  app.require_subcommand(1);

  kafgru::RunConfig cfg;
  std::string config_file;

  CLI::App* train = app.add_subcommand("train", "run one training job");
  train->add_option("--config", config_file, "JSON file overriding defaults");
  add_config_options(*train, cfg);
  train->add_flag("--quiet", "suppress progress output");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ckpt_path, split_name = "test", eval_data_dir;
  eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval->add_option("--split", split_name, "train | val | test");
  eval->add_option("--data-dir", eval_data_dir, "override the recorded data directory");

  CLI::App* ablate = app.add_subcommand("ablate", "train all gate variants");
  std::size_t ablate_seeds = 3;
  std::string ablate_out = "runs/ablation";
  ablate->add_option("--config", config_file, "JSON file overriding defaults");
  add_config_options(*ablate, cfg);
  ablate->add_option("--seeds", ablate_seeds, "runs per arm");
  ablate->add_option("--ablation-out", ablate_out, "directory for the ablation artifacts");
  ablate->add_flag("--quiet", "suppress progress output");

  CLI::App* shapes = app.add_subcommand("export-shapes", "gate shape table");
  kafgru::ShapeExportSpec shape_spec;
  bool shapes_random = false;
  shapes->add_option("--out", shape_spec.out_path, "output TSV")->required();
  shapes->add_flag("--random", shapes_random, "sample random coefficients instead of identity init");
  shapes->add_option("--gamma", shape_spec.gamma, "bandwidth for random samples");
  shapes->add_option("--samples", shape_spec.samples, "sampled coefficient rows");
  shapes->add_option("--scale", shape_spec.scale, "stddev of sampled coefficients");
  shapes->add_option("--seed", shape_spec.seed, "sampling seed");
  shapes->add_option("--grid-lo", shape_spec.grid_lo, "grid lower bound");
  shapes->add_option("--grid-hi", shape_spec.grid_hi, "grid upper bound");
  shapes->add_option("--points", shape_spec.points, "grid points");
  shapes->add_option("--dict-size", shape_spec.dict_size, "dictionary elements");
  shapes->add_option("--dict-min", shape_spec.dict_min, "dictionary lower bound");
  shapes->add_option("--dict-max", shape_spec.dict_max, "dictionary upper bound");

  CLI::App* gammas = app.add_subcommand("export-gammas", "bandwidth histogram table");
  std::string gamma_ckpt, gamma_gate = "reset", gamma_out;
  std::size_t gamma_bins = 20;
  gammas->add_option("--checkpoint", gamma_ckpt, "checkpoint file")->required();
  gammas->add_option("--gate", gamma_gate, "update | reset");
  gammas->add_option("--out", gamma_out, "output TSV")->required();
  gammas->add_option("--bins", gamma_bins, "histogram bins");

  try {
    // Config file must be applied before parsing so flags take precedence.
    for (int i = 1; i < argc; ++i) {
      const std::string arg = argv[i];
      if (arg == "train" || arg == "ablate") {
        apply_config_file(argc, argv, cfg);
        break;
      }
    }
    app.parse(argc, argv);

    if (train->parsed()) {
      const kafgru::TrainResult r = kafgru::train(cfg, train->count("--quiet") > 0);
      std::printf("test_accuracy %.6f\n", r.test_accuracy);
      return 0;
    }
    if (eval->parsed()) {
      kafgru::Split split = kafgru::Split::Test;
      if (split_name == "train") split = kafgru::Split::Train;
      else if (split_name == "val") split = kafgru::Split::Val;
      else if (split_name != "test")
        throw std::invalid_argument("unknown split '" + split_name + "'");
      const double acc = kafgru::evaluate(ckpt_path, split, eval_data_dir);
      std::printf("accuracy %.6f\n", acc);
      return 0;
    }
    if (ablate->parsed()) {
      const auto summary =
          kafgru::run_ablation(cfg, ablate_seeds, ablate_out, ablate->count("--quiet") > 0);
      for (const auto& arm : summary.arms)
        std::printf("%-16s mean %.4f stddev %.4f\n", arm.name.c_str(), arm.mean, arm.stddev);
      return 0;
    }
    if (shapes->parsed()) {
      shape_spec.identity = !shapes_random;
      kafgru::export_gate_shapes(shape_spec);
      return 0;
    }
    if (gammas->parsed()) {
      kafgru::export_gamma_histogram(gamma_ckpt, gamma_gate, gamma_out, gamma_bins);
      return 0;
    }
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
