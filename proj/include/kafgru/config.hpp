#pragma once

// Run configuration shared by the CLI, the training harness and checkpoint
// headers. Defaults follow the reference experimental protocol: hidden state
// 100, dictionary of 10 points on [-4, 4], ridge 1e-4, Adam at 1e-3 on
// batches of 32 with gradient norm clipped to 1, validation every 25
// iterations with a patience of 500.

#include <cstddef>
#include <cstdint>
#include <string>

#include <json.hpp>

#include "kafgru/data.hpp"
#include "kafgru/kafgate.hpp"
#include "kafgru/model.hpp"

namespace kafgru {

struct RunConfig {
  std::string dataset = "rmnist";  // rmnist | pmnist | ppmnist
  std::string gate = "kaf";        // standard | kaf | kaf-noresidual
  std::string init = "identity";   // identity | random

  std::size_t hidden_size = 100;
  std::size_t classes = 10;
  std::size_t dict_size = 10;
  double dict_min = -4.0;
  double dict_max = 4.0;
  double epsilon_ridge = 1e-4;
  double random_init_scale = 0.3;
  double min_gamma = 1e-4;

  std::size_t batch_size = 32;
  double lr = 0.001;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  std::size_t eval_every = 25;
  std::size_t patience = 500;        // iterations without improvement
  std::size_t val_count = 10000;     // tail of the training set
  std::size_t max_iterations = 0;    // 0: run until early stopping
  std::size_t train_limit = 0;       // 0: all; smoke-scale subsetting
  std::size_t val_limit = 0;
  std::size_t eval_batch = 1000;     // execution detail, does not affect results

  std::uint64_t weight_seed = 1;
  std::uint64_t shuffle_seed = 1;
  std::uint64_t permutation_seed = 1;

  std::string data_dir;              // empty: use KAFGRU_DATA_DIR
  std::string out_dir = "runs/default";
};

inline SequenceVariant sequence_variant(const RunConfig& cfg) {
  if (cfg.dataset == "rmnist") return SequenceVariant::RowWise;
  if (cfg.dataset == "pmnist") return SequenceVariant::PixelWise;
  if (cfg.dataset == "ppmnist") return SequenceVariant::PermutedPixelWise;
  throw std::invalid_argument("unknown dataset '" + cfg.dataset + "'");
}

inline GateVariant gate_variant(const RunConfig& cfg) {
  GateVariant v;
  if (cfg.gate == "standard") v.kind = GateKind::Standard;
  else if (cfg.gate == "kaf") v.kind = GateKind::KafResidual;
  else if (cfg.gate == "kaf-noresidual") v.kind = GateKind::KafNoResidual;
  else throw std::invalid_argument("unknown gate '" + cfg.gate + "'");
  if (cfg.init == "identity") v.init = GateInit::Identity;
  else if (cfg.init == "random") v.init = GateInit::Random;
  else throw std::invalid_argument("unknown init '" + cfg.init + "'");
  return v;
}

inline ModelLayout model_layout(const RunConfig& cfg, std::size_t input_size) {
  ModelLayout layout;
  layout.input_size = input_size;
  layout.hidden_size = cfg.hidden_size;
  layout.classes = cfg.classes;
  layout.dict_size = cfg.dict_size;
  layout.dict_min = cfg.dict_min;
  layout.dict_max = cfg.dict_max;
  layout.epsilon_ridge = cfg.epsilon_ridge;
  layout.random_init_scale = cfg.random_init_scale;
  layout.bn_momentum = cfg.bn_momentum;
  layout.bn_eps = cfg.bn_eps;
  layout.gate = gate_variant(cfg);
  return layout;
}

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"dataset", c.dataset},
                     {"gate", c.gate},
                     {"init", c.init},
                     {"hidden_size", c.hidden_size},
                     {"classes", c.classes},
                     {"dict_size", c.dict_size},
                     {"dict_min", c.dict_min},
                     {"dict_max", c.dict_max},
                     {"epsilon_ridge", c.epsilon_ridge},
                     {"random_init_scale", c.random_init_scale},
                     {"min_gamma", c.min_gamma},
                     {"batch_size", c.batch_size},
                     {"lr", c.lr},
                     {"adam_beta1", c.adam_beta1},
                     {"adam_beta2", c.adam_beta2},
                     {"adam_eps", c.adam_eps},
                     {"clip_norm", c.clip_norm},
                     {"bn_momentum", c.bn_momentum},
                     {"bn_eps", c.bn_eps},
                     {"eval_every", c.eval_every},
                     {"patience", c.patience},
                     {"val_count", c.val_count},
                     {"max_iterations", c.max_iterations},
                     {"train_limit", c.train_limit},
                     {"val_limit", c.val_limit},
                     {"eval_batch", c.eval_batch},
                     {"weight_seed", c.weight_seed},
                     {"shuffle_seed", c.shuffle_seed},
                     {"permutation_seed", c.permutation_seed},
                     {"data_dir", c.data_dir},
                     {"out_dir", c.out_dir}};
}

// Only keys present in the JSON are applied, so a config file can override a
// subset of the defaults and command-line flags can override the file.
inline void apply_json_overrides(RunConfig& c, const nlohmann::json& j) {
  c.dataset = j.value("dataset", c.dataset);
  c.gate = j.value("gate", c.gate);
  c.init = j.value("init", c.init);
  c.hidden_size = j.value("hidden_size", c.hidden_size);
  c.classes = j.value("classes", c.classes);
  c.dict_size = j.value("dict_size", c.dict_size);
  c.dict_min = j.value("dict_min", c.dict_min);
  c.dict_max = j.value("dict_max", c.dict_max);
  c.epsilon_ridge = j.value("epsilon_ridge", c.epsilon_ridge);
  c.random_init_scale = j.value("random_init_scale", c.random_init_scale);
  c.min_gamma = j.value("min_gamma", c.min_gamma);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
  c.bn_eps = j.value("bn_eps", c.bn_eps);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.patience = j.value("patience", c.patience);
  c.val_count = j.value("val_count", c.val_count);
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.train_limit = j.value("train_limit", c.train_limit);
  c.val_limit = j.value("val_limit", c.val_limit);
  c.eval_batch = j.value("eval_batch", c.eval_batch);
  c.weight_seed = j.value("weight_seed", c.weight_seed);
  c.shuffle_seed = j.value("shuffle_seed", c.shuffle_seed);
  c.permutation_seed = j.value("permutation_seed", c.permutation_seed);
  c.data_dir = j.value("data_dir", c.data_dir);
  c.out_dir = j.value("out_dir", c.out_dir);
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  c = RunConfig{};
  apply_json_overrides(c, j);
}

}  // namespace kafgru
