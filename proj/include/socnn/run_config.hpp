#pragma once

#include <cstdint>
#include <string>

#include "socnn/data.hpp"
#include "socnn/geometry.hpp"
#include "socnn/socnn.hpp"

namespace socnn {

// Flat key = value run configuration ('#' starts a comment). Unknown keys and
// out-of-range values raise ConfigError naming the offending key.
struct RunConfig {
  Task task = Task::kClassification;
  std::string plan = "default";  // default | tiny
  int num_points = 256;
  int k = 16;

  // dataset generation
  int n_train = 600;
  int n_val = 0;
  int n_test = 120;
  double noise_sigma = 0.02;
  uint64_t data_seed = 7;

  // training
  int epochs = 30;
  int batch_size = 32;
  double lr = 1e-3;
  double lr_min = 0.0;
  uint64_t seed = 1;
  int votes = 1;
  double dropout_rate = 0.5;

  // ablation switches
  bool enable_mp = true;
  bool enable_intra = true;
  bool enable_inter = true;
  std::string knn_space = "feature";  // feature | coordinate

  // augmentation
  bool augment = true;
  double aug_scale_lo = 2.0 / 3.0;
  double aug_scale_hi = 1.5;
  double aug_translate = 0.2;
  double aug_jitter_sigma = 0.01;
  double aug_jitter_clip = 0.05;

  // numerics
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;
  double lrelu_slope = 0.2;
  int precision = 32;  // 32 | 64

  void validate() const;

  SOCNNConfig socnn_config() const;
  TrainOptions train_options() const;
  AugmentationSpec augmentation_spec() const;
};

RunConfig parse_run_config_text(const std::string& text);
RunConfig load_run_config(const std::string& path);

}  // namespace socnn
