#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "brsda/data.hpp"

namespace brsda {

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | blobs | archive
  SyntheticSpec synthetic;
  BlobsSpec blobs;
  std::string archive_path;
};

struct BackboneConfig {
  std::string kind = "cnn_small";  // cnn_small | mlp (resnet18 etc. are
                                   // named extension points, not shipped)
  int feature_dim = 64;
  int estimator_hidden = 0;   // 0 -> feature_dim
  int backbone_hidden = 128;  // mlp backbone only
};

// lambda: drop probability of each semantic direction. u: independent
// (mask, magnitude) draws per feature per step; 0 disables augmentation
// entirely (plain ERM). alpha ramps linearly from 0 to alpha_final over the
// first alpha_ramp_fraction of total epochs, then stays constant.
struct AugmentationConfig {
  double lambda = 0.5;
  int u = 2;
  double alpha_final = 0.5;
  double alpha_ramp_fraction = 0.2;
  std::string recon_input = "masked";  // masked | raw
};

struct TrainSchedule {
  int total_epochs = 30;
  int warmup_epochs = 5;
  double base_lr = 0.001;
  int batch_size = 32;
  double weight_decay = 0.01;
  double clip_norm = 5.0;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  BackboneConfig backbone;
  AugmentationConfig augmentation;
  TrainSchedule schedule;
  std::uint64_t seed = 1;
  std::string output_dir;  // empty: no persistence (in-memory run)

  void validate() const;  // throws ConfigError naming the offending field
};

// Resolution order: built-in defaults <- preset <- config file <- --set
// overrides, each a dotted-path patch.
struct ConfigSource {
  std::string file_path;
  std::string preset;
  std::vector<std::string> overrides;  // "section.key=value"
};

ExperimentConfig resolve_config(const ConfigSource& source);

// Canonical JSON snapshot of a resolved config (keys sorted).
std::string config_to_json_string(const ExperimentConfig& config, int indent = 2);

// 16-hex content digest of the canonical snapshot; embedded in every
// artifact so outputs of different configs are distinguishable.
std::string config_digest(const ExperimentConfig& config);

std::vector<std::string> preset_names();

// Builds the dataset named by the config.
DatasetBundle build_dataset(const DatasetConfig& config);

}  // namespace brsda
