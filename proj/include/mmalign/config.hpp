#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmalign/kspace.hpp"
#include "mmalign/losses.hpp"
#include "mmalign/models.hpp"

namespace mmalign::config {

struct MaskConfig {
  kspace::MaskPattern pattern = kspace::MaskPattern::kEquispaced;
  int acceleration = 4;
  double low_freq_fraction = 0.32;
};

struct DatasetConfig {
  std::string root = "dataset";
  int size = 64;
  int studies_train = 50;
  int studies_val = 10;
  int studies_test = 15;
  int slices_per_study = 4;
  int tissue_count = 7;
  int coil_count = 1;
  double misalignment_sigma = 1.0;  // baked into the stored references
};

struct TrainSection {
  std::string mode = "proposed";
  int batch_size = 4;
  std::int64_t max_iterations = 2000;
  int validation_interval = 100;
  bool augment = true;
  double augment_sigma = 1.0;
  losses::LossWeights weights;
};

struct EvalSection {
  std::string split = "test";
  std::string checkpoint;  // path; empty = resolved by the CLI
  std::vector<double> sweep_sigmas = {0.0, 1.0, 2.0};
};

struct ExperimentConfig {
  std::uint64_t seed = 1234;
  DatasetConfig dataset;
  MaskConfig mask;
  TrainSection train;
  models::ModelSizes model;
  EvalSection eval;

  std::string to_json(int indent = -1) const;
  static ExperimentConfig from_json(const std::string& text);
  static ExperimentConfig load(const std::string& path);

  // Dotted-key override, e.g. "train.mode=proposed" or "seed=7".
  void apply_override(const std::string& key_equals_value);

  // FNV-1a over the canonical dump; names run directories.
  std::string hash() const;
};

}  // namespace mmalign::config
