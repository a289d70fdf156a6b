#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mmalign/config.hpp"
#include "mmalign/data.hpp"
#include "mmalign/kspace.hpp"
#include "mmalign/losses.hpp"
#include "mmalign/models.hpp"

namespace mmalign::training {

// Adam over one parameter group. Gradients are harvested from the graph
// into a pending buffer (possibly from several backward passes) and applied
// in one step. Zero pending gradient with zero moments moves nothing.
class AdamGroup {
 public:
  AdamGroup() = default;
  AdamGroup(models::ParamList params, double lr);

  void harvest();  // pending += current grads on the params
  void step();     // apply update from pending, clear pending
  bool empty() const { return params_.empty(); }

 private:
  models::ParamList params_;
  std::vector<Tensor> pending_, m_, v_;
  double lr_ = 1e-4;
  std::int64_t t_ = 0;
};

struct TrainConfig {
  models::TrainingMode mode = models::TrainingMode::kProposed;
  config::MaskConfig mask;
  losses::LossWeights weights;
  int batch_size = 4;
  std::int64_t max_iterations = 2000;
  int validation_interval = 100;
  bool augment = true;
  double augment_sigma = 1.0;
  std::uint64_t seed = 0;
  std::string dataset_root;
  std::string out_dir;  // checkpoints + training log
  models::ModelSizes sizes;

  static TrainConfig from_experiment(const config::ExperimentConfig& c);
};

struct StepRecord {
  std::int64_t iter = 0;
  double l_rec = 0.0, l_smooth = 0.0, l_reg = 0.0;
  double l_adv_raw = 0.0, loss_d = 0.0, loss_g = 0.0;

  std::string to_json_line() const;
};

// Sampling mask used for one training sample / eval slice. Equispaced masks
// are a pure function of the config; random masks draw a fresh pattern per
// training sample and a fixed per-slice pattern at evaluation time.
kspace::SamplingMask mask_for_training(const config::MaskConfig& mask, int width,
                                       std::uint64_t seed, std::int64_t iter, int slot);
kspace::SamplingMask mask_for_eval(const config::MaskConfig& mask, int width, std::uint64_t seed,
                                   const std::string& study_id, int slice_index);

// Builds the measured k-space for a pair (coil data when present, otherwise
// the real target embedded as a complex image).
kspace::KSpaceData acquire(const data::SlicePair& pair, const kspace::SamplingMask& mask);

struct InferenceOutput {
  Tensor magnitude;    // [h,w] reconstructed target magnitude
  Tensor zero_filled;  // [h,w] zero-filling baseline magnitude
  std::optional<Tensor> field;  // [2,h,w] when the bundle aligns
};

// Deterministic forward pass of a bundle on one pair (evaluation mode).
InferenceOutput infer_pair(const models::ModelBundle& bundle, const data::SlicePair& pair,
                           const kspace::SamplingMask& mask);

// One optimization step over a batch, following the joint training scheme:
// theta from the reconstruction loss; omega from reconstruction + smoothness
// + registration; rho from registration + generator hinge; gamma from the
// discriminator hinge. Modes drop terms and updates as configured.
class Trainer {
 public:
  Trainer(models::ModelBundle& bundle, const TrainConfig& cfg);

  StepRecord train_step(const std::vector<data::SlicePair>& batch);
  losses::Regime regime() const;
  const TrainConfig& config() const { return cfg_; }

 private:
  void freeze_alignment();

  models::ModelBundle& bundle_;
  TrainConfig cfg_;
  AdamGroup theta_, omega_, rho_, gamma_;
  bool alignment_frozen_ = false;
};

struct TrainResult {
  std::string best_checkpoint;
  std::string final_checkpoint;
  std::string log_path;
  double best_val_ssim = 0.0;
  std::int64_t best_iteration = -1;
  std::vector<StepRecord> log;
};

TrainResult train(const TrainConfig& cfg);

// Mean SSIM of the bundle's reconstructions over a list of pairs.
double validation_ssim(const models::ModelBundle& bundle, const std::vector<data::SlicePair>& pairs,
                       const config::MaskConfig& mask, std::uint64_t seed);

}  // namespace mmalign::training
