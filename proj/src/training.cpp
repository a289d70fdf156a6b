#include "mmalign/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mmalign/fft.hpp"
#include "mmalign/rng.hpp"

namespace mmalign::training {

namespace fs = std::filesystem;
using ag::Var;

namespace {

constexpr std::uint64_t kMaskStream = 0x6d61736bULL;      // "mask"
constexpr std::uint64_t kMaskEvalStream = 0x6d65766cULL;  // "mevl"
constexpr std::uint64_t kAugmentStream = 0x61756721ULL;   // "aug!"
constexpr std::uint64_t kOrderStream = 0x6f726472ULL;     // "ordr"

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Var const_image(const Tensor& hw) {
  return ag::constant(hw.reshaped({1, 1, hw.dim(0), hw.dim(1)}));
}

kspace::CoilSensitivities sensitivities_for(const kspace::KSpaceData& y) {
  if (y.coil_count == 1) {
    kspace::CoilSensitivities s;
    s.maps = Tensor({1, 2, y.height(), y.width()});
    const std::int64_t plane = static_cast<std::int64_t>(y.height()) * y.width();
    for (std::int64_t i = 0; i < plane; ++i) s.maps[i] = 1.0;
    return s;
  }
  return kspace::estimate_sensitivities(y);
}

}  // namespace

// ------------------------------------------------------------------ Adam

AdamGroup::AdamGroup(models::ParamList params, double lr) : params_(std::move(params)), lr_(lr) {
  pending_.reserve(params_.size());
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    pending_.emplace_back(p.var->value.shape());
    m_.emplace_back(p.var->value.shape());
    v_.emplace_back(p.var->value.shape());
  }
}

void AdamGroup::harvest() {
  for (size_t i = 0; i < params_.size(); ++i) {
    const auto& node = params_[i].var;
    if (node->grad_allocated) pending_[i].add_scaled(node->grad, 1.0);
  }
}

void AdamGroup::step() {
  ++t_;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].var->value;
    Tensor& g = pending_[i];
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    const std::int64_t n = p.numel();
    for (std::int64_t k = 0; k < n; ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] -= lr_ * mhat / (std::sqrt(vhat) + eps);
    }
    g.zero();
  }
}

// ------------------------------------------------------------------ config

TrainConfig TrainConfig::from_experiment(const config::ExperimentConfig& c) {
  TrainConfig t;
  t.mode = models::training_mode_from_string(c.train.mode);
  t.mask = c.mask;
  t.weights = c.train.weights;
  t.batch_size = c.train.batch_size;
  t.max_iterations = c.train.max_iterations;
  t.validation_interval = c.train.validation_interval;
  t.augment = c.train.augment;
  t.augment_sigma = c.train.augment_sigma;
  t.seed = c.seed;
  t.dataset_root = c.dataset.root;
  t.sizes = c.model;
  return t;
}

std::string StepRecord::to_json_line() const {
  nlohmann::json j;
  j["iter"] = iter;
  j["L_rec"] = l_rec;
  j["L_smooth"] = l_smooth;
  j["L_reg"] = l_reg;
  j["L_adv_raw"] = l_adv_raw;
  j["loss_D"] = loss_d;
  j["loss_G"] = loss_g;
  return j.dump();
}

// ------------------------------------------------------------------ masks

kspace::SamplingMask mask_for_training(const config::MaskConfig& mask, int width,
                                       std::uint64_t seed, std::int64_t iter, int slot) {
  const std::uint64_t s =
      mix_seed(seed, kMaskStream + static_cast<std::uint64_t>(iter) * 64 + slot);
  return kspace::make_mask(width, mask.acceleration, mask.pattern, mask.low_freq_fraction, s);
}

kspace::SamplingMask mask_for_eval(const config::MaskConfig& mask, int width, std::uint64_t seed,
                                   const std::string& study_id, int slice_index) {
  const std::uint64_t s =
      mix_seed(seed, kMaskEvalStream + fnv1a(study_id) * 131 + static_cast<std::uint64_t>(slice_index));
  return kspace::make_mask(width, mask.acceleration, mask.pattern, mask.low_freq_fraction, s);
}

kspace::KSpaceData acquire(const data::SlicePair& pair, const kspace::SamplingMask& mask) {
  if (pair.coil_data) return kspace::undersample(*pair.coil_data, mask);
  return kspace::undersample(fft::complex_from_real(pair.target), mask);
}

// ------------------------------------------------------------------ inference

InferenceOutput infer_pair(const models::ModelBundle& bundle, const data::SlicePair& pair,
                           const kspace::SamplingMask& mask) {
  const kspace::KSpaceData y = acquire(pair, mask);
  const kspace::CoilSensitivities sens = sensitivities_for(y);
  const Tensor zf = kspace::zero_fill_reconstruct(y, &sens);
  const Tensor zf_mag3 = fft::magnitude(zf);  // [1,h,w]
  const Tensor zf_mag = zf_mag3.reshaped({pair.height(), pair.width()});

  const Var zf_var = const_image(zf_mag);
  const Var ref_var = const_image(pair.reference);

  InferenceOutput out;
  out.zero_filled = zf_mag;

  Var ref_for_recon;
  if (bundle.mode == models::TrainingMode::kSingleModal) {
    ref_for_recon = nullptr;
  } else if (bundle.mode == models::TrainingMode::kMultiModal) {
    ref_for_recon = ref_var;
  } else {
    const Var phi = bundle.align->forward(zf_var, ref_var);
    out.field = phi->value.reshaped({2, pair.height(), pair.width()});
    ref_for_recon = ag::warp(ref_var, phi);
  }
  const auto recon = bundle.recon.forward(y, sens, ref_for_recon);
  out.magnitude = recon.magnitude->value.reshaped({pair.height(), pair.width()});
  return out;
}

// ------------------------------------------------------------------ trainer

Trainer::Trainer(models::ModelBundle& bundle, const TrainConfig& cfg)
    : bundle_(bundle), cfg_(cfg) {
  const double lr = cfg.weights.learning_rate;
  theta_ = AdamGroup(bundle.recon.params(), lr);
  if (bundle.align) omega_ = AdamGroup(bundle.align->params(), lr);
  if (bundle.synth) rho_ = AdamGroup(bundle.synth->params(), lr);
  if (bundle.disc) gamma_ = AdamGroup(bundle.disc->params(), lr);
}

losses::Regime Trainer::regime() const {
  using models::TrainingMode;
  switch (bundle_.mode) {
    case TrainingMode::kSingleModal: return losses::Regime::kSingleModal;
    case TrainingMode::kMultiModal: return losses::Regime::kMultiModal;
    case TrainingMode::kProposed: return losses::Regime::kProposed;
    case TrainingMode::kRecOnly: return losses::Regime::kRecOnly;
    case TrainingMode::kRegOnly:
      return bundle_.iteration < cfg_.max_iterations / 2 ? losses::Regime::kRegOnlyStage1
                                                         : losses::Regime::kRegOnlyStage2;
  }
  throw std::logic_error("unreachable");
}

void Trainer::freeze_alignment() {
  if (alignment_frozen_ || !bundle_.align) return;
  for (auto& p : bundle_.align->params()) p.var->requires_grad = false;
  alignment_frozen_ = true;
}

StepRecord Trainer::train_step(const std::vector<data::SlicePair>& batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const losses::Regime regime = this->regime();
  using losses::Regime;

  const bool use_align = regime == Regime::kProposed || regime == Regime::kRecOnly ||
                         regime == Regime::kRegOnlyStage1 || regime == Regime::kRegOnlyStage2;
  const bool use_synth = regime == Regime::kProposed || regime == Regime::kRegOnlyStage1;
  const bool run_recon = regime != Regime::kRegOnlyStage1;
  const bool train_theta = run_recon;
  const bool train_omega = regime == Regime::kProposed || regime == Regime::kRecOnly ||
                           regime == Regime::kRegOnlyStage1;

  if (regime == Regime::kRegOnlyStage2) freeze_alignment();
  if (use_synth) bundle_.disc->update_spectral_norm();

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<std::pair<double, Var>> recs, smooths, regs, loss_gs, loss_ds;
  double adv_raw = 0.0;

  for (size_t slot = 0; slot < batch.size(); ++slot) {
    data::SlicePair sample = batch[slot];
    if (cfg_.augment && cfg_.augment_sigma > 0.0) {
      geometry::DeformationSpec aug = geometry::DeformationSpec::defaults_for_size(
          sample.width(), cfg_.augment_sigma,
          mix_seed(cfg_.seed, kAugmentStream + static_cast<std::uint64_t>(bundle_.iteration) * 64 +
                                  slot));
      sample = data::augment(sample, aug);
    }

    const kspace::SamplingMask mask = mask_for_training(cfg_.mask, sample.width(), cfg_.seed,
                                                        bundle_.iteration, static_cast<int>(slot));
    const kspace::KSpaceData y = acquire(sample, mask);
    const kspace::CoilSensitivities sens = sensitivities_for(y);
    const Tensor zf_mag = fft::magnitude(kspace::zero_fill_reconstruct(y, &sens))
                              .reshaped({sample.height(), sample.width()});

    const Var zf_var = const_image(zf_mag);
    const Var ref_var = const_image(sample.reference);
    const Var tgt_var = const_image(sample.target);
    const double data_range = std::max(sample.target.max(), 1e-6);

    Var phi;
    if (use_align) {
      phi = bundle_.align->forward(zf_var, ref_var);
      smooths.emplace_back(inv_b, ag::grad_l2_mean(phi));
    }

    if (run_recon) {
      Var ref_for_recon;
      if (regime == Regime::kMultiModal)
        ref_for_recon = ref_var;
      else if (use_align)
        ref_for_recon = ag::warp(ref_var, phi);
      const auto out = bundle_.recon.forward(y, sens, ref_for_recon);
      recs.emplace_back(inv_b, losses::reconstruction_loss(out.magnitude, tgt_var, data_range));
    }

    if (use_synth) {
      const Var synth_ref = bundle_.synth->forward(ref_var);       // G(x_ref)
      const Var x_sa = ag::warp(synth_ref, phi);                   // S(phi, G(x_ref))
      const Var x_as = bundle_.synth->forward(ag::warp(ref_var, phi));  // G(S(phi, x_ref))
      regs.emplace_back(inv_b, losses::registration_loss(tgt_var, x_sa, x_as));

      const Var d_real = bundle_.disc->forward(tgt_var);
      const Var d_sa = bundle_.disc->forward(x_sa);
      const Var d_as = bundle_.disc->forward(x_as);
      const auto attached = losses::adversarial_losses(ag::mean(d_real), ag::mean(d_sa),
                                                       ag::mean(d_as));
      loss_gs.emplace_back(inv_b, attached.loss_g);
      adv_raw += inv_b * attached.raw;
      // Detached fakes: the discriminator update must not touch the
      // generator or the alignment network.
      const Var d_sa_det = bundle_.disc->forward(ag::detach(x_sa));
      const Var d_as_det = bundle_.disc->forward(ag::detach(x_as));
      const auto detached = losses::adversarial_losses(ag::mean(d_real), ag::mean(d_sa_det),
                                                       ag::mean(d_as_det));
      loss_ds.emplace_back(inv_b, detached.loss_d);
    }
  }

  StepRecord rec;
  rec.iter = bundle_.iteration;

  const Var l_rec = recs.empty() ? nullptr : ag::add_scalarvars(recs);
  const Var l_smooth = smooths.empty() ? nullptr : ag::add_scalarvars(smooths);
  const Var l_reg = regs.empty() ? nullptr : ag::add_scalarvars(regs);
  const Var loss_g = loss_gs.empty() ? nullptr : ag::add_scalarvars(loss_gs);
  const Var loss_d = loss_ds.empty() ? nullptr : ag::add_scalarvars(loss_ds);

  if (l_rec) rec.l_rec = l_rec->value[0];
  if (l_smooth) rec.l_smooth = l_smooth->value[0];
  if (l_reg) rec.l_reg = l_reg->value[0];
  if (loss_g) rec.loss_g = loss_g->value[0];
  if (loss_d) rec.loss_d = loss_d->value[0];
  rec.l_adv_raw = adv_raw;

  for (double v : {rec.l_rec, rec.l_smooth, rec.l_reg, rec.l_adv_raw, rec.loss_d, rec.loss_g})
    if (!std::isfinite(v))
      throw std::runtime_error("train_step: non-finite loss at iteration " +
                               std::to_string(bundle_.iteration) + ": " + rec.to_json_line());

  // Joint objective for theta/omega (and the alpha part of rho).
  std::vector<std::pair<double, Var>> j1;
  switch (regime) {
    case Regime::kSingleModal:
    case Regime::kMultiModal:
    case Regime::kRegOnlyStage2:
      j1 = {{1.0, l_rec}};
      break;
    case Regime::kRecOnly:
      j1 = {{1.0, l_rec}, {cfg_.weights.lambda_smooth, l_smooth}};
      break;
    case Regime::kProposed:
      j1 = {{1.0, l_rec},
            {cfg_.weights.lambda_smooth, l_smooth},
            {cfg_.weights.alpha_reg, l_reg}};
      break;
    case Regime::kRegOnlyStage1:
      j1 = {{cfg_.weights.lambda_smooth, l_smooth}, {cfg_.weights.alpha_reg, l_reg}};
      break;
  }
  ag::backward(ag::add_scalarvars(j1));
  if (train_theta) theta_.harvest();
  if (train_omega) omega_.harvest();
  if (use_synth) rho_.harvest();

  if (use_synth) {
    ag::backward(ag::add_scalarvars({{cfg_.weights.beta_adv, loss_g}}));
    rho_.harvest();
    ag::backward(ag::add_scalarvars({{cfg_.weights.beta_adv, loss_d}}));
    gamma_.harvest();
  }

  if (train_theta) {
    theta_.step();
    bundle_.recon.clamp_dc_weights();
  }
  if (train_omega) omega_.step();
  if (use_synth) {
    rho_.step();
    gamma_.step();
  }

  ++bundle_.iteration;
  return rec;
}

// ------------------------------------------------------------------ loop

double validation_ssim(const models::ModelBundle& bundle, const std::vector<data::SlicePair>& pairs,
                       const config::MaskConfig& mask, std::uint64_t seed) {
  if (pairs.empty()) throw std::invalid_argument("validation_ssim: empty pair list");
  double total = 0.0;
  for (const auto& pair : pairs) {
    const kspace::SamplingMask m =
        mask_for_eval(mask, pair.width(), seed, pair.study_id, pair.slice_index);
    const InferenceOutput out = infer_pair(bundle, pair, m);
    total += losses::ssim(out.magnitude, pair.target, std::max(pair.target.max(), 1e-6));
  }
  return total / static_cast<double>(pairs.size());
}

TrainResult train(const TrainConfig& cfg) {
  const data::Dataset dataset = data::Dataset::open(cfg.dataset_root);
  std::vector<data::SlicePair> train_pairs, val_pairs;
  for (const auto& [study, slice] : dataset.slices_of("train"))
    train_pairs.push_back(dataset.load(study, slice));
  for (const auto& [study, slice] : dataset.slices_of("val"))
    val_pairs.push_back(dataset.load(study, slice));
  if (train_pairs.empty()) throw std::runtime_error("train: dataset has no training pairs");

  fs::create_directories(cfg.out_dir);
  models::ModelBundle bundle = models::ModelBundle::make(cfg.mode, cfg.sizes, cfg.seed);
  Trainer trainer(bundle, cfg);

  TrainResult result;
  result.best_checkpoint = (fs::path(cfg.out_dir) / "best.ckpt").string();
  result.final_checkpoint = (fs::path(cfg.out_dir) / "final.ckpt").string();
  result.log_path = (fs::path(cfg.out_dir) / "train_log.ndjson").string();
  std::ofstream log_file(result.log_path);
  if (!log_file) throw std::runtime_error("train: cannot write " + result.log_path);

  Rng order_rng(mix_seed(cfg.seed, kOrderStream));
  std::vector<size_t> perm(train_pairs.size());
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  order_rng.shuffle(perm);
  size_t cursor = 0;

  const bool reg_only = cfg.mode == models::TrainingMode::kRegOnly;
  bool have_best = false;

  for (std::int64_t iter = 0; iter < cfg.max_iterations; ++iter) {
    std::vector<data::SlicePair> batch;
    batch.reserve(static_cast<size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor >= perm.size()) {
        order_rng.shuffle(perm);
        cursor = 0;
      }
      batch.push_back(train_pairs[perm[cursor++]]);
    }
    const StepRecord rec = trainer.train_step(batch);
    result.log.push_back(rec);
    log_file << rec.to_json_line() << "\n";

    const bool last = iter + 1 == cfg.max_iterations;
    if ((iter + 1) % cfg.validation_interval == 0 || last) {
      // For two-stage training only stage-2 checkpoints are candidates: the
      // reconstruction network is untrained before the freeze.
      const bool selectable = !reg_only || bundle.iteration > cfg.max_iterations / 2;
      if (selectable && !val_pairs.empty()) {
        const double val = validation_ssim(bundle, val_pairs, cfg.mask, cfg.seed);
        if (!have_best || val > result.best_val_ssim) {
          result.best_val_ssim = val;
          result.best_iteration = bundle.iteration;
          models::save_checkpoint(result.best_checkpoint, bundle, "");
          have_best = true;
        }
      }
    }
  }

  models::save_checkpoint(result.final_checkpoint, bundle, "");
  if (!have_best) {
    models::save_checkpoint(result.best_checkpoint, bundle, "");
    result.best_iteration = bundle.iteration;
  }
  return result;
}

}  // namespace mmalign::training
