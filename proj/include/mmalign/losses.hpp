#pragma once

#include "mmalign/autodiff.hpp"
#include "mmalign/tensor.hpp"

namespace mmalign::losses {

// Training weights. Fixed defaults: lambda for the field-smoothness term,
// alpha for the synthesis-based registration term, beta for the adversarial
// term, eta the learning rate.
struct LossWeights {
  double lambda_smooth = 1000.0;
  double alpha_reg = 0.1;
  double beta_adv = 0.01;
  double learning_rate = 0.0001;
};

struct SsimParams {
  int window = 7;
  double k1 = 0.01;
  double k2 = 0.03;
  double sigma = 1.5;  // Gaussian window width
};

// Mean local SSIM over Gaussian-weighted sliding windows (valid region).
// Graph version: a, b are [n,1,h,w]; returns a scalar Var.
ag::Var ssim(const ag::Var& a, const ag::Var& b, double data_range, const SsimParams& p = {});
// Plain version on [h,w] / [1,h,w] tensors.
double ssim(const Tensor& a, const Tensor& b, double data_range, const SsimParams& p = {});

ag::Var reconstruction_loss(const ag::Var& estimate, const ag::Var& target, double data_range,
                            const SsimParams& p = {});
double reconstruction_loss(const Tensor& estimate, const Tensor& target, double data_range,
                           const SsimParams& p = {});

// 0.5*mean|tgt - sa| + 0.5*mean|tgt - as|.
ag::Var registration_loss(const ag::Var& target, const ag::Var& synth_aligned,
                          const ag::Var& aligned_synth);
double registration_loss(const Tensor& target, const Tensor& synth_aligned,
                         const Tensor& aligned_synth);

// Hinge adversarial pair from discriminator scores (scalars):
//   loss_d = max(0, 1-d_real) + 0.5*max(0, 1+d_sa) + 0.5*max(0, 1+d_as)
//   loss_g = -0.5*d_sa - 0.5*d_as
//   raw    = d_real - 0.5*d_sa - 0.5*d_as   (logged, not optimized)
struct AdversarialLosses {
  ag::Var loss_d;
  ag::Var loss_g;
  double raw = 0.0;
};
AdversarialLosses adversarial_losses(const ag::Var& d_real, const ag::Var& d_fake_sa,
                                     const ag::Var& d_fake_as);

enum class Regime { kSingleModal, kMultiModal, kProposed, kRecOnly, kRegOnlyStage1, kRegOnlyStage2 };

// L_rec + lambda*L_smooth + alpha*L_reg, with regime-dependent terms:
// rec_only drops the registration term, reg_only stage 1 drops the
// reconstruction term.
double total_recon_objective(double l_rec, double l_smooth, double l_reg,
                             const LossWeights& weights, Regime regime);

// alpha*L_reg + beta*loss_g.
double total_synth_objective(double l_reg, double l_adv_g, const LossWeights& weights);

}  // namespace mmalign::losses
