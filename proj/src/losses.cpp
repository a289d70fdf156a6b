#include "mmalign/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace mmalign::losses {

namespace {

using ag::Var;

Tensor gaussian_window(int window, double sigma) {
  Tensor k({1, 1, window, window});
  const double c = 0.5 * (window - 1);
  double total = 0.0;
  for (int i = 0; i < window; ++i)
    for (int j = 0; j < window; ++j) {
      const double d2 = (i - c) * (i - c) + (j - c) * (j - c);
      const double v = std::exp(-d2 / (2.0 * sigma * sigma));
      k.at(0, 0, i, j) = v;
      total += v;
    }
  k.scale(1.0 / total);
  return k;
}

Var to_n1hw(const Tensor& t) {
  if (t.ndim() == 2) return ag::constant(t.reshaped({1, 1, t.dim(0), t.dim(1)}));
  if (t.ndim() == 3 && t.dim(0) == 1) return ag::constant(t.reshaped({1, 1, t.dim(1), t.dim(2)}));
  throw std::invalid_argument("losses: expected [h,w] or [1,h,w] image");
}

}  // namespace

ag::Var ssim(const Var& a, const Var& b, double data_range, const SsimParams& p) {
  if (!a->value.same_shape(b->value)) throw std::invalid_argument("ssim: shape mismatch");
  if (a->value.ndim() != 4 || a->value.dim(1) != 1)
    throw std::invalid_argument("ssim: expected [n,1,h,w]");
  if (data_range <= 0.0) throw std::invalid_argument("ssim: data_range must be positive");
  if (p.window > a->value.dim(2) || p.window > a->value.dim(3))
    throw std::invalid_argument("ssim: window larger than image");

  const Var win = ag::constant(gaussian_window(p.window, p.sigma));
  const Var none;  // no bias
  const double c1 = (p.k1 * data_range) * (p.k1 * data_range);
  const double c2 = (p.k2 * data_range) * (p.k2 * data_range);

  auto filt = [&](const Var& x) { return ag::conv2d(x, win, none, 1, 0); };

  const Var mu_a = filt(a);
  const Var mu_b = filt(b);
  const Var mu_aa = ag::mul(mu_a, mu_a);
  const Var mu_bb = ag::mul(mu_b, mu_b);
  const Var mu_ab = ag::mul(mu_a, mu_b);
  const Var sig_a = ag::sub(filt(ag::mul(a, a)), mu_aa);
  const Var sig_b = ag::sub(filt(ag::mul(b, b)), mu_bb);
  const Var sig_ab = ag::sub(filt(ag::mul(a, b)), mu_ab);

  const Var num = ag::mul(ag::add_scalar(ag::mul_scalar(mu_ab, 2.0), c1),
                          ag::add_scalar(ag::mul_scalar(sig_ab, 2.0), c2));
  const Var den = ag::mul(ag::add_scalar(ag::add(mu_aa, mu_bb), c1),
                          ag::add_scalar(ag::add(sig_a, sig_b), c2));
  return ag::mean(ag::div(num, den));
}

double ssim(const Tensor& a, const Tensor& b, double data_range, const SsimParams& p) {
  return ssim(to_n1hw(a), to_n1hw(b), data_range, p)->value[0];
}

ag::Var reconstruction_loss(const Var& estimate, const Var& target, double data_range,
                            const SsimParams& p) {
  return ag::neg(ssim(estimate, target, data_range, p));
}

double reconstruction_loss(const Tensor& estimate, const Tensor& target, double data_range,
                           const SsimParams& p) {
  return -ssim(estimate, target, data_range, p);
}

ag::Var registration_loss(const Var& target, const Var& synth_aligned, const Var& aligned_synth) {
  const Var sa = ag::mean(ag::abs(ag::sub(target, synth_aligned)));
  const Var as = ag::mean(ag::abs(ag::sub(target, aligned_synth)));
  return ag::add_scalarvars({{0.5, sa}, {0.5, as}});
}

double registration_loss(const Tensor& target, const Tensor& synth_aligned,
                         const Tensor& aligned_synth) {
  return registration_loss(to_n1hw(target), to_n1hw(synth_aligned), to_n1hw(aligned_synth))
      ->value[0];
}

AdversarialLosses adversarial_losses(const Var& d_real, const Var& d_fake_sa,
                                     const Var& d_fake_as) {
  if (d_real->value.numel() != 1 || d_fake_sa->value.numel() != 1 ||
      d_fake_as->value.numel() != 1)
    throw std::invalid_argument("adversarial_losses: scalar scores expected");
  AdversarialLosses out;
  const Var h_real = ag::relu(ag::add_scalar(ag::neg(d_real), 1.0));
  const Var h_sa = ag::relu(ag::add_scalar(d_fake_sa, 1.0));
  const Var h_as = ag::relu(ag::add_scalar(d_fake_as, 1.0));
  out.loss_d = ag::add_scalarvars({{1.0, h_real}, {0.5, h_sa}, {0.5, h_as}});
  out.loss_g = ag::add_scalarvars({{-0.5, d_fake_sa}, {-0.5, d_fake_as}});
  out.raw = d_real->value[0] - 0.5 * d_fake_sa->value[0] - 0.5 * d_fake_as->value[0];
  return out;
}

double total_recon_objective(double l_rec, double l_smooth, double l_reg,
                             const LossWeights& weights, Regime regime) {
  switch (regime) {
    case Regime::kSingleModal:
      return l_rec;
    case Regime::kMultiModal:
      return l_rec;
    case Regime::kRecOnly:
      return l_rec + weights.lambda_smooth * l_smooth;
    case Regime::kRegOnlyStage1:
      return weights.lambda_smooth * l_smooth + weights.alpha_reg * l_reg;
    case Regime::kRegOnlyStage2:
      return l_rec;
    case Regime::kProposed:
      return l_rec + weights.lambda_smooth * l_smooth + weights.alpha_reg * l_reg;
  }
  throw std::invalid_argument("total_recon_objective: unknown regime");
}

double total_synth_objective(double l_reg, double l_adv_g, const LossWeights& weights) {
  return weights.alpha_reg * l_reg + weights.beta_adv * l_adv_g;
}

}  // namespace mmalign::losses
