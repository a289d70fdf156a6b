#include <doctest.h>

#include <cmath>

#include "mmalign/losses.hpp"
#include "mmalign/rng.hpp"
#include "oracles.hpp"

using namespace mmalign;

namespace {

Tensor random_image(int h, int w, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor t({h, w});
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("ssim: identity, constant pair closed form, window errors") {
  Rng rng(51);
  const Tensor a = random_image(16, 16, rng);
  CHECK(losses::ssim(a, a, 1.0) == doctest::Approx(1.0).epsilon(1e-9));

  // a = 0, b = data_range: means (0, L), zero variances ->
  // SSIM = C1 / (L^2 + C1) = k1^2 / (1 + k1^2), independent of L.
  const double L = 2.5;
  const Tensor za({12, 12});
  const Tensor zb = Tensor::full({12, 12}, L);
  const double expect = 1e-4 / (1.0 + 1e-4);
  CHECK(losses::ssim(za, zb, L) == doctest::Approx(expect).epsilon(1e-12));

  CHECK_THROWS(losses::ssim(random_image(5, 5, rng), random_image(5, 5, rng), 1.0));  // window 7 > 5
  CHECK_THROWS(losses::ssim(a, a, 0.0));
}

TEST_CASE("ssim matches the brute-force windowed oracle") {
  Rng rng(52);
  for (int trial = 0; trial < 3; ++trial) {
    const Tensor a = random_image(20, 20, rng);
    const Tensor b = random_image(20, 20, rng);
    CHECK(std::fabs(losses::ssim(a, b, 1.0) - oracle::ssim(a, b, 1.0)) < 1e-6);
  }
}

TEST_CASE("ssim symmetry is exact") {
  Rng rng(53);
  const Tensor a = random_image(14, 14, rng);
  const Tensor b = random_image(14, 14, rng);
  CHECK(losses::ssim(a, b, 1.0) == losses::ssim(b, a, 1.0));
}

TEST_CASE("reconstruction_loss: identity, noise floor, monotonicity") {
  Rng rng(54);
  const Tensor x = random_image(24, 24, rng);
  CHECK(losses::reconstruction_loss(x, x, 1.0) == doctest::Approx(-1.0).epsilon(1e-9));

  // decorrelated noise pair: SSIM near zero
  const Tensor n1 = random_image(32, 32, rng);
  const Tensor n2 = random_image(32, 32, rng);
  CHECK(std::fabs(losses::reconstruction_loss(n1, n2, 1.0)) < 0.2);

  // adding noise never decreases the loss in expectation
  double prev = -1.0;
  for (double level : {0.05, 0.15, 0.4}) {
    double acc = 0.0;
    for (int s = 0; s < 10; ++s) {
      Rng nrng(100 + s);
      Tensor noisy = x;
      for (std::int64_t i = 0; i < noisy.numel(); ++i) noisy[i] += level * nrng.normal();
      acc += losses::reconstruction_loss(noisy, x, 1.0);
    }
    acc /= 10.0;
    CHECK(acc >= prev);
    prev = acc;
  }
}

TEST_CASE("reconstruction_loss gradient vs finite differences") {
  Rng rng(55);
  Tensor base = random_image(12, 12, rng);
  ag::Var est = ag::leaf(base.reshaped({1, 1, 12, 12}), true);
  const ag::Var tgt = ag::constant(random_image(12, 12, rng).reshaped({1, 1, 12, 12}));
  auto build = [&] { return losses::reconstruction_loss(est, tgt, 1.0); };
  ag::Var loss = build();
  ag::backward(loss);
  const Tensor analytic = est->grad;
  const double h = 1e-6;
  for (std::int64_t i = 0; i < est->value.numel(); i += 17) {
    const double orig = est->value[i];
    est->value[i] = orig + h;
    const double up = build()->value[0];
    est->value[i] = orig - h;
    const double down = build()->value[0];
    est->value[i] = orig;
    const double fd = (up - down) / (2.0 * h);
    CHECK(oracle::rel_err(analytic[i], fd, 1e-7) < 1e-3);
  }
}

TEST_CASE("registration_loss: zero, constant offset, brute force") {
  Rng rng(56);
  const Tensor x = random_image(10, 10, rng);
  CHECK(losses::registration_loss(x, x, x) == 0.0);

  Tensor sa = x;
  const double c = 0.34;
  for (std::int64_t i = 0; i < sa.numel(); ++i) sa[i] += c;
  CHECK(losses::registration_loss(x, sa, x) == doctest::Approx(0.5 * c).epsilon(1e-12));

  const Tensor r1 = random_image(10, 10, rng);
  const Tensor r2 = random_image(10, 10, rng);
  double want = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i)
    want += 0.5 * std::fabs(x[i] - r1[i]) + 0.5 * std::fabs(x[i] - r2[i]);
  want /= static_cast<double>(x.numel());
  CHECK(std::fabs(losses::registration_loss(x, r1, r2) - want) < 1e-10);

  // nonnegative; zero iff both branches equal the target
  CHECK(losses::registration_loss(x, r1, r2) > 0.0);
}

TEST_CASE("adversarial_losses: hinge arithmetic and raw value") {
  auto scalar = [](double v) { return ag::constant_scalar(v); };

  // D(real)=1, D(fakes)=-1: saturated hinge
  auto sat = losses::adversarial_losses(scalar(1.0), scalar(-1.0), scalar(-1.0));
  CHECK(sat.loss_d->value[0] == doctest::Approx(0.0));

  // D(all)=0: loss_d = 1 + 0.5 + 0.5 = 2, loss_g = 0
  auto zero = losses::adversarial_losses(scalar(0.0), scalar(0.0), scalar(0.0));
  CHECK(zero.loss_d->value[0] == doctest::Approx(2.0));
  CHECK(zero.loss_g->value[0] == doctest::Approx(0.0));

  // raw formula with D(real)=1, D(fakes)=0
  auto raw = losses::adversarial_losses(scalar(1.0), scalar(0.0), scalar(0.0));
  CHECK(raw.raw == doctest::Approx(1.0));

  // hinge discriminator loss is never negative
  Rng rng(57);
  for (int i = 0; i < 50; ++i) {
    auto l = losses::adversarial_losses(scalar(rng.uniform(-3.0, 3.0)),
                                        scalar(rng.uniform(-3.0, 3.0)),
                                        scalar(rng.uniform(-3.0, 3.0)));
    CHECK(l.loss_d->value[0] >= 0.0);
  }
}

TEST_CASE("total objectives: paper-weight arithmetic") {
  losses::LossWeights w;
  CHECK(w.lambda_smooth == 1000.0);
  CHECK(w.alpha_reg == 0.1);
  CHECK(w.beta_adv == 0.01);
  CHECK(w.learning_rate == 0.0001);

  CHECK(losses::total_recon_objective(0, 0, 0, w, losses::Regime::kProposed) == 0.0);
  CHECK(losses::total_recon_objective(-1.0, 0.001, 0.1, w, losses::Regime::kProposed) ==
        doctest::Approx(0.01));
  losses::LossWeights only_rec = w;
  only_rec.lambda_smooth = 0.0;
  only_rec.alpha_reg = 0.0;
  CHECK(losses::total_recon_objective(-0.6, 5.0, 5.0, only_rec, losses::Regime::kProposed) ==
        doctest::Approx(-0.6));
  // rec_only drops the registration term
  CHECK(losses::total_recon_objective(-0.5, 0.001, 123.0, w, losses::Regime::kRecOnly) ==
        doctest::Approx(-0.5 + 1.0));
  // reg_only stage 1 has no reconstruction term
  CHECK(losses::total_recon_objective(123.0, 0.001, 0.2, w, losses::Regime::kRegOnlyStage1) ==
        doctest::Approx(1.0 + 0.02));

  CHECK(losses::total_synth_objective(0.0, 0.0, w) == 0.0);
  CHECK(losses::total_synth_objective(0.3, -1.5, w) == doctest::Approx(0.03 - 0.015));
  losses::LossWeights nobeta = w;
  nobeta.beta_adv = 0.0;
  CHECK(losses::total_synth_objective(0.3, -1.5, nobeta) == doctest::Approx(0.03));
}
