#include <doctest.h>

#include <cmath>

#include "mmalign/evalmetrics.hpp"
#include "mmalign/fft.hpp"
#include "mmalign/kspace.hpp"
#include "mmalign/rng.hpp"
#include "oracles.hpp"

using namespace mmalign;
using kspace::MaskPattern;

namespace {

Tensor random_complex(int h, int w, Rng& rng) {
  Tensor t({2, h, w});
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

int count_true(const kspace::SamplingMask& m) { return m.sampled_count(); }

}  // namespace

TEST_CASE("make_mask 320/4 equispaced: 80 columns, 26 centered, constant stride") {
  const auto m = kspace::make_mask(320, 4, MaskPattern::kEquispaced, 0.32, 1);
  CHECK(count_true(m) == 80);
  CHECK(m.low_freq_count == 26);
  // contiguous centered block
  const int start = m.center_start();
  CHECK(start == 147);
  for (int c = start; c < start + 26; ++c) CHECK(m.lines[static_cast<size_t>(c)] == 1);
  // zero-frequency column sampled
  CHECK(m.lines[160] == 1);
  // outer columns have a constant stride except at the wraparound
  std::vector<int> ring;
  for (int c = start + 26; c < 320; ++c)
    if (m.lines[static_cast<size_t>(c)]) ring.push_back(c);
  for (int c = 0; c < start; ++c)
    if (m.lines[static_cast<size_t>(c)]) ring.push_back(c);
  CHECK(static_cast<int>(ring.size()) == 80 - 26);
  std::vector<int> diffs;
  for (size_t i = 1; i < ring.size(); ++i) diffs.push_back((ring[i] - ring[i - 1] + 320) % 320);
  int irregular = 0;
  for (size_t i = 1; i < diffs.size(); ++i)
    if (diffs[i] != diffs[0]) ++irregular;
  CHECK(irregular <= 1);
}

TEST_CASE("make_mask acceleration 8 and small-width example") {
  const auto m8 = kspace::make_mask(320, 8, MaskPattern::kEquispaced, 0.32, 1);
  CHECK(count_true(m8) == 40);
  const auto m8r = kspace::make_mask(320, 8, MaskPattern::kRandom, 0.32, 1);
  CHECK(count_true(m8r) == 40);

  const auto small = kspace::make_mask(8, 2, MaskPattern::kEquispaced, 0.5, 0);
  CHECK(count_true(small) == 4);
  CHECK(small.low_freq_count == 2);
  CHECK(small.lines[3] == 1);
  CHECK(small.lines[4] == 1);
}

TEST_CASE("make_mask random: seeds share the center block, differ outside") {
  const auto a = kspace::make_mask(320, 8, MaskPattern::kRandom, 0.32, 11);
  const auto b = kspace::make_mask(320, 8, MaskPattern::kRandom, 0.32, 12);
  const int start = a.center_start();
  for (int c = start; c < start + a.low_freq_count; ++c) {
    CHECK(a.lines[static_cast<size_t>(c)] == 1);
    CHECK(b.lines[static_cast<size_t>(c)] == 1);
  }
  CHECK(a.lines != b.lines);
  // identical arguments: byte-identical output
  const auto a2 = kspace::make_mask(320, 8, MaskPattern::kRandom, 0.32, 11);
  CHECK(a.lines == a2.lines);
}

TEST_CASE("make_mask sampling ratio exact and error paths") {
  for (int w : {64, 128, 320})
    for (int acc : {2, 4, 8}) {
      const auto m = kspace::make_mask(w, acc, MaskPattern::kRandom, 0.32, 5);
      CHECK(count_true(m) == static_cast<int>(std::llround(static_cast<double>(w) / acc)));
    }
  CHECK_THROWS(kspace::make_mask(4, 4, MaskPattern::kRandom, 0.32, 0));
  CHECK_THROWS(kspace::make_mask(64, 3, MaskPattern::kRandom, 0.32, 0));
  CHECK_THROWS(kspace::make_mask(64, 4, MaskPattern::kRandom, 0.99, 0));  // low >= total
  CHECK_THROWS(kspace::make_mask(64, 4, MaskPattern::kRandom, 1.5, 0));
}

TEST_CASE("mask JSON round trip") {
  const auto m = kspace::make_mask(64, 4, MaskPattern::kRandom, 0.32, 99);
  const auto back = kspace::SamplingMask::from_json(m.to_json());
  CHECK(back.lines == m.lines);
  CHECK(back.acceleration == m.acceleration);
  CHECK(back.low_freq_count == m.low_freq_count);
  CHECK(back.seed == m.seed);
  CHECK(back.pattern == m.pattern);
}

TEST_CASE("fft2c constant image puts energy in the centered DC bin") {
  const int h = 12, w = 16;
  Tensor img({2, h, w});
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) img.at(0, r, c) = 0.7;
  const Tensor k = fft::fft2c(img);
  const double expect = 0.7 * std::sqrt(static_cast<double>(h) * w);
  CHECK(k.at(0, h / 2, w / 2) == doctest::Approx(expect).epsilon(1e-9));
  double off = 0.0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      if (r != h / 2 || c != w / 2)
        off = std::max(off, std::hypot(k.at(0, r, c), k.at(1, r, c)));
  CHECK(off < 1e-9);
}

TEST_CASE("undersample: full mask equals fft2c, masked columns are zero") {
  Rng rng(31);
  const int h = 16, w = 16;
  Tensor x = random_complex(h, w, rng);

  kspace::SamplingMask full;
  full.lines.assign(w, 1);
  full.acceleration = 1;
  full.low_freq_count = w;
  const auto yfull = kspace::undersample(x, full);
  const Tensor k = fft::fft2c(x);
  for (std::int64_t i = 0; i < k.numel(); ++i)
    CHECK(yfull.samples[i] == doctest::Approx(k[i]).epsilon(1e-12));

  const auto m = kspace::make_mask(w, 4, MaskPattern::kRandom, 0.32, 3);
  const auto y = kspace::undersample(x, m);
  for (int p = 0; p < 2; ++p)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const double v = y.samples.at(0, p, r, c);
        if (!m.lines[static_cast<size_t>(c)])
          CHECK(v == 0.0);
        else
          CHECK(v == k.at(p, r, c));
      }
}

TEST_CASE("zero_fill_reconstruct: inverse of full sampling, zero input, aliasing") {
  Rng rng(32);
  const int n = 32;
  Tensor x = random_complex(n, n, rng);
  kspace::SamplingMask full;
  full.lines.assign(n, 1);
  full.acceleration = 1;
  full.low_freq_count = n;
  const auto y = kspace::undersample(x, full);
  const Tensor back = kspace::zero_fill_reconstruct(y);
  for (std::int64_t i = 0; i < x.numel(); ++i)
    CHECK(std::fabs(back[i] - x[i]) < 1e-6);

  kspace::KSpaceData zero;
  zero.samples = Tensor({1, 2, n, n});
  zero.coil_count = 1;
  zero.mask = full;
  const Tensor z = kspace::zero_fill_reconstruct(zero);
  CHECK(z.abs_max() == 0.0);

  // 4x equispaced on a structured image: PSNR strictly below the full-mask case.
  Tensor phantom({2, n, n});
  for (int r = 8; r < 24; ++r)
    for (int c = 8; c < 24; ++c) phantom.at(0, r, c) = (r / 4 + c / 4) % 2 ? 1.0 : 0.4;
  const auto m4 = kspace::make_mask(n, 4, MaskPattern::kEquispaced, 0.32, 0);
  const Tensor rec4 = fft::magnitude(kspace::zero_fill_reconstruct(kspace::undersample(phantom, m4)));
  const Tensor recfull =
      fft::magnitude(kspace::zero_fill_reconstruct(kspace::undersample(phantom, full)));
  const Tensor truth = fft::magnitude(phantom);
  const double p4 = evalmetrics::psnr(rec4, truth, 1.0);
  const double pf = evalmetrics::psnr(recfull, truth, 1.0);
  CHECK(p4 < pf);
  CHECK(p4 < 60.0);
}

TEST_CASE("estimate_sensitivities: single coil, identical coils, RSS normalization") {
  Rng rng(33);
  const int n = 32;

  // single coil: constant magnitude-1 maps
  Tensor x = random_complex(n, n, rng);
  const auto m = kspace::make_mask(n, 4, MaskPattern::kEquispaced, 0.32, 0);
  const auto y1 = kspace::undersample(x, m);
  const auto s1 = kspace::estimate_sensitivities(y1);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      CHECK(s1.maps.at(0, 0, r, c) == doctest::Approx(1.0));
      CHECK(s1.maps.at(0, 1, r, c) == doctest::Approx(0.0));
    }

  // two identical coils -> maps of magnitude 1/sqrt(2)
  Tensor img({n, n});
  for (int r = 10; r < 22; ++r)
    for (int c = 10; c < 22; ++c) img.at(r, c) = 0.8;
  Tensor coils({2, 2, n, n});
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      coils.at(0, 0, r, c) = img.at(r, c);
      coils.at(1, 0, r, c) = img.at(r, c);
    }
  const auto y2 = kspace::undersample(coils, m);
  const auto s2 = kspace::estimate_sensitivities(y2);
  const double expect = 1.0 / std::sqrt(2.0);
  int checked = 0;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const double mag0 = std::hypot(s2.maps.at(0, 0, r, c), s2.maps.at(0, 1, r, c));
      if (mag0 > 0.0) {
        CHECK(mag0 == doctest::Approx(expect).epsilon(1e-6));
        ++checked;
      }
    }
  CHECK(checked > 0);

  // random 4-coil input: RSS of maps equals 1 wherever maps are nonzero
  Tensor c4({4, 2, n, n});
  for (std::int64_t i = 0; i < c4.numel(); ++i) c4[i] = rng.uniform(-1.0, 1.0);
  const auto y4 = kspace::undersample(c4, m);
  const auto s4 = kspace::estimate_sensitivities(y4);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      double rss = 0.0;
      for (int coil = 0; coil < 4; ++coil)
        rss += s4.maps.at(coil, 0, r, c) * s4.maps.at(coil, 0, r, c) +
               s4.maps.at(coil, 1, r, c) * s4.maps.at(coil, 1, r, c);
      rss = std::sqrt(rss);
      if (rss > 0.0) CHECK(std::fabs(rss - 1.0) < 1e-5);
    }

  // degenerate all-zero calibration region
  kspace::KSpaceData zero;
  zero.samples = Tensor({2, 2, n, n});
  zero.coil_count = 2;
  zero.mask = m;
  CHECK_THROWS(kspace::estimate_sensitivities(zero));
}

TEST_CASE("data_consistency tensor form: limits and midpoint") {
  Rng rng(34);
  const int n = 8;
  Tensor x = random_complex(n, n, rng);
  const auto m = kspace::make_mask(n, 2, MaskPattern::kEquispaced, 0.5, 0);
  const auto y = kspace::undersample(x, m);
  Tensor k_pred = random_complex(n, n, rng);
  const Tensor k_pred4 = k_pred.reshaped({1, 2, n, n});

  const Tensor hard = kspace::data_consistency(k_pred4, y, 1.0);
  const Tensor noop = kspace::data_consistency(k_pred4, y, 0.0);
  const Tensor mid = kspace::data_consistency(k_pred4, y, 0.5);
  for (int p = 0; p < 2; ++p)
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) {
        const double kp = k_pred.at(p, r, c);
        const double yv = y.samples.at(0, p, r, c);
        if (m.lines[static_cast<size_t>(c)]) {
          CHECK(hard.at(0, p, r, c) == yv);
          CHECK(mid.at(0, p, r, c) == doctest::Approx(0.5 * kp + 0.5 * yv).epsilon(1e-12));
        } else {
          CHECK(hard.at(0, p, r, c) == kp);
        }
        CHECK(noop.at(0, p, r, c) == kp);
      }
  // idempotent at weight 1
  CHECK(kspace::data_consistency(hard, y, 1.0).bitwise_equal(hard));
}

TEST_CASE("undersample matches per-entry brute-force mask multiply") {
  Rng rng(35);
  const int h = 12, w = 20;
  Tensor x = random_complex(h, w, rng);
  const auto m = kspace::make_mask(w, 4, MaskPattern::kRandom, 0.4, 7);
  const auto y = kspace::undersample(x, m);
  const Tensor k = fft::fft2c(x);
  for (int p = 0; p < 2; ++p)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        CHECK(y.samples.at(0, p, r, c) ==
              (m.lines[static_cast<size_t>(c)] ? k.at(p, r, c) : 0.0));
}
