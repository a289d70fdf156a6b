#include "mmalign/fft.hpp"

#include <fftw3.h>

#include <cmath>
#include <cstdint>
#include <mutex>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace mmalign::fft {

namespace {

struct PlanPair {
  fftw_plan fwd = nullptr;
  fftw_plan bwd = nullptr;
};

std::mutex g_plan_mutex;
std::unordered_map<std::uint64_t, PlanPair>& plan_cache() {
  static std::unordered_map<std::uint64_t, PlanPair> cache;
  return cache;
}

PlanPair plans_for(int h, int w) {
  const std::uint64_t key = (static_cast<std::uint64_t>(h) << 32) | static_cast<std::uint32_t>(w);
  std::lock_guard<std::mutex> lock(g_plan_mutex);
  auto& cache = plan_cache();
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  // FFTW_UNALIGNED so the plans work with whatever buffers callers pass;
  // FFTW_ESTIMATE keeps planning deterministic.
  std::vector<fftw_complex> a(static_cast<size_t>(h) * w), b(static_cast<size_t>(h) * w);
  PlanPair p;
  p.fwd = fftw_plan_dft_2d(h, w, a.data(), b.data(), FFTW_FORWARD,
                           FFTW_ESTIMATE | FFTW_UNALIGNED);
  p.bwd = fftw_plan_dft_2d(h, w, a.data(), b.data(), FFTW_BACKWARD,
                           FFTW_ESTIMATE | FFTW_UNALIGNED);
  if (!p.fwd || !p.bwd) throw std::runtime_error("fftw plan creation failed");
  cache.emplace(key, p);
  return p;
}

// Circular gather: out[i] = scale * in[(i + off) % n] per axis.
void shift_copy(const std::complex<double>* in, std::complex<double>* out, int h, int w,
                int off_h, int off_w, double scale) {
  for (int r = 0; r < h; ++r) {
    const int sr = (r + off_h) % h;
    for (int c = 0; c < w; ++c) {
      const int sc = (c + off_w) % w;
      out[static_cast<std::int64_t>(r) * w + c] =
          scale * in[static_cast<std::int64_t>(sr) * w + sc];
    }
  }
}

void centered_transform(const std::complex<double>* in, std::complex<double>* out, int h, int w,
               bool forward) {
  if (h < 1 || w < 1) throw std::invalid_argument("fft2c: empty image");
  const PlanPair plans = plans_for(h, w);
  const std::int64_t n = static_cast<std::int64_t>(h) * w;
  std::vector<std::complex<double>> tmp_in(static_cast<size_t>(n));
  std::vector<std::complex<double>> tmp_out(static_cast<size_t>(n));

  // ifftshift(x): index k gathers from (k + floor(n/2)) % n.
  shift_copy(in, tmp_in.data(), h, w, h / 2, w / 2, 1.0);
  fftw_execute_dft(forward ? plans.fwd : plans.bwd,
                   reinterpret_cast<fftw_complex*>(tmp_in.data()),
                   reinterpret_cast<fftw_complex*>(tmp_out.data()));
  // fftshift(y): index k gathers from (k + ceil(n/2)) % n, with the
  // orthonormal scale folded in. FFTW leaves both directions unscaled.
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  shift_copy(tmp_out.data(), out, h, w, h - h / 2, w - w / 2, scale);
}

}  // namespace

void fft2c(const std::complex<double>* in, std::complex<double>* out, int h, int w) {
  centered_transform(in, out, h, w, true);
}

void ifft2c(const std::complex<double>* in, std::complex<double>* out, int h, int w) {
  centered_transform(in, out, h, w, false);
}

namespace {

Tensor planes_transform(const Tensor& planes, bool forward) {
  if (planes.ndim() != 3 || planes.dim(0) != 2)
    throw std::invalid_argument("fft2c: expected [2,h,w] tensor");
  const int h = planes.dim(1), w = planes.dim(2);
  const std::int64_t n = static_cast<std::int64_t>(h) * w;
  std::vector<std::complex<double>> in(static_cast<size_t>(n)), out(static_cast<size_t>(n));
  const double* re = planes.data();
  const double* im = planes.data() + n;
  for (std::int64_t i = 0; i < n; ++i) in[static_cast<size_t>(i)] = {re[i], im[i]};
  centered_transform(in.data(), out.data(), h, w, forward);
  Tensor result({2, h, w});
  double* ore = result.data();
  double* oim = result.data() + n;
  for (std::int64_t i = 0; i < n; ++i) {
    ore[i] = out[static_cast<size_t>(i)].real();
    oim[i] = out[static_cast<size_t>(i)].imag();
  }
  return result;
}

}  // namespace

Tensor fft2c(const Tensor& planes) { return planes_transform(planes, true); }
Tensor ifft2c(const Tensor& planes) { return planes_transform(planes, false); }

Tensor complex_from_real(const Tensor& real_hw) {
  int h = 0, w = 0;
  if (real_hw.ndim() == 2) {
    h = real_hw.dim(0);
    w = real_hw.dim(1);
  } else if (real_hw.ndim() == 3 && real_hw.dim(0) == 1) {
    h = real_hw.dim(1);
    w = real_hw.dim(2);
  } else {
    throw std::invalid_argument("complex_from_real: expected [h,w] or [1,h,w]");
  }
  Tensor out({2, h, w});
  const std::int64_t n = static_cast<std::int64_t>(h) * w;
  for (std::int64_t i = 0; i < n; ++i) out[i] = real_hw[i];
  return out;
}

Tensor magnitude(const Tensor& planes) {
  if (planes.ndim() != 3 || planes.dim(0) != 2)
    throw std::invalid_argument("magnitude: expected [2,h,w]");
  const int h = planes.dim(1), w = planes.dim(2);
  const std::int64_t n = static_cast<std::int64_t>(h) * w;
  Tensor out({1, h, w});
  const double* re = planes.data();
  const double* im = planes.data() + n;
  for (std::int64_t i = 0; i < n; ++i) out[i] = std::hypot(re[i], im[i]);
  return out;
}

}  // namespace mmalign::fft
