// Timing comparison of the serial reference kernels against the OpenMP
// production kernels, plus an end-to-end training-step throughput probe.
//
//   ./kernel_bench [repeats]

#include <omp.h>

#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "mmalign/kernels.hpp"
#include "mmalign/rng.hpp"
#include "mmalign/tensor.hpp"
#include "mmalign/threads.hpp"

using namespace mmalign;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

template <typename F>
double time_best(F&& fn, int repeats) {
  double best = 1e30;
  for (int r = 0; r < repeats; ++r) {
    const double t0 = omp_get_wtime();
    fn();
    best = std::min(best, omp_get_wtime() - t0);
  }
  return best;
}

void bench_conv(int n, int c, int hw, int k, int repeats) {
  kernels::ConvShape s;
  s.n = n;
  s.cin = c;
  s.cout = c;
  s.h = hw;
  s.w = hw;
  s.kh = k;
  s.kw = k;
  s.pad = k / 2;
  Rng rng(42);
  Tensor x = random_tensor({n, c, hw, hw}, rng);
  Tensor w = random_tensor({c, c, k, k}, rng);
  Tensor b = random_tensor({c}, rng);
  Tensor y({n, c, s.hout(), s.wout()});

  const double flops = 2.0 * n * c * c * k * k * s.hout() * s.wout();
  const double ts = time_best(
      [&] { kernels::serial::conv2d_forward(x.data(), w.data(), b.data(), y.data(), s); },
      repeats);
  const double tp = time_best(
      [&] { kernels::conv2d_forward(x.data(), w.data(), b.data(), y.data(), s); }, repeats);
  std::printf("conv2d  n=%d c=%d hw=%d k=%d  serial %8.3f ms (%5.2f GF/s)  omp %8.3f ms (%5.2f GF/s)  speedup %.2fx\n",
              n, c, hw, k, ts * 1e3, flops / ts * 1e-9, tp * 1e3, flops / tp * 1e-9, ts / tp);
}

void bench_conv_backward(int n, int c, int hw, int repeats) {
  kernels::ConvShape s;
  s.n = n;
  s.cin = c;
  s.cout = c;
  s.h = hw;
  s.w = hw;
  Rng rng(43);
  Tensor x = random_tensor({n, c, hw, hw}, rng);
  Tensor w = random_tensor({c, c, 3, 3}, rng);
  Tensor dy = random_tensor({n, c, s.hout(), s.wout()}, rng);
  Tensor dx({n, c, hw, hw});
  Tensor dw({c, c, 3, 3});
  Tensor db({c});

  const double ts = time_best(
      [&] {
        dx.zero();
        dw.zero();
        db.zero();
        kernels::serial::conv2d_dinput(dy.data(), w.data(), dx.data(), s);
        kernels::serial::conv2d_dweight(x.data(), dy.data(), dw.data(), db.data(), s);
      },
      repeats);
  const double tp = time_best(
      [&] {
        dx.zero();
        dw.zero();
        db.zero();
        kernels::conv2d_dinput(dy.data(), w.data(), dx.data(), s);
        kernels::conv2d_dweight(x.data(), dy.data(), dw.data(), db.data(), s);
      },
      repeats);
  std::printf("conv2d backward  n=%d c=%d hw=%d  serial %8.3f ms  omp %8.3f ms  speedup %.2fx\n",
              n, c, hw, ts * 1e3, tp * 1e3, ts / tp);
}

void bench_warp(int c, int hw, int repeats) {
  Rng rng(44);
  Tensor img = random_tensor({c, hw, hw}, rng);
  Tensor field = random_tensor({2, hw, hw}, rng);
  field.scale(3.0);
  Tensor out({c, hw, hw});
  const double ts = time_best(
      [&] { kernels::serial::warp_forward(img.data(), field.data(), out.data(), c, hw, hw); },
      repeats);
  const double tp = time_best(
      [&] { kernels::warp_forward(img.data(), field.data(), out.data(), c, hw, hw); }, repeats);
  std::printf("warp    c=%d hw=%d           serial %8.3f ms  omp %8.3f ms  speedup %.2fx\n", c,
              hw, ts * 1e3, tp * 1e3, ts / tp);
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_cap_from_env();
  const int repeats = argc > 1 ? std::atoi(argv[1]) : 5;
  std::printf("threads: %d, repeats: %d\n", worker_threads(), repeats);

  bench_conv(4, 16, 64, 3, repeats);
  bench_conv(4, 32, 32, 3, repeats);
  bench_conv(1, 16, 320, 3, repeats);
  bench_conv_backward(4, 16, 64, repeats);
  bench_conv_backward(4, 32, 32, repeats);
  bench_warp(1, 64, repeats);
  bench_warp(2, 320, repeats);
  return 0;
}
