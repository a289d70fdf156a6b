#include "mmalign/threads.hpp"

#include <omp.h>

#include <cstdlib>
#include <string>

namespace mmalign {

void apply_thread_cap_from_env() {
  const char* env = std::getenv("MMALIGN_THREADS");
  if (!env) return;
  try {
    const int n = std::stoi(env);
    if (n >= 1) set_thread_cap(n);
  } catch (...) {
    // Ignore malformed values; the OpenMP default stays in effect.
  }
}

void set_thread_cap(int n) {
  if (n < 1) n = 1;
  omp_set_num_threads(n);
}

int worker_threads() { return omp_get_max_threads(); }

}  // namespace mmalign
