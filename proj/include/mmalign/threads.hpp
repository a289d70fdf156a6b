#pragma once

namespace mmalign {

// Applies the MMALIGN_THREADS cap (if set) to the OpenMP runtime.
// Call once at process start; safe to call again.
void apply_thread_cap_from_env();

// Explicit cap, used by tests.
void set_thread_cap(int n);

int worker_threads();

}  // namespace mmalign
