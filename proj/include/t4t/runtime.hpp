#pragma once

#include <malloc.h>

#include "t4t/blas.hpp"

namespace t4t {

// Keeps large tensor buffers on the heap free list instead of returning them
// to the OS after every op, so repeated forwards stop paying page faults.
inline void tune_allocator() {
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
}

inline void init_runtime(bool deterministic) {
  tune_allocator();
  set_deterministic(deterministic);
}

}  // namespace t4t
