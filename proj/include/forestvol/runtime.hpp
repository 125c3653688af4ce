#pragma once

// Process-level allocator tuning for executables. Training allocates and frees
// many multi-megabyte activation buffers per step; glibc's default hands those
// straight back to the kernel, so every step pays fresh page faults.

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace forestvol {

inline void tune_allocator() {
#ifdef __GLIBC__
    mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
    mallopt(M_TOP_PAD, 64 * 1024 * 1024);
#endif
}

}  // namespace forestvol
