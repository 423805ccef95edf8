#pragma once

#if defined(__GLIBC__) || __has_include(<malloc.h>)
#include <malloc.h>
#endif

namespace shapegraph {

// Training allocates and frees many multi-megabyte buffers per batch. With
// glibc defaults each of them becomes an mmap/munmap pair plus page faults,
// which costs about a third of the run time. Keep them on the heap instead.
inline void tune_allocator() {
#if defined(M_MMAP_THRESHOLD) && defined(M_TRIM_THRESHOLD)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace shapegraph
