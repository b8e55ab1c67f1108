#include "gapcast/runtime.hpp"

#include <cstdlib>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace gapcast {

void configure_allocator() {
#if defined(__GLIBC__)
    // Tape buffers are freed and reallocated every batch; keep them in the heap.
    mallopt(M_MMAP_THRESHOLD, 32 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
    mallopt(M_TOP_PAD, 64 << 20);
#endif
}

} // namespace gapcast
