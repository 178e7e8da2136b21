#ifndef WEAKLOC_RUNTIME_HPP
#define WEAKLOC_RUNTIME_HPP

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace weakloc
{

/// Keep large tensor buffers on the heap instead of fresh mmap'd pages for every allocation.
inline void tune_allocator()
{
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

} // namespace weakloc

#endif
