#pragma once

namespace gapcast {

/// Keeps large tape buffers on the heap between batches instead of returning
/// them to the OS after every step. No-op outside glibc.
void configure_allocator();

} // namespace gapcast
