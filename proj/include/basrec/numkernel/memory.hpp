#pragma once

namespace basrec {

/// Keeps large freed blocks in the heap instead of returning them to the OS.
/// Tape tensors are allocated and freed every step; with the default glibc
/// thresholds each one is a fresh mmap whose pages fault in on first touch.
/// Idempotent; a no-op on non-glibc platforms.
void configure_allocator();

}  // namespace basrec
