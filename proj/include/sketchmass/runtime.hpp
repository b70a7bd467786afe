#pragma once

namespace sketchmass {

/// Keeps large tensor buffers on the heap instead of fresh mmap pages, which
/// otherwise dominate training time through page faults. Call once from main.
void tune_allocator();

}  // namespace sketchmass
