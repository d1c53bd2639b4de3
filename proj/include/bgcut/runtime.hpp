#pragma once

#include <cstdint>
#include <functional>
#include <string>

namespace bgcut {

// Upper bound on internal worker threads. Reads BGCUT_THREADS once on first
// use; unset or invalid values mean 1 (fully serial, deterministic).
int max_threads();

// Overrides the BGCUT_THREADS cap for the current process. Tests use this.
void set_max_threads(int n);

// Runs fn(begin, end) over [0, n) in contiguous chunks. Chunks go to worker
// threads only when max_threads() > 1; callers must only use it where chunk
// outputs are disjoint so the result does not depend on the thread count.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

// One-line description of the host (CPU model, core count) for reports.
std::string machine_descriptor();

// Git commit hash baked in at configure time, "unknown" outside a checkout.
std::string build_commit();

}  // namespace bgcut
