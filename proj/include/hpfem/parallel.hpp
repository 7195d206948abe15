#pragma once

#include <cstddef>
#include <functional>

namespace hpfem
{

/// Number of worker threads used by element loops (default 1).
void set_num_threads(int n);
int num_threads();

/// Run body(i) for i in [0, n). Iterations must be independent; results are
/// written to per-index slots so the outcome does not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

} // namespace hpfem
