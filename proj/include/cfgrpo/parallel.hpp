// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace cfgrpo {

// Worker count from CFGRPO_THREADS (default 1).
int thread_count();
void set_thread_count(int n);  // 0 restores the environment value

// Runs fn(i) for i in [0, n). Results must not depend on scheduling.
void parallel_for(size_t n, const std::function<void(size_t)>& fn);

} // namespace cfgrpo
