// SPDX-License-Identifier: Apache-2.0
#include "cfgrpo/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace cfgrpo {

namespace {
std::atomic<int> g_override{0};
}

int thread_count() {
    if (int o = g_override.load(); o > 0) return o;
    if (const char* env = std::getenv("CFGRPO_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return std::min(n, 256);
    }
    return 1;
}

void set_thread_count(int n) { g_override.store(n > 0 ? n : 0); }

void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
    const size_t workers = std::min<size_t>(static_cast<size_t>(thread_count()), n);
    if (workers <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::exception_ptr first_error;
    std::mutex err_mu;
    auto work = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mu);
                if (!first_error) first_error = std::current_exception();
                next.store(n);
            }
        }
    };
    std::vector<std::thread> pool;
    for (size_t t = 1; t < workers; ++t) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace cfgrpo
