#pragma once

#include <cstdlib>
#include <thread>
#include <vector>

namespace slcrf {

// Thread count comes from SLCRF_THREADS (default 1, the only environment
// interface).
inline std::size_t thread_count() {
    if (const char* env = std::getenv("SLCRF_THREADS")) {
        const long v = std::atol(env);
        if (v > 0) return static_cast<std::size_t>(v);
    }
    return 1;
}

// Chunked parallel loop for bodies with disjoint writes per index. Results
// are independent of the thread count because there are no reductions.
template <typename F>
void parallel_for(std::size_t n, F&& body) {
    const std::size_t threads = std::min(thread_count(), n == 0 ? std::size_t(1) : n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t lo = t * chunk;
        const std::size_t hi = std::min(lo + chunk, n);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &body] {
            for (std::size_t i = lo; i < hi; ++i) body(i);
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace slcrf
