#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace wed {

/// Worker count: WED_THREADS if set (>= 1), otherwise hardware concurrency.
inline unsigned worker_count()
{
    static const unsigned count = [] {
        if (const char* env = std::getenv("WED_THREADS")) {
            try {
                const long value = std::stol(env);
                if (value >= 1) {
                    return static_cast<unsigned>(value);
                }
            } catch (...) {
            }
        }
        return std::max(1u, std::thread::hardware_concurrency());
    }();
    return count;
}

/// Runs body(i) for i in [0, n). Each index must touch only its own output slot,
/// so results do not depend on the thread count.
template <class Body>
void parallel_for(std::size_t n, Body&& body, std::size_t min_chunk = 64)
{
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(worker_count(), n / std::max<std::size_t>(min_chunk, 1)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            body(i);
        }
        return;
    }
    std::exception_ptr failure;
    std::mutex failure_mutex;
    {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) {
            break;
        }
        pool.emplace_back([&, begin, end] {
            try {
                for (std::size_t i = begin; i < end; ++i) {
                    body(i);
                }
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) {
                    failure = std::current_exception();
                }
            }
        });
    }
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

} // namespace wed
