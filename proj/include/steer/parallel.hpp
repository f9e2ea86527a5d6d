#pragma once

// Deterministic fork/join helper: fn(i) runs on up to `jobs` workers, results
// land in an index-addressed vector, and the caller reduces them in a fixed
// order. Output is therefore identical for any worker count.

#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include "steer/common.hpp"

namespace steer {

inline int resolve_jobs(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("STEER_JOBS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    return 1;
}

template <typename Result, typename Fn>
std::vector<Result> parallel_map(size_t n, int jobs, Fn&& fn) {
    std::vector<Result> results(n);
    if (n == 0) return results;
    jobs = std::max(1, jobs);
    const size_t workers = std::min(static_cast<size_t>(jobs), n);
    if (workers <= 1) {
        for (size_t i = 0; i < n; ++i) results[i] = fn(i);
        return results;
    }
    std::atomic<size_t> next{0};
    std::exception_ptr first_error;
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            while (true) {
                const size_t i = next.fetch_add(1);
                if (i >= n || failed.load()) return;
                try {
                    results[i] = fn(i);
                } catch (...) {
                    bool expected = false;
                    if (failed.compare_exchange_strong(expected, true)) {
                        first_error = std::current_exception();
                    }
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failed.load()) std::rethrow_exception(first_error);
    return results;
}

}  // namespace steer
