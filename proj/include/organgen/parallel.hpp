#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace organgen {

inline int default_thread_count() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

// Runs fn(i, worker) for i in [0, n); worker identifies the executing lane
// in [0, max_workers(n, threads)) so callers can keep per-worker scratch.
// Work items must write only to their own slots; callers perform any
// reduction afterwards in fixed index order so results do not depend on the
// thread count.
inline std::size_t max_workers(std::size_t n, int threads) {
    threads = std::max(1, threads);
    if (threads == 1 || n <= 1) return 1;
    return std::min<std::size_t>(static_cast<std::size_t>(threads), n);
}

template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    const std::size_t workers = max_workers(n, threads);
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i, std::size_t{0});
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n || failed.load()) break;
                try {
                    fn(i, w);
                } catch (...) {
                    errors[w] = std::current_exception();
                    failed.store(true);
                    break;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace organgen
