#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace imgtrace::detail {

// Runs body(i) for i in [0, count) on up to `workers` threads. The first
// exception wins and is rethrown on the calling thread after all workers
// join. Work items must not assume any ordering.
inline void parallel_for(size_t count, int workers, const std::function<void(size_t)>& body) {
    if (count == 0) return;
    size_t n_threads = workers < 1 ? 1 : static_cast<size_t>(workers);
    if (n_threads > count) n_threads = count;
    if (n_threads == 1) {
        for (size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> threads;
    threads.reserve(n_threads);
    for (size_t t = 0; t < n_threads; ++t) {
        threads.emplace_back([&] {
            while (!failed.load(std::memory_order_relaxed)) {
                size_t i = next.fetch_add(1);
                if (i >= count) break;
                try {
                    body(i);
                } catch (...) {
                    std::scoped_lock lock(error_mutex);
                    if (!error) error = std::current_exception();
                    failed.store(true, std::memory_order_relaxed);
                }
            }
        });
    }
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace imgtrace::detail
