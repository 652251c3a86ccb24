#include "tdlm/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace tdlm {

namespace {
std::atomic<std::size_t> g_threads{1};
}

void set_num_threads(std::size_t n) { g_threads.store(std::max<std::size_t>(1, n)); }

std::size_t num_threads() { return g_threads.load(); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body)
{
    const std::size_t workers = std::min(num_threads(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto run_block = [&](std::size_t w) {
        const std::size_t begin = n * w / workers;
        const std::size_t end = n * (w + 1) / workers;
        try {
            for (std::size_t i = begin; i < end; ++i) body(i);
        } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
        }
    };
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run_block, w);
    run_block(0);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

} // namespace tdlm
