#include "blastoseg/threading.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace blastoseg {

namespace {
std::atomic<int> g_num_threads{1};
}

void set_num_threads(int n) {
    g_num_threads.store(n < 1 ? 1 : n);
}

int num_threads() {
    return g_num_threads.load();
}

int default_num_threads() {
    if (const char* env = std::getenv("BLASTOSEG_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

namespace detail {

void parallel_for_impl(std::int64_t begin, std::int64_t end, void* ctx,
                       void (*body)(void*, std::int64_t, std::int64_t)) {
    const std::int64_t n = end - begin;
    if (n <= 0) return;
    const int workers = std::min<std::int64_t>(num_threads(), n);
    if (workers <= 1) {
        body(ctx, begin, end);
        return;
    }
    const std::int64_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers - 1));
    for (int w = 1; w < workers; ++w) {
        const std::int64_t lo = begin + chunk * w;
        const std::int64_t hi = std::min(end, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([=] { body(ctx, lo, hi); });
    }
    body(ctx, begin, std::min(end, begin + chunk));
    for (auto& t : pool) t.join();
}

} // namespace detail

} // namespace blastoseg
