#pragma once

#include <cstdint>
#include <memory>
#include <type_traits>

namespace blastoseg {

// Global worker count for the data-parallel loops inside engine ops.
// Every op partitions work so that each output element is produced by
// exactly one worker with a fixed accumulation order, so results are
// bitwise identical for any thread count. 1 forces plain serial loops.
void set_num_threads(int n);
int num_threads();

// Resolves the initial thread count: BLASTOSEG_THREADS env var if set,
// otherwise the hardware concurrency.
int default_num_threads();

namespace detail {

void parallel_for_impl(std::int64_t begin, std::int64_t end, void* ctx,
                       void (*body)(void*, std::int64_t, std::int64_t));

} // namespace detail

// Runs body(i) for i in [begin, end), split into contiguous chunks across
// the configured worker count.
template <typename Fn>
void parallel_for(std::int64_t begin, std::int64_t end, Fn&& body) {
    using Body = std::remove_reference_t<Fn>;
    auto trampoline = [](void* ctx, std::int64_t lo, std::int64_t hi) {
        auto& fn = *static_cast<Body*>(ctx);
        for (std::int64_t i = lo; i < hi; ++i) fn(i);
    };
    detail::parallel_for_impl(begin, end, const_cast<Body*>(std::addressof(body)), trampoline);
}

} // namespace blastoseg
