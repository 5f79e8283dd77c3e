#pragma once

#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace lsilab {

/// Deterministic blocked map-reduce: items are split into fixed-size
/// blocks, each block is processed sequentially into its own partial of
/// type Partial (Partial must be default-constructible), blocks are handed
/// to workers dynamically, and the partials are combined in block order.
/// The block structure depends only on (n_items, block_size), never on the
/// thread count, so the reduction is bit-identical however it is scheduled.
template <typename Partial, typename MapFn, typename ReduceFn>
void blocked_reduce(std::size_t n_items, std::size_t block_size,
                    std::size_t n_threads, MapFn&& map_block,
                    ReduceFn&& reduce_in_order) {
    if (n_items == 0) return;
    if (block_size == 0) block_size = 1;
    const std::size_t n_blocks = (n_items + block_size - 1) / block_size;
    std::vector<Partial> partials(n_blocks);

    auto run_block = [&](std::size_t b) {
        const std::size_t begin = b * block_size;
        const std::size_t end = std::min(begin + block_size, n_items);
        map_block(begin, end, partials[b]);
    };

    if (n_threads <= 1 || n_blocks == 1) {
        for (std::size_t b = 0; b < n_blocks; ++b) run_block(b);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        const std::size_t workers = std::min(n_threads, n_blocks);
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                while (true) {
                    const std::size_t b = next.fetch_add(1);
                    if (b >= n_blocks) return;
                    run_block(b);
                }
            });
        for (auto& th : pool) th.join();
    }

    for (std::size_t b = 0; b < n_blocks; ++b) reduce_in_order(partials[b]);
}

}  // namespace lsilab
