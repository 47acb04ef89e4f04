// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace rxgs {

// Run fn(chunk_index, begin, end) over [0, n) split into `threads` contiguous
// chunks. threads <= 1 runs everything inline on the calling thread; the
// chunk boundaries are identical either way, so per-chunk buffers merged in
// chunk order give the same result for a fixed thread count.
template <typename Fn>
void parallel_chunks(std::size_t n, int threads, Fn&& fn) {
    if (threads <= 1 || n <= 1) {
        fn(0, std::size_t{0}, n);
        return;
    }
    const std::size_t t = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    std::vector<std::thread> pool;
    pool.reserve(t);
    for (std::size_t i = 0; i < t; ++i) {
        const std::size_t begin = n * i / t;
        const std::size_t end = n * (i + 1) / t;
        pool.emplace_back([&fn, i, begin, end] { fn(i, begin, end); });
    }
    for (auto& th : pool) th.join();
}

}  // namespace rxgs
