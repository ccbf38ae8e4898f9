#ifndef HITCERT_PARALLEL_HPP
#define HITCERT_PARALLEL_HPP

#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace hitcert {

/// Runs fn(trial_index) for every index and collects results by index, so
/// the output is identical for any worker count: each trial must take its
/// randomness from an index-keyed substream, never from shared state.
template <class T, class Fn>
std::vector<T> run_trials(std::size_t trials, unsigned threads, Fn&& fn) {
    std::vector<T> results(trials);
    if (threads <= 1 || trials <= 1) {
        for (std::size_t i = 0; i < trials; ++i) results[i] = fn(i);
        return results;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::atomic<bool> failed{false};
    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= trials || failed.load()) break;
            try {
                results[i] = fn(i);
            } catch (...) {
                if (!failed.exchange(true)) first_error = std::current_exception();
                break;
            }
        }
    };
    std::vector<std::thread> pool;
    const unsigned n = std::min<unsigned>(threads, static_cast<unsigned>(trials));
    pool.reserve(n);
    for (unsigned w = 0; w < n; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (failed.load() && first_error) std::rethrow_exception(first_error);
    return results;
}

inline unsigned default_worker_count() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

} // namespace hitcert

#endif // HITCERT_PARALLEL_HPP
