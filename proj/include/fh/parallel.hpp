#ifndef FH_PARALLEL_HPP
#define FH_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace fh
{
/// Runs fn(i) for i in [0, n) on up to `workers` threads and returns the
/// results in index order, so output never depends on scheduling. The first
/// exception (lowest index) is rethrown after all workers join.
template < typename Fn >
auto parallel_map(std::size_t n, std::size_t workers, Fn&& fn) -> std::vector< decltype(fn(std::size_t{})) >
{
    using T = decltype(fn(std::size_t{}));
    std::vector< T > out(n);
    std::vector< std::exception_ptr > errors(n);
    std::atomic< std::size_t > next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++)
        {
            try
            {
                out[i] = fn(i);
            }
            catch (...)
            {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::clamp< std::size_t >(workers, 1, std::max< std::size_t >(n, 1));
    if (threads == 1)
        work();
    else
    {
        std::vector< std::jthread > pool;
        pool.reserve(threads);
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back(work);
    }
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);
    return out;
}
} // namespace fh

#endif // FH_PARALLEL_HPP
