#ifndef FH_RNG_HPP
#define FH_RNG_HPP

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fh
{
using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives an independent stream seed from a base seed and a path of labels
/// (instance id, arm, ...). Pure function of its arguments.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list< std::uint64_t > path)
{
    std::uint64_t s = splitmix64(base);
    for (auto p : path)
        s = splitmix64(s ^ splitmix64(p + 0x632be59bd9b4e019ULL));
    return s;
}

/// Uniform integer in [0, n). n must be positive.
inline std::size_t uniform_index(Rng& rng, std::size_t n)
{
    return std::uniform_int_distribution< std::size_t >(0, n - 1)(rng);
}
} // namespace fh

#endif // FH_RNG_HPP
