#pragma once

#include <cstdint>
#include <initializer_list>

namespace hpalign {

// SplitMix64 finalizer; used to derive independent child seeds from a parent seed.
constexpr std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::initializer_list<std::uint64_t> path)
{
    std::uint64_t seed = splitmix64(parent);
    for (std::uint64_t step : path) {
        seed = splitmix64(seed ^ splitmix64(step + 0x632be59bd9b4e019ULL));
    }
    return seed;
}

}  // namespace hpalign
