#pragma once

#include "mfgweak/types.hpp"

#include <cstdint>
#include <string_view>

namespace mfgw {

// Counter-based random numbers.  Every draw is a pure function of
// (seed, stream, particle, counter), so any particle's noise can be produced
// in isolation, in any order, on any thread, and a path can be replayed or
// bump-perturbed without storing its increments.

// FNV-1a over the stream name gives stable 64-bit stream identifiers.
constexpr u64 stream_id(std::string_view name) {
    u64 h = 0xcbf29ce484222325ull;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

struct RngKey {
    u64 seed = 0;
    u64 stream = stream_id("forward");
};

inline RngKey make_key(u64 seed, std::string_view stream_name) {
    return RngKey{seed, stream_id(stream_name)};
}

namespace detail {

// splitmix64 finalizer: full-avalanche bijection on 64 bits.
constexpr u64 mix64(u64 x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

} // namespace detail

// One uniform 64-bit word at (key, particle, counter).
constexpr u64 draw_u64(RngKey key, u64 particle, u64 counter) {
    u64 h = detail::mix64(key.seed ^ 0x6a09e667f3bcc908ull);
    h = detail::mix64(h ^ key.stream);
    h = detail::mix64(h ^ particle * 0x9e3779b97f4a7c15ull);
    h = detail::mix64(h ^ counter * 0xc2b2ae3d27d4eb4full);
    return h;
}

// Uniform double in the open interval (0, 1): 53-bit mantissa, half-ulp offset
// keeps both endpoints excluded.
inline double draw_uniform(RngKey key, u64 particle, u64 counter) {
    return (static_cast<double>(draw_u64(key, particle, counter) >> 11) + 0.5) *
           0x1.0p-53;
}

// Standard normal quantile (Acklam's rational approximation, ~1e-9 relative
// accuracy -- far below Monte Carlo resolution at desk scale).
double normal_quantile(double p);

// One standard normal draw addressed by (key, particle, counter).
inline double draw_normal(RngKey key, u64 particle, u64 counter) {
    return normal_quantile(draw_uniform(key, particle, counter));
}

} // namespace mfgw
