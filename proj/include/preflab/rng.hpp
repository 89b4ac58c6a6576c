#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace preflab {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer. Used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t x);

/// FNV-1a over bytes; stable across platforms (unlike std::hash).
std::uint64_t fnv1a64(std::string_view bytes);

/// Seed for a named sub-stream of `base`.
std::uint64_t derive_seed(std::uint64_t base, std::string_view stream);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

/// Uniform double in [0, 1) that depends only on the key.
double keyed_uniform(std::uint64_t seed, std::uint64_t index, std::string_view key);

double uniform01(Rng& rng);
double standard_normal(Rng& rng);
std::size_t uniform_index(Rng& rng, std::size_t n);  // [0, n)

}  // namespace preflab
