#include "preflab/rng.hpp"

#include "preflab/error.hpp"

namespace preflab {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::ParseError: return "parse_error";
    case ErrorCode::DimensionMismatch: return "dimension_mismatch";
    case ErrorCode::DuplicateId: return "duplicate_id";
    case ErrorCode::IoError: return "io_error";
    case ErrorCode::NonFinite: return "non_finite";
    case ErrorCode::EmptyInput: return "empty_input";
    case ErrorCode::ConfigError: return "config_error";
    case ErrorCode::NotFound: return "not_found";
    case ErrorCode::Conflict: return "conflict";
  }
  return "unknown";
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view stream) {
  return mix64(mix64(base) ^ fnv1a64(stream));
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return mix64(mix64(base) + mix64(index ^ 0x5851f42d4c957f2dULL));
}

double keyed_uniform(std::uint64_t seed, std::uint64_t index, std::string_view key) {
  const std::uint64_t h = mix64(derive_seed(seed, index) ^ fnv1a64(key));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double standard_normal(Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(rng);
}

}  // namespace preflab
