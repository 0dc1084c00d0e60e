#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace selfseg {

// Exit-code-bearing error categories (see cli).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// splitmix64; used to derive independent stream seeds from (seed, tags).
inline uint64_t mix_seed(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) { return mix_seed(mix_seed(a) ^ b); }
inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
  return mix_seed(mix_seed(a, b) ^ c);
}

inline std::mt19937_64 make_rng(uint64_t seed) { return std::mt19937_64(mix_seed(seed)); }

// Uniform in [lo, hi) with a fixed, library-independent construction.
inline double uniform(std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  return lo + (hi - lo) * ((rng() >> 11) * 0x1.0p-53);
}

inline bool bernoulli(std::mt19937_64& rng, double p) { return uniform(rng) < p; }

inline int uniform_int(std::mt19937_64& rng, int lo, int hi_inclusive) {
  uint64_t span = uint64_t(hi_inclusive - lo) + 1;
  return lo + int(rng() % span);
}

inline double normal(std::mt19937_64& rng) {
  // Box-Muller, deterministic across standard libraries.
  double u1 = uniform(rng);
  double u2 = uniform(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

// FNV-1a, used for artifact content hashes and label-set fingerprints.
inline uint64_t fnv1a(std::string_view data, uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(uint64_t v);
uint64_t hash_file(const std::string& path);  // throws MissingArtifactError

}  // namespace selfseg
