#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace trackteller::numcore {

// Counter-based deterministic generator. Draw i is a pure function of
// (key, i), so streams can be split by name/tag without coupling the
// draw order of independent consumers. Same seed => identical sequence
// on every platform (integer mixing + IEEE doubles only).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(mix_(seed ^ 0x9e3779b97f4a7c15ull)) {}

  // Derives an independent child stream; children with distinct tags are
  // decorrelated from each other and from the parent.
  Rng child(std::uint64_t tag) const { return Rng(key_, mix_(key_ ^ mix_(tag))); }
  Rng child(std::string_view tag) const { return child(fnv1a(tag)); }

  std::uint64_t next_u64() { return mix_(key_ + 0x9e3779b97f4a7c15ull * ++ctr_); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; two uniforms per draw, no cached state.
  double gauss() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double gauss(double mean, double sigma) { return mean + sigma * gauss(); }

  // Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) { return n ? next_u64() % n : 0; }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return h;
  }

 private:
  Rng(std::uint64_t, std::uint64_t derived_key) : key_(derived_key) {}

  // splitmix64 finalizer.
  static std::uint64_t mix_(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t ctr_ = 0;
};

}  // namespace trackteller::numcore
