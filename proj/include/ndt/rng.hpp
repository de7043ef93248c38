#ifndef NDT_RNG_HPP_
#define NDT_RNG_HPP_

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace ndt {

// Stable 64-bit hashes used to derive per-purpose seeds from one global seed.
// These are fixed algorithms (FNV-1a + splitmix64), not std::hash, so derived
// seeds are identical across platforms and standard libraries.
uint64_t fnv1a64(std::string_view bytes);
uint64_t splitmix64(uint64_t x);
uint64_t stable_hash64(uint64_t seed, std::string_view label);
uint64_t stable_hash64(uint64_t seed, std::string_view label, uint64_t index);

// Seeded generator with explicit, implementation-independent draw helpers.
// All randomness in the project flows through this class; distributions are
// realized by inverse-CDF so that streams are reproducible byte-for-byte.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n); n must be positive.
  uint64_t uniform_int(uint64_t n);

  // Exponential with the given mean via inverse CDF.
  double exponential(double mean);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

// t = -mean * ln(1 - u) for u in [0, 1).
double exp_inverse_cdf(double mean, double u);

}  // namespace ndt

#endif  // NDT_RNG_HPP_
