#include "ndt/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace ndt {

uint64_t fnv1a64(std::string_view bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t stable_hash64(uint64_t seed, std::string_view label) {
  return splitmix64(splitmix64(seed) ^ fnv1a64(label));
}

uint64_t stable_hash64(uint64_t seed, std::string_view label, uint64_t index) {
  return splitmix64(stable_hash64(seed, label) + splitmix64(index));
}

uint64_t Rng::uniform_int(uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_int: n must be positive");
  const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t r;
  do {
    r = gen_();
  } while (r >= limit);
  return r % n;
}

double Rng::exponential(double mean) { return exp_inverse_cdf(mean, uniform()); }

double exp_inverse_cdf(double mean, double u) {
  if (mean <= 0) throw std::invalid_argument("exp_inverse_cdf: mean must be positive");
  if (u < 0 || u >= 1) throw std::invalid_argument("exp_inverse_cdf: u must be in [0,1)");
  return -mean * std::log1p(-u);
}

}  // namespace ndt
