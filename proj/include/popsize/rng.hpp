#pragma once

#include <cstdint>
#include <random>

namespace popsize {

// splitmix64 finalizer; used to derive well-separated seeds for
// chains / simulated datasets from one base seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(base ^ splitmix64(stream + 0x632be59bd9b4e019ull));
}

// Thin wrapper around mt19937_64. Distributions are constructed per call so
// that no hidden state (e.g. the cached second normal) leaks between draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform() {
    return std::uniform_real_distribution<double>(0.0, 1.0)(gen_);
  }

  double uniform(double lo, double hi) {
    if (lo == hi) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }

  // inclusive bounds
  long uniform_int(long lo, long hi) {
    return std::uniform_int_distribution<long>(lo, hi)(gen_);
  }

  double normal(double mean, double sd) {
    return std::normal_distribution<double>(mean, sd)(gen_);
  }

  double gamma(double shape, double scale) {
    return std::gamma_distribution<double>(shape, scale)(gen_);
  }

  // InverseGamma(shape, scale) with density scale^shape / Gamma(shape)
  // * x^{-shape-1} exp(-scale/x).
  double inv_gamma(double shape, double scale) {
    return 1.0 / gamma(shape, 1.0 / scale);
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace popsize
