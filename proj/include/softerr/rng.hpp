#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace softerr {

// All randomness in the project flows through this wrapper so that results
// are reproducible bit-for-bit: mt19937_64 is pinned by the standard, and the
// variate transforms below are our own (std::*_distribution is
// implementation-defined and would break cross-toolchain determinism).
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [0, bound), rejection-free of modulo bias.
  uint64_t below(uint64_t bound);

  // Standard normal via Box-Muller; the spare variate is cached.
  double normal();

  // Exact CDF inversion for modest means; deterministic clamped normal
  // approximation once the inversion would be too slow or would underflow.
  int64_t binomial(int64_t n, double p);

  // k distinct indices from [0, population), returned sorted.
  std::vector<uint64_t> sample_distinct(uint64_t population, uint64_t k);

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Folds trial coordinates (campaign seed, trial index, layer index, stream
// salt) into one stream seed. Streams with any differing coordinate are
// decorrelated, so trial results never depend on scheduling order.
uint64_t mix_seed(std::initializer_list<uint64_t> parts);

}  // namespace softerr
