#include "softerr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "softerr/errors.hpp"

namespace softerr {

namespace {

uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

uint64_t mix_seed(std::initializer_list<uint64_t> parts) {
  uint64_t state = 0x243f6a8885a308d3ULL;
  uint64_t out = splitmix64(state);
  for (uint64_t p : parts) {
    state ^= p;
    out = splitmix64(state);
  }
  return out;
}

uint64_t Rng::below(uint64_t bound) {
  if (bound == 0) throw InvalidArgument("Rng::below: bound must be positive");
  const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % bound;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // u1 in (0, 1] keeps the log finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * 3.141592653589793238462643 * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

int64_t Rng::binomial(int64_t n, double p) {
  if (n < 0) throw InvalidArgument("Rng::binomial: n must be non-negative");
  if (!(p >= 0.0 && p <= 1.0))
    throw InvalidArgument("Rng::binomial: p must lie in [0, 1]");
  if (n == 0 || p == 0.0) return 0;
  if (p == 1.0) return n;

  const double lambda = static_cast<double>(n) * p;
  if (lambda < 1000.0) {
    double f = std::exp(static_cast<double>(n) * std::log1p(-p));
    if (f > 0.0) {
      const double ratio = p / (1.0 - p);
      double u = uniform();
      double cdf = f;
      int64_t k = 0;
      while (u > cdf && k < n) {
        f *= static_cast<double>(n - k) / static_cast<double>(k + 1) * ratio;
        ++k;
        cdf += f;
      }
      return k;
    }
  }
  const double sd = std::sqrt(lambda * (1.0 - p));
  const int64_t k = std::llround(lambda + normal() * sd);
  return std::clamp<int64_t>(k, 0, n);
}

std::vector<uint64_t> Rng::sample_distinct(uint64_t population, uint64_t k) {
  if (k > population)
    throw InvalidArgument("Rng::sample_distinct: k exceeds population");
  std::vector<uint64_t> out;
  out.reserve(k);
  if (k == population) {
    for (uint64_t i = 0; i < population; ++i) out.push_back(i);
    return out;
  }
  if (k > population / 8) {
    // Dense draw: partial Fisher-Yates over a materialized index range.
    std::vector<uint64_t> idx(population);
    for (uint64_t i = 0; i < population; ++i) idx[i] = i;
    for (uint64_t i = 0; i < k; ++i) {
      const uint64_t j = i + below(population - i);
      std::swap(idx[i], idx[j]);
    }
    out.assign(idx.begin(), idx.begin() + static_cast<ptrdiff_t>(k));
  } else {
    // Sparse draw: Floyd's algorithm.
    std::unordered_set<uint64_t> seen;
    seen.reserve(static_cast<size_t>(k) * 2);
    for (uint64_t j = population - k; j < population; ++j) {
      const uint64_t t = below(j + 1);
      if (!seen.insert(t).second) {
        seen.insert(j);
        out.push_back(j);
      } else {
        out.push_back(t);
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace softerr
