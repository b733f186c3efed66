#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace softerr {

// Dense row-major real tensor. Shape dims are positive; data.size() equals
// the product of dims.
struct RealTensor {
  std::vector<int> shape;
  std::vector<double> data;

  int64_t size() const { return static_cast<int64_t>(data.size()); }

  static RealTensor zeros(std::vector<int> shape);
};

// Validates shape/data agreement; throws InvalidArgument on mismatch.
RealTensor make_tensor(std::vector<int> shape, std::vector<double> data);

int64_t shape_size(const std::vector<int>& shape);

// Throws InvalidArgument naming the first offending flat index.
void validate_finite(const RealTensor& t, const std::string& what);

struct Moments {
  double mean = 0.0;
  double variance = 0.0;  // population variance (divide by n)
};

Moments tensor_stats(const RealTensor& t);

// Root mean square of the entries themselves (uncentered); the argument is a
// deviation tensor, so no mean is removed.
double rmse(const RealTensor& delta);

// rmse(delta) / sqrt(population variance of reference). Throws
// DegenerateInput when the reference variance is zero.
double rrmse(const RealTensor& delta, const RealTensor& reference);

// Deterministic order-stable summation; blocks of 64 summed recursively to
// bound floating-point drift on long accumulations.
double pairwise_sum(std::span<const double> xs);

}  // namespace softerr
