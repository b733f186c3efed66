#include "softerr/tensor.hpp"

#include <cmath>

#include "softerr/errors.hpp"

namespace softerr {

int64_t shape_size(const std::vector<int>& shape) {
  if (shape.empty()) throw InvalidArgument("shape_size: empty shape");
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw InvalidArgument("shape_size: non-positive dim");
    n *= d;
  }
  return n;
}

RealTensor RealTensor::zeros(std::vector<int> shape) {
  RealTensor t;
  const int64_t n = shape_size(shape);
  t.shape = std::move(shape);
  t.data.assign(static_cast<size_t>(n), 0.0);
  return t;
}

RealTensor make_tensor(std::vector<int> shape, std::vector<double> data) {
  const int64_t n = shape_size(shape);
  if (n != static_cast<int64_t>(data.size()))
    throw InvalidArgument("make_tensor: data size does not match shape");
  RealTensor t;
  t.shape = std::move(shape);
  t.data = std::move(data);
  return t;
}

void validate_finite(const RealTensor& t, const std::string& what) {
  for (size_t i = 0; i < t.data.size(); ++i) {
    if (!std::isfinite(t.data[i]))
      throw InvalidArgument(what + ": non-finite value at index " +
                            std::to_string(i));
  }
}

double pairwise_sum(std::span<const double> xs) {
  if (xs.size() <= 64) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  const size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

Moments tensor_stats(const RealTensor& t) {
  if (t.data.empty()) throw InvalidArgument("tensor_stats: empty tensor");
  const double n = static_cast<double>(t.data.size());
  const double mean = pairwise_sum(t.data) / n;
  std::vector<double> sq(t.data.size());
  for (size_t i = 0; i < t.data.size(); ++i) {
    const double d = t.data[i] - mean;
    sq[i] = d * d;
  }
  return Moments{mean, pairwise_sum(sq) / n};
}

double rmse(const RealTensor& delta) {
  if (delta.data.empty()) throw InvalidArgument("rmse: empty tensor");
  std::vector<double> sq(delta.data.size());
  for (size_t i = 0; i < delta.data.size(); ++i)
    sq[i] = delta.data[i] * delta.data[i];
  return std::sqrt(pairwise_sum(sq) / static_cast<double>(sq.size()));
}

double rrmse(const RealTensor& delta, const RealTensor& reference) {
  const Moments ref = tensor_stats(reference);
  if (ref.variance <= 0.0)
    throw DegenerateInput("rrmse: reference tensor has zero variance");
  return rmse(delta) / std::sqrt(ref.variance);
}

}  // namespace softerr
