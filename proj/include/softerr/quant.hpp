#pragma once

#include <cstdint>
#include <vector>

#include "softerr/tensor.hpp"

namespace softerr {

// Symmetric linear quantization: step = bound / 2^(bits-1), word range
// [-2^(bits-1), 2^(bits-1) - 1], two's complement words.
struct QuantConfig {
  int bits = 8;        // 8 or 16
  double bound = 1.0;  // > 0, finite
};

void validate(const QuantConfig& cfg);

struct QuantTensor {
  std::vector<int> shape;
  std::vector<int32_t> words;
  QuantConfig config;

  int64_t size() const { return static_cast<int64_t>(words.size()); }
};

// floor(2^(bits-1) * x / bound), saturated to the word range. Values at or
// beyond +bound land on the top code; non-finite input throws with its index.
int32_t quantize_value(double x, const QuantConfig& cfg);
QuantTensor quantize(const RealTensor& t, const QuantConfig& cfg);

double dequantize_value(int32_t word, const QuantConfig& cfg);
RealTensor dequantize(const QuantTensor& q);

// Toggles one bit of the two's complement word in place. Bit `bits-1` is the
// sign bit; toggling bit b always moves the dequantized value by exactly
// bound / 2^(bits-1-b) ... i.e. 2^b quantization steps, regardless of the
// other bits.
void toggle_bit(QuantTensor& q, int64_t word_index, int bit);

// Copying flavor of toggle_bit.
QuantTensor flip_bit(QuantTensor q, int64_t word_index, int bit);

}  // namespace softerr
