#include "softerr/quant.hpp"

#include <cmath>
#include <string>

#include "softerr/errors.hpp"

namespace softerr {

void validate(const QuantConfig& cfg) {
  if (cfg.bits != 8 && cfg.bits != 16)
    throw InvalidArgument("QuantConfig: bits must be 8 or 16");
  if (!(cfg.bound > 0.0) || !std::isfinite(cfg.bound))
    throw InvalidArgument("QuantConfig: bound must be positive and finite");
}

int32_t quantize_value(double x, const QuantConfig& cfg) {
  validate(cfg);
  if (!std::isfinite(x))
    throw InvalidArgument("quantize_value: non-finite input");
  const double scale = static_cast<double>(1 << (cfg.bits - 1));
  const double w = std::floor(scale * x / cfg.bound);
  const double lo = -scale;
  const double hi = scale - 1.0;
  if (w < lo) return static_cast<int32_t>(lo);
  if (w > hi) return static_cast<int32_t>(hi);
  return static_cast<int32_t>(w);
}

QuantTensor quantize(const RealTensor& t, const QuantConfig& cfg) {
  validate(cfg);
  QuantTensor q;
  q.shape = t.shape;
  q.config = cfg;
  q.words.resize(t.data.size());
  const double scale = static_cast<double>(1 << (cfg.bits - 1));
  const double lo = -scale;
  const double hi = scale - 1.0;
  for (size_t i = 0; i < t.data.size(); ++i) {
    const double x = t.data[i];
    if (!std::isfinite(x))
      throw InvalidArgument("quantize: non-finite value at index " +
                            std::to_string(i));
    double w = std::floor(scale * x / cfg.bound);
    if (w < lo) w = lo;
    if (w > hi) w = hi;
    q.words[i] = static_cast<int32_t>(w);
  }
  return q;
}

double dequantize_value(int32_t word, const QuantConfig& cfg) {
  validate(cfg);
  const double scale = static_cast<double>(1 << (cfg.bits - 1));
  return static_cast<double>(word) * cfg.bound / scale;
}

RealTensor dequantize(const QuantTensor& q) {
  validate(q.config);
  RealTensor t;
  t.shape = q.shape;
  t.data.resize(q.words.size());
  const double step =
      q.config.bound / static_cast<double>(1 << (q.config.bits - 1));
  for (size_t i = 0; i < q.words.size(); ++i)
    t.data[i] = static_cast<double>(q.words[i]) * step;
  return t;
}

void toggle_bit(QuantTensor& q, int64_t word_index, int bit) {
  if (word_index < 0 || word_index >= q.size())
    throw InvalidArgument("toggle_bit: word index out of range");
  if (bit < 0 || bit >= q.config.bits)
    throw InvalidArgument("toggle_bit: bit index out of range");
  const uint32_t width_mask = (q.config.bits == 8) ? 0xffu : 0xffffu;
  const uint32_t sign_bit = 1u << (q.config.bits - 1);
  uint32_t u = static_cast<uint32_t>(q.words[word_index]) & width_mask;
  u ^= 1u << bit;
  int32_t value;
  if (u & sign_bit)
    value = static_cast<int32_t>(u | ~width_mask);
  else
    value = static_cast<int32_t>(u);
  q.words[word_index] = value;
}

QuantTensor flip_bit(QuantTensor q, int64_t word_index, int bit) {
  toggle_bit(q, word_index, bit);
  return q;
}

}  // namespace softerr
