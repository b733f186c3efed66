#pragma once

#include <cstdint>
#include <string>

#include "softerr/model_io.hpp"

namespace softerr {

// Synthetic ten-class glyph dataset in the same shape as the classic 28x28
// handwritten-digit sets: seven-segment style digits with per-image shift,
// per-segment intensity variation and Gaussian pixel noise. Classes are
// exactly balanced when count is a multiple of 10. Fully deterministic for
// a given (seed, split_tag, count).
struct GlyphDatasetConfig {
  int count = 2000;
  uint64_t seed = 1;
  uint64_t split_tag = 0;  // decorrelates train/test draws under one seed
  double noise_sd = 0.15;
  int max_shift = 3;
};

Dataset generate_glyph_dataset(const GlyphDatasetConfig& cfg);

// Writes fixture-{train,test}-{images,labels}.idx under dir using the IDX
// writers; returns the four paths in that order.
struct FixtureDatasetPaths {
  std::string train_images, train_labels, test_images, test_labels;
};

FixtureDatasetPaths write_fixture_dataset(const std::string& dir,
                                          int train_count, int test_count,
                                          uint64_t seed);

}  // namespace softerr
