#include "softerr/dataset_gen.hpp"

#include <algorithm>
#include <cmath>

#include "softerr/errors.hpp"
#include "softerr/rng.hpp"

namespace softerr {

namespace {

constexpr int kSide = 28;

// Seven-segment encoding per digit; segments A..G = bits 0..6.
constexpr uint8_t kSegments[10] = {
    0b0111111,  // 0: A B C D E F
    0b0000110,  // 1: B C
    0b1011011,  // 2: A B G E D
    0b1001111,  // 3: A B G C D
    0b1100110,  // 4: F G B C
    0b1101101,  // 5: A F G C D
    0b1111101,  // 6: A F G E C D
    0b0000111,  // 7: A B C
    0b1111111,  // 8: all
    0b1101111,  // 9: A B C D F G
};

struct Rect {
  int y0, y1, x0, x1;  // inclusive
};

// Glyph box: columns 9..18, rows 4..22, stroke thickness 3.
constexpr Rect kSegmentRects[7] = {
    {4, 6, 9, 18},     // A: top bar
    {4, 14, 16, 18},   // B: top-right
    {12, 22, 16, 18},  // C: bottom-right
    {20, 22, 9, 18},   // D: bottom bar
    {12, 22, 9, 11},   // E: bottom-left
    {4, 14, 9, 11},    // F: top-left
    {12, 14, 9, 18},   // G: middle bar
};

void render_glyph(int digit, Rng& rng, double noise_sd, int max_shift,
                  uint8_t* out) {
  double canvas[kSide * kSide] = {};
  const int dx = static_cast<int>(rng.below(2 * max_shift + 1)) - max_shift;
  const int dy = static_cast<int>(rng.below(2 * max_shift + 1)) - max_shift;
  const double contrast = 0.8 + 0.2 * rng.uniform();
  for (int s = 0; s < 7; ++s) {
    if (!(kSegments[digit] >> s & 1)) continue;
    const double level = contrast * (0.65 + 0.35 * rng.uniform());
    const Rect r = kSegmentRects[s];
    for (int y = r.y0; y <= r.y1; ++y) {
      const int yy = y + dy;
      if (yy < 0 || yy >= kSide) continue;
      for (int x = r.x0; x <= r.x1; ++x) {
        const int xx = x + dx;
        if (xx < 0 || xx >= kSide) continue;
        canvas[yy * kSide + xx] = level;
      }
    }
  }
  for (int i = 0; i < kSide * kSide; ++i) {
    const double v =
        std::clamp(canvas[i] + noise_sd * rng.normal(), 0.0, 1.0);
    out[i] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
}

}  // namespace

Dataset generate_glyph_dataset(const GlyphDatasetConfig& cfg) {
  if (cfg.count <= 0)
    throw InvalidArgument("generate_glyph_dataset: count must be positive");
  if (cfg.max_shift < 0 || cfg.max_shift > 5)
    throw InvalidArgument("generate_glyph_dataset: max_shift must be in [0,5]");
  Dataset d;
  d.count = cfg.count;
  d.rows = kSide;
  d.cols = kSide;
  d.class_count = 10;
  d.labels.resize(static_cast<size_t>(cfg.count));
  for (int i = 0; i < cfg.count; ++i)
    d.labels[static_cast<size_t>(i)] = static_cast<uint8_t>(i % 10);
  Rng order_rng(mix_seed({cfg.seed, cfg.split_tag, 0x6f726472ULL}));
  for (int i = cfg.count - 1; i > 0; --i) {
    const int j = static_cast<int>(order_rng.below(static_cast<uint64_t>(i) + 1));
    std::swap(d.labels[static_cast<size_t>(i)], d.labels[static_cast<size_t>(j)]);
  }
  d.pixels.resize(static_cast<size_t>(cfg.count) * kSide * kSide);
  std::vector<uint8_t> buf(kSide * kSide);
  for (int i = 0; i < cfg.count; ++i) {
    Rng rng(mix_seed({cfg.seed, cfg.split_tag, static_cast<uint64_t>(i),
                      0x676c7966ULL}));
    render_glyph(d.labels[static_cast<size_t>(i)], rng, cfg.noise_sd,
                 cfg.max_shift, buf.data());
    for (int p = 0; p < kSide * kSide; ++p)
      d.pixels[static_cast<size_t>(i) * kSide * kSide + p] =
          static_cast<double>(buf[static_cast<size_t>(p)]) / 255.0;
  }
  return d;
}

FixtureDatasetPaths write_fixture_dataset(const std::string& dir,
                                          int train_count, int test_count,
                                          uint64_t seed) {
  FixtureDatasetPaths paths;
  paths.train_images = dir + "/fixture-train-images.idx";
  paths.train_labels = dir + "/fixture-train-labels.idx";
  paths.test_images = dir + "/fixture-test-images.idx";
  paths.test_labels = dir + "/fixture-test-labels.idx";
  const auto emit = [&](int count, uint64_t tag, const std::string& img_path,
                        const std::string& lab_path) {
    GlyphDatasetConfig cfg;
    cfg.count = count;
    cfg.seed = seed;
    cfg.split_tag = tag;
    const Dataset d = generate_glyph_dataset(cfg);
    std::vector<uint8_t> bytes(d.pixels.size());
    for (size_t i = 0; i < d.pixels.size(); ++i)
      bytes[i] = static_cast<uint8_t>(std::lround(d.pixels[i] * 255.0));
    write_idx_images(img_path, d.count, d.rows, d.cols, bytes);
    write_idx_labels(lab_path, d.labels);
  };
  emit(train_count, 0x7472ULL, paths.train_images, paths.train_labels);
  emit(test_count, 0x7465ULL, paths.test_images, paths.test_labels);
  return paths;
}

}  // namespace softerr
