#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "softerr/network.hpp"
#include "softerr/tensor.hpp"

namespace softerr {

uint64_t fnv1a64(std::span<const uint8_t> bytes);

// Model container: UTF-8 key-value manifest describing the chain, quant
// configs and blob layout, followed by a raw little-endian float32 blob.
// Weights are stored in real form; quantization happens at prepare time.
void save_network(const NetworkGraph& net, const std::string& path);
NetworkGraph load_network(const std::string& path);

// Checksum of the serialized container (manifest + blob), usable as a cache
// key without touching the filesystem.
uint64_t model_checksum(const NetworkGraph& net);

struct Dataset {
  int count = 0;
  int rows = 0;
  int cols = 0;
  int class_count = 0;
  std::vector<double> pixels;  // count * rows * cols, scaled to [0, 1]
  std::vector<uint8_t> labels;

  RealTensor image(int index) const;  // {1, rows, cols}
  uint64_t checksum() const;
};

// IDX pair: big-endian magic 0x00000803 for images (ubyte, 3 dims) and
// 0x00000801 for labels (ubyte, 1 dim). Counts must agree.
Dataset load_idx_dataset(const std::string& images_path,
                         const std::string& labels_path);

void write_idx_images(const std::string& path, int count, int rows, int cols,
                      std::span<const uint8_t> bytes);
void write_idx_labels(const std::string& path,
                      std::span<const uint8_t> labels);

// Clean-run reference table: per-image logits and argmax plus per-image,
// per-layer output variances. Cached on disk keyed by (model checksum,
// dataset checksum); a stale key recomputes and overwrites.
struct GoldenOutputs {
  uint64_t model_sum = 0;
  uint64_t data_sum = 0;
  int image_count = 0;
  int class_count = 0;
  int layer_count = 0;
  std::vector<double> logits;     // image_count * class_count
  std::vector<int32_t> top_class; // image_count
  std::vector<double> layer_var;  // image_count * layer_count

  std::span<const double> image_logits(int i) const;
  double logit_variance(int i) const;  // last layer's entry
};

GoldenOutputs compute_golden_outputs(const PreparedNetwork& prep,
                                     const Dataset& data);

GoldenOutputs cache_golden_outputs(const PreparedNetwork& prep,
                                   const Dataset& data,
                                   const std::string& cache_path);

}  // namespace softerr
