#pragma once

#include <cstdint>
#include <vector>

#include "softerr/model_io.hpp"
#include "softerr/network.hpp"

namespace softerr {

// Minimal SGD trainer for the desk-scale fixtures. Training runs in the real
// (unquantized) domain; quant configs are assigned afterwards by
// calibrate_quantization. Deterministic for a given seed.
struct TrainConfig {
  int epochs = 3;
  int batch_size = 32;
  double learning_rate = 0.1;
  double lr_decay = 0.5;  // per epoch
  uint64_t seed = 7;
};

struct TrainReport {
  std::vector<double> epoch_loss;      // mean cross-entropy per epoch
  std::vector<double> epoch_accuracy;  // test accuracy per epoch
  double test_accuracy = 0.0;          // final
};

TrainReport train_fixture(NetworkGraph& net, const Dataset& train,
                          const Dataset& test, const TrainConfig& cfg);

// Accuracy of the real-domain (unquantized) network on a dataset.
double real_accuracy(const NetworkGraph& net, const Dataset& data);

// Assigns per-layer symmetric quant configs: activation bound at the given
// percentile of |activation| pooled over calibration images, weight bound at
// max |weight| per layer.
void calibrate_quantization(NetworkGraph& net, const Dataset& calib, int bits,
                            double percentile = 0.999, int max_images = 512);

// Chain specs for the two fixtures: a 5-parametric-layer conv net and an
// 8-parametric-layer variant, both for 28x28 single-channel, 10 classes.
std::vector<LayerSpec> fixture_layers_small();
std::vector<LayerSpec> fixture_layers_deep();

}  // namespace softerr
