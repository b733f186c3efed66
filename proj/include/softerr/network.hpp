#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "softerr/quant.hpp"
#include "softerr/tensor.hpp"

namespace softerr {

enum class LayerKind { Conv2D, FullyConnected, ReLU, MaxPool, AvgPool, Flatten };

const char* layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& name);

// One layer of a linear chain. Field use depends on kind; unused fields stay
// at their defaults. Quant configs are applied only when the network is
// prepared in quantized mode.
struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;

  // Conv2D
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int padding = 0;

  // FullyConnected
  int in_features = 0;
  int out_features = 0;

  // MaxPool / AvgPool (square window, stride == window)
  int window = 0;

  bool has_act_quant = false;
  QuantConfig act_quant;
  bool has_weight_quant = false;
  QuantConfig weight_quant;

  bool parametric() const {
    return kind == LayerKind::Conv2D || kind == LayerKind::FullyConnected;
  }

  // Fan-in of one output element.
  int64_t fan_in() const;

  static LayerSpec conv(int in_ch, int out_ch, int kernel, int stride = 1,
                        int padding = 0);
  static LayerSpec fully_connected(int in_features, int out_features);
  static LayerSpec relu();
  static LayerSpec max_pool(int window);
  static LayerSpec avg_pool(int window);
  static LayerSpec flatten();
};

// Linear chain of layers over single-image tensors (no batch dim). Weights
// and biases are indexed by layer; non-parametric layers hold empty tensors.
struct NetworkGraph {
  std::vector<int> input_shape;  // {channels, height, width}
  std::vector<LayerSpec> layers;
  std::vector<RealTensor> weights;
  std::vector<RealTensor> biases;
  int class_count = 0;
};

// Output shape of every layer; validates the shape chain (agreement between
// consecutive layers, positive dims, final layer size == class_count when
// class_count > 0). Throws InvalidArgument on any violation.
std::vector<std::vector<int>> layer_output_shapes(const NetworkGraph& net);

// Everything layer_output_shapes checks, plus weight/bias tensor shapes and
// quantizer configs.
void validate_network(const NetworkGraph& net);

// Weights drawn N(0, (std_scale/sqrt(fan_in))^2) from per-layer seeded
// streams, biases zero. The same seed always yields the same network.
NetworkGraph init_random_network(std::vector<LayerSpec> layers,
                                 std::vector<int> input_shape, int class_count,
                                 uint64_t seed, double std_scale = 1.0);

struct PrepareOptions {
  bool quantized = true;
  double bound_scale = 1.0;  // multiplies every stored quant bound
  int bits_override = 0;     // 0 keeps stored widths; else 8 or 16
};

// Immutable per-run view of a network: quantized weight words and the
// effective (dequantized) weights the forward pass reads. Fault trials copy
// individual tensors from here and never mutate shared state.
struct PreparedNetwork {
  NetworkGraph net;
  bool quantized = true;
  std::vector<std::vector<int>> shapes;          // per-layer output shapes
  std::vector<QuantConfig> act_cfg;              // effective; valid if has_act
  std::vector<char> has_act;
  std::vector<QuantTensor> weight_words;         // parametric+quantized only
  std::vector<RealTensor> effective_weights;     // what forward multiplies by

  int layer_count() const { return static_cast<int>(net.layers.size()); }
};

PreparedNetwork prepare_network(const NetworkGraph& net,
                                const PrepareOptions& opts = {});

// Activation outputs of layers [start_layer, N). layer_output(l) is valid
// for l >= start_layer.
struct ActivationTrace {
  int start_layer = 0;
  std::vector<RealTensor> outputs;

  const RealTensor& layer_output(int layer) const;
  int end_layer() const {
    return start_layer + static_cast<int>(outputs.size());
  }
  const RealTensor& logits() const { return outputs.back(); }
};

// Called on each quantized activation tensor before dequantization; the
// mutation feeds the rest of the forward pass.
using ActivationHook = std::function<void(int layer, QuantTensor& words)>;

struct ForwardOverrides {
  // Replacement effective weights for selected layers (already dequantized).
  const std::unordered_map<int, RealTensor>* weights = nullptr;
  const ActivationHook* act_hook = nullptr;
};

ActivationTrace forward_full(const PreparedNetwork& prep,
                             const RealTensor& input,
                             const ForwardOverrides& ovr = {});

// Resumes the chain at start_layer, feeding `activation` as that layer's
// input (i.e. the output of layer start_layer - 1, or the image for 0).
// Splicing a full trace's activation back in reproduces the full trace.
ActivationTrace forward_from(const PreparedNetwork& prep, int start_layer,
                             const RealTensor& activation,
                             const ForwardOverrides& ovr = {});

struct LayerDelta {
  double rmse = 0.0;
  double rrmse = 0.0;
};

// Per-layer deviation of `faulty` against `golden` over their common layer
// range; rrmse is taken against the golden layer's standard deviation.
std::vector<LayerDelta> delta_trace(const ActivationTrace& golden,
                                    const ActivationTrace& faulty);

int argmax_index(const RealTensor& logits);

}  // namespace softerr
