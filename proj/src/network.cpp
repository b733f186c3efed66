#include "softerr/network.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "softerr/errors.hpp"
#include "softerr/rng.hpp"

namespace softerr {

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv2D: return "conv";
    case LayerKind::FullyConnected: return "fc";
    case LayerKind::ReLU: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::AvgPool: return "avgpool";
    case LayerKind::Flatten: return "flatten";
  }
  throw InvalidArgument("layer_kind_name: unknown kind");
}

LayerKind layer_kind_from_name(const std::string& name) {
  if (name == "conv") return LayerKind::Conv2D;
  if (name == "fc") return LayerKind::FullyConnected;
  if (name == "relu") return LayerKind::ReLU;
  if (name == "maxpool") return LayerKind::MaxPool;
  if (name == "avgpool") return LayerKind::AvgPool;
  if (name == "flatten") return LayerKind::Flatten;
  throw InvalidArgument("layer_kind_from_name: unknown kind '" + name + "'");
}

int64_t LayerSpec::fan_in() const {
  switch (kind) {
    case LayerKind::Conv2D:
      return static_cast<int64_t>(kernel) * kernel * in_channels;
    case LayerKind::FullyConnected:
      return in_features;
    default:
      return 0;
  }
}

LayerSpec LayerSpec::conv(int in_ch, int out_ch, int kernel, int stride,
                          int padding) {
  LayerSpec l;
  l.kind = LayerKind::Conv2D;
  l.in_channels = in_ch;
  l.out_channels = out_ch;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  return l;
}

LayerSpec LayerSpec::fully_connected(int in_features, int out_features) {
  LayerSpec l;
  l.kind = LayerKind::FullyConnected;
  l.in_features = in_features;
  l.out_features = out_features;
  return l;
}

LayerSpec LayerSpec::relu() {
  LayerSpec l;
  l.kind = LayerKind::ReLU;
  return l;
}

LayerSpec LayerSpec::max_pool(int window) {
  LayerSpec l;
  l.kind = LayerKind::MaxPool;
  l.window = window;
  return l;
}

LayerSpec LayerSpec::avg_pool(int window) {
  LayerSpec l;
  l.kind = LayerKind::AvgPool;
  l.window = window;
  return l;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec l;
  l.kind = LayerKind::Flatten;
  return l;
}

namespace {

std::vector<int> infer_output_shape(const LayerSpec& l,
                                    const std::vector<int>& in, int index) {
  const std::string where = "layer " + std::to_string(index);
  switch (l.kind) {
    case LayerKind::Conv2D: {
      if (in.size() != 3)
        throw InvalidArgument(where + ": conv needs a {c,h,w} input");
      if (l.in_channels <= 0 || l.out_channels <= 0 || l.kernel <= 0 ||
          l.stride <= 0 || l.padding < 0)
        throw InvalidArgument(where + ": bad conv geometry");
      if (in[0] != l.in_channels)
        throw InvalidArgument(where + ": conv channel mismatch");
      const int h = (in[1] + 2 * l.padding - l.kernel) / l.stride + 1;
      const int w = (in[2] + 2 * l.padding - l.kernel) / l.stride + 1;
      if (h <= 0 || w <= 0)
        throw InvalidArgument(where + ": conv output collapses");
      return {l.out_channels, h, w};
    }
    case LayerKind::FullyConnected: {
      if (l.in_features <= 0 || l.out_features <= 0)
        throw InvalidArgument(where + ": bad fc geometry");
      if (shape_size(in) != l.in_features)
        throw InvalidArgument(where + ": fc input size mismatch");
      return {l.out_features};
    }
    case LayerKind::ReLU:
      return in;
    case LayerKind::MaxPool:
    case LayerKind::AvgPool: {
      if (in.size() != 3)
        throw InvalidArgument(where + ": pool needs a {c,h,w} input");
      if (l.window <= 0) throw InvalidArgument(where + ": bad pool window");
      if (in[1] % l.window != 0 || in[2] % l.window != 0)
        throw InvalidArgument(where + ": pool window must tile the input");
      return {in[0], in[1] / l.window, in[2] / l.window};
    }
    case LayerKind::Flatten:
      return {static_cast<int>(shape_size(in))};
  }
  throw InvalidArgument(where + ": unknown layer kind");
}

std::vector<int> weight_shape(const LayerSpec& l) {
  if (l.kind == LayerKind::Conv2D)
    return {l.out_channels, l.in_channels, l.kernel, l.kernel};
  return {l.out_features, l.in_features};
}

std::vector<int> bias_shape(const LayerSpec& l) {
  if (l.kind == LayerKind::Conv2D) return {l.out_channels};
  return {l.out_features};
}

}  // namespace

std::vector<std::vector<int>> layer_output_shapes(const NetworkGraph& net) {
  if (net.layers.empty())
    throw InvalidArgument("layer_output_shapes: network has no layers");
  if (net.input_shape.empty())
    throw InvalidArgument("layer_output_shapes: missing input shape");
  shape_size(net.input_shape);
  std::vector<std::vector<int>> shapes;
  shapes.reserve(net.layers.size());
  std::vector<int> cur = net.input_shape;
  for (size_t i = 0; i < net.layers.size(); ++i) {
    cur = infer_output_shape(net.layers[i], cur, static_cast<int>(i));
    shapes.push_back(cur);
  }
  if (net.class_count > 0 && shape_size(shapes.back()) != net.class_count)
    throw InvalidArgument("layer_output_shapes: final size != class_count");
  return shapes;
}

void validate_network(const NetworkGraph& net) {
  layer_output_shapes(net);
  if (net.weights.size() != net.layers.size() ||
      net.biases.size() != net.layers.size())
    throw InvalidArgument("validate_network: weight/bias table size mismatch");
  for (size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    const std::string where = "layer " + std::to_string(i);
    if (l.parametric()) {
      if (net.weights[i].shape != weight_shape(l))
        throw InvalidArgument(where + ": weight shape mismatch");
      if (net.biases[i].shape != bias_shape(l))
        throw InvalidArgument(where + ": bias shape mismatch");
      if (l.has_act_quant) validate(l.act_quant);
      if (l.has_weight_quant) validate(l.weight_quant);
    } else {
      if (!net.weights[i].data.empty() || !net.biases[i].data.empty())
        throw InvalidArgument(where + ": non-parametric layer carries weights");
    }
  }
}

NetworkGraph init_random_network(std::vector<LayerSpec> layers,
                                 std::vector<int> input_shape, int class_count,
                                 uint64_t seed, double std_scale) {
  NetworkGraph net;
  net.input_shape = std::move(input_shape);
  net.layers = std::move(layers);
  net.class_count = class_count;
  net.weights.resize(net.layers.size());
  net.biases.resize(net.layers.size());
  for (size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    if (!l.parametric()) continue;
    const double sd = std_scale / std::sqrt(static_cast<double>(l.fan_in()));
    Rng rng(mix_seed({seed, static_cast<uint64_t>(i), 0x77696e69ULL}));
    RealTensor w = RealTensor::zeros(weight_shape(l));
    for (double& x : w.data) x = sd * rng.normal();
    net.weights[i] = std::move(w);
    net.biases[i] = RealTensor::zeros(bias_shape(l));
  }
  validate_network(net);
  return net;
}

PreparedNetwork prepare_network(const NetworkGraph& net,
                                const PrepareOptions& opts) {
  validate_network(net);
  if (opts.bits_override != 0 && opts.bits_override != 8 &&
      opts.bits_override != 16)
    throw InvalidArgument("prepare_network: bits_override must be 0, 8 or 16");
  if (!(opts.bound_scale > 0.0))
    throw InvalidArgument("prepare_network: bound_scale must be positive");
  PreparedNetwork prep;
  prep.net = net;
  prep.quantized = opts.quantized;
  prep.shapes = layer_output_shapes(net);
  const size_t n = net.layers.size();
  prep.act_cfg.resize(n);
  prep.has_act.assign(n, 0);
  prep.weight_words.resize(n);
  prep.effective_weights.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const LayerSpec& l = net.layers[i];
    if (opts.quantized && l.has_act_quant) {
      QuantConfig cfg = l.act_quant;
      cfg.bound *= opts.bound_scale;
      if (opts.bits_override != 0) cfg.bits = opts.bits_override;
      validate(cfg);
      prep.act_cfg[i] = cfg;
      prep.has_act[i] = 1;
    }
    if (!l.parametric()) continue;
    if (opts.quantized && l.has_weight_quant) {
      QuantConfig cfg = l.weight_quant;
      cfg.bound *= opts.bound_scale;
      if (opts.bits_override != 0) cfg.bits = opts.bits_override;
      validate(cfg);
      prep.weight_words[i] = quantize(net.weights[i], cfg);
      prep.effective_weights[i] = dequantize(prep.weight_words[i]);
    } else {
      prep.effective_weights[i] = net.weights[i];
    }
  }
  return prep;
}

const RealTensor& ActivationTrace::layer_output(int layer) const {
  if (layer < start_layer || layer >= end_layer())
    throw InvalidArgument("ActivationTrace: layer outside trace range");
  return outputs[static_cast<size_t>(layer - start_layer)];
}

namespace {

RealTensor conv_forward(const LayerSpec& l, const RealTensor& in,
                        const RealTensor& w, const RealTensor& b,
                        const std::vector<int>& out_shape) {
  RealTensor out = RealTensor::zeros(out_shape);
  const int ic = l.in_channels, oc = l.out_channels, k = l.kernel;
  const int ih = in.shape[1], iw = in.shape[2];
  const int oh = out_shape[1], ow = out_shape[2];
  for (int o = 0; o < oc; ++o) {
    const double bias = b.data[static_cast<size_t>(o)];
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = bias;
        const int base_y = oy * l.stride - l.padding;
        const int base_x = ox * l.stride - l.padding;
        for (int c = 0; c < ic; ++c) {
          for (int ky = 0; ky < k; ++ky) {
            const int y = base_y + ky;
            if (y < 0 || y >= ih) continue;
            const size_t in_row = (static_cast<size_t>(c) * ih + y) * iw;
            const size_t w_row =
                ((static_cast<size_t>(o) * ic + c) * k + ky) * k;
            for (int kx = 0; kx < k; ++kx) {
              const int x = base_x + kx;
              if (x < 0 || x >= iw) continue;
              acc += in.data[in_row + x] * w.data[w_row + kx];
            }
          }
        }
        out.data[(static_cast<size_t>(o) * oh + oy) * ow + ox] = acc;
      }
    }
  }
  return out;
}

RealTensor fc_forward(const LayerSpec& l, const RealTensor& in,
                      const RealTensor& w, const RealTensor& b) {
  RealTensor out = RealTensor::zeros({l.out_features});
  const int nin = l.in_features, nout = l.out_features;
  for (int o = 0; o < nout; ++o) {
    double acc = b.data[static_cast<size_t>(o)];
    const size_t row = static_cast<size_t>(o) * nin;
    for (int i = 0; i < nin; ++i) acc += w.data[row + i] * in.data[i];
    out.data[static_cast<size_t>(o)] = acc;
  }
  return out;
}

RealTensor pool_forward(const LayerSpec& l, const RealTensor& in,
                        const std::vector<int>& out_shape, bool take_max) {
  RealTensor out = RealTensor::zeros(out_shape);
  const int c = in.shape[0], ih = in.shape[1], iw = in.shape[2];
  const int oh = out_shape[1], ow = out_shape[2];
  const int wnd = l.window;
  const double inv_area = 1.0 / (static_cast<double>(wnd) * wnd);
  for (int ch = 0; ch < c; ++ch) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = take_max ? -1e300 : 0.0;
        for (int ky = 0; ky < wnd; ++ky) {
          const size_t row =
              (static_cast<size_t>(ch) * ih + oy * wnd + ky) * iw + ox * wnd;
          for (int kx = 0; kx < wnd; ++kx) {
            const double v = in.data[row + kx];
            if (take_max)
              acc = (v > acc) ? v : acc;
            else
              acc += v;
          }
        }
        out.data[(static_cast<size_t>(ch) * oh + oy) * ow + ox] =
            take_max ? acc : acc * inv_area;
      }
    }
  }
  return out;
}

RealTensor run_layer(const PreparedNetwork& prep, int layer,
                     const RealTensor& in, const ForwardOverrides& ovr) {
  const LayerSpec& l = prep.net.layers[static_cast<size_t>(layer)];
  const std::vector<int>& out_shape = prep.shapes[static_cast<size_t>(layer)];
  const RealTensor* w = &prep.effective_weights[static_cast<size_t>(layer)];
  if (ovr.weights) {
    auto it = ovr.weights->find(layer);
    if (it != ovr.weights->end()) w = &it->second;
  }
  RealTensor out;
  switch (l.kind) {
    case LayerKind::Conv2D:
      out = conv_forward(l, in, *w, prep.net.biases[static_cast<size_t>(layer)],
                         out_shape);
      break;
    case LayerKind::FullyConnected:
      out = fc_forward(l, in, *w, prep.net.biases[static_cast<size_t>(layer)]);
      break;
    case LayerKind::ReLU: {
      out = in;
      for (double& x : out.data) x = (x > 0.0) ? x : 0.0;
      break;
    }
    case LayerKind::MaxPool:
      out = pool_forward(l, in, out_shape, true);
      break;
    case LayerKind::AvgPool:
      out = pool_forward(l, in, out_shape, false);
      break;
    case LayerKind::Flatten:
      out = in;
      out.shape = out_shape;
      break;
  }
  if (prep.quantized && prep.has_act[static_cast<size_t>(layer)]) {
    QuantTensor q = quantize(out, prep.act_cfg[static_cast<size_t>(layer)]);
    if (ovr.act_hook && *ovr.act_hook) (*ovr.act_hook)(layer, q);
    out = dequantize(q);
  }
  return out;
}

}  // namespace

ActivationTrace forward_from(const PreparedNetwork& prep, int start_layer,
                             const RealTensor& activation,
                             const ForwardOverrides& ovr) {
  if (start_layer < 0 || start_layer >= prep.layer_count())
    throw InvalidArgument("forward_from: start layer out of range");
  const std::vector<int>& expect =
      (start_layer == 0) ? prep.net.input_shape
                         : prep.shapes[static_cast<size_t>(start_layer - 1)];
  if (shape_size(activation.shape) != shape_size(expect))
    throw InvalidArgument("forward_from: activation size mismatch");
  ActivationTrace trace;
  trace.start_layer = start_layer;
  trace.outputs.reserve(static_cast<size_t>(prep.layer_count() - start_layer));
  RealTensor cur = activation;
  cur.shape = expect;
  for (int l = start_layer; l < prep.layer_count(); ++l) {
    cur = run_layer(prep, l, cur, ovr);
    trace.outputs.push_back(cur);
  }
  return trace;
}

ActivationTrace forward_full(const PreparedNetwork& prep,
                             const RealTensor& input,
                             const ForwardOverrides& ovr) {
  return forward_from(prep, 0, input, ovr);
}

std::vector<LayerDelta> delta_trace(const ActivationTrace& golden,
                                    const ActivationTrace& faulty) {
  if (faulty.start_layer < golden.start_layer ||
      faulty.end_layer() != golden.end_layer())
    throw InvalidArgument("delta_trace: traces do not align");
  std::vector<LayerDelta> out;
  out.reserve(faulty.outputs.size());
  for (int l = faulty.start_layer; l < faulty.end_layer(); ++l) {
    const RealTensor& g = golden.layer_output(l);
    const RealTensor& f = faulty.layer_output(l);
    if (g.data.size() != f.data.size())
      throw InvalidArgument("delta_trace: layer size mismatch");
    RealTensor d = g;
    for (size_t i = 0; i < d.data.size(); ++i) d.data[i] = f.data[i] - g.data[i];
    LayerDelta ld;
    ld.rmse = rmse(d);
    ld.rrmse = rrmse(d, g);
    out.push_back(ld);
  }
  return out;
}

int argmax_index(const RealTensor& logits) {
  if (logits.data.empty()) throw InvalidArgument("argmax_index: empty tensor");
  int best = 0;
  for (size_t i = 1; i < logits.data.size(); ++i)
    if (logits.data[i] > logits.data[static_cast<size_t>(best)])
      best = static_cast<int>(i);
  return best;
}

}  // namespace softerr
