#include "softerr/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "softerr/errors.hpp"
#include "softerr/rng.hpp"

namespace softerr {

namespace {

struct Gradients {
  std::vector<RealTensor> weights;
  std::vector<RealTensor> biases;
};

Gradients zero_gradients(const NetworkGraph& net) {
  Gradients g;
  g.weights.resize(net.layers.size());
  g.biases.resize(net.layers.size());
  for (size_t i = 0; i < net.layers.size(); ++i) {
    if (!net.layers[i].parametric()) continue;
    g.weights[i] = RealTensor::zeros(net.weights[i].shape);
    g.biases[i] = RealTensor::zeros(net.biases[i].shape);
  }
  return g;
}

RealTensor conv_backward(const LayerSpec& l, const RealTensor& in,
                         const RealTensor& w, const RealTensor& dout,
                         RealTensor& dw, RealTensor& db) {
  RealTensor din = RealTensor::zeros(in.shape);
  const int ic = l.in_channels, oc = l.out_channels, k = l.kernel;
  const int ih = in.shape[1], iw = in.shape[2];
  const int oh = dout.shape[1], ow = dout.shape[2];
  for (int o = 0; o < oc; ++o) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const double g =
            dout.data[(static_cast<size_t>(o) * oh + oy) * ow + ox];
        if (g == 0.0) continue;
        db.data[static_cast<size_t>(o)] += g;
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
              dw.data[w_row + kx] += g * in.data[in_row + x];
              din.data[in_row + x] += g * w.data[w_row + kx];
            }
          }
        }
      }
    }
  }
  return din;
}

RealTensor fc_backward(const LayerSpec& l, const RealTensor& in,
                       const RealTensor& w, const RealTensor& dout,
                       RealTensor& dw, RealTensor& db) {
  RealTensor din = RealTensor::zeros(in.shape);
  const int nin = l.in_features, nout = l.out_features;
  for (int o = 0; o < nout; ++o) {
    const double g = dout.data[static_cast<size_t>(o)];
    if (g == 0.0) continue;
    db.data[static_cast<size_t>(o)] += g;
    const size_t row = static_cast<size_t>(o) * nin;
    for (int i = 0; i < nin; ++i) {
      dw.data[row + i] += g * in.data[static_cast<size_t>(i)];
      din.data[static_cast<size_t>(i)] += g * w.data[row + i];
    }
  }
  return din;
}

RealTensor pool_backward(const LayerSpec& l, const RealTensor& in,
                         const RealTensor& dout, bool was_max) {
  RealTensor din = RealTensor::zeros(in.shape);
  const int c = in.shape[0], ih = in.shape[1], iw = in.shape[2];
  const int oh = dout.shape[1], ow = dout.shape[2];
  const int wnd = l.window;
  const double inv_area = 1.0 / (static_cast<double>(wnd) * wnd);
  for (int ch = 0; ch < c; ++ch) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const double g =
            dout.data[(static_cast<size_t>(ch) * oh + oy) * ow + ox];
        if (g == 0.0) continue;
        if (was_max) {
          size_t best = 0;
          double best_v = -1e300;
          for (int ky = 0; ky < wnd; ++ky) {
            const size_t row =
                (static_cast<size_t>(ch) * ih + oy * wnd + ky) * iw + ox * wnd;
            for (int kx = 0; kx < wnd; ++kx) {
              if (in.data[row + kx] > best_v) {
                best_v = in.data[row + kx];
                best = row + kx;
              }
            }
          }
          din.data[best] += g;
        } else {
          for (int ky = 0; ky < wnd; ++ky) {
            const size_t row =
                (static_cast<size_t>(ch) * ih + oy * wnd + ky) * iw + ox * wnd;
            for (int kx = 0; kx < wnd; ++kx) din.data[row + kx] += g * inv_area;
          }
        }
      }
    }
  }
  return din;
}

// Backward pass over the whole chain; accumulates into grads.
void backward(const NetworkGraph& net, const RealTensor& input,
              const ActivationTrace& trace, RealTensor dlogits,
              Gradients& grads) {
  RealTensor delta = std::move(dlogits);
  for (int l = static_cast<int>(net.layers.size()) - 1; l >= 0; --l) {
    const LayerSpec& spec = net.layers[static_cast<size_t>(l)];
    const RealTensor& in = (l == 0) ? input : trace.layer_output(l - 1);
    switch (spec.kind) {
      case LayerKind::Conv2D:
        delta = conv_backward(spec, in, net.weights[static_cast<size_t>(l)],
                              delta, grads.weights[static_cast<size_t>(l)],
                              grads.biases[static_cast<size_t>(l)]);
        break;
      case LayerKind::FullyConnected: {
        RealTensor flat_in = in;
        flat_in.shape = {spec.in_features};
        delta = fc_backward(spec, flat_in, net.weights[static_cast<size_t>(l)],
                            delta, grads.weights[static_cast<size_t>(l)],
                            grads.biases[static_cast<size_t>(l)]);
        delta.shape = in.shape;
        break;
      }
      case LayerKind::ReLU: {
        RealTensor din = delta;
        for (size_t i = 0; i < din.data.size(); ++i)
          if (in.data[i] <= 0.0) din.data[i] = 0.0;
        delta = std::move(din);
        break;
      }
      case LayerKind::MaxPool:
        delta = pool_backward(spec, in, delta, true);
        break;
      case LayerKind::AvgPool:
        delta = pool_backward(spec, in, delta, false);
        break;
      case LayerKind::Flatten:
        delta.shape = in.shape;
        break;
    }
  }
}

// Softmax cross-entropy; returns loss and writes dlogits.
double loss_and_grad(const RealTensor& logits, int label, RealTensor& dlogits) {
  const size_t n = logits.data.size();
  double maxv = logits.data[0];
  for (double v : logits.data) maxv = std::max(maxv, v);
  double sum = 0.0;
  dlogits = logits;
  for (size_t i = 0; i < n; ++i) {
    dlogits.data[i] = std::exp(logits.data[i] - maxv);
    sum += dlogits.data[i];
  }
  const double logp =
      logits.data[static_cast<size_t>(label)] - maxv - std::log(sum);
  for (size_t i = 0; i < n; ++i) dlogits.data[i] /= sum;
  dlogits.data[static_cast<size_t>(label)] -= 1.0;
  return -logp;
}

}  // namespace

double real_accuracy(const NetworkGraph& net, const Dataset& data) {
  PrepareOptions opts;
  opts.quantized = false;
  const PreparedNetwork prep = prepare_network(net, opts);
  int hits = 0;
  for (int i = 0; i < data.count; ++i) {
    const ActivationTrace t = forward_full(prep, data.image(i));
    if (argmax_index(t.logits()) == data.labels[static_cast<size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / data.count;
}

TrainReport train_fixture(NetworkGraph& net, const Dataset& train,
                          const Dataset& test, const TrainConfig& cfg) {
  validate_network(net);
  if (cfg.epochs <= 0 || cfg.batch_size <= 0 || !(cfg.learning_rate > 0.0))
    throw InvalidArgument("train_fixture: bad training config");
  TrainReport report;
  std::vector<int> order(static_cast<size_t>(train.count));
  for (int i = 0; i < train.count; ++i) order[static_cast<size_t>(i)] = i;
  PrepareOptions real_mode;
  real_mode.quantized = false;

  double lr = cfg.learning_rate;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed({cfg.seed, static_cast<uint64_t>(epoch),
                              0x73687566ULL}));
    for (size_t i = order.size() - 1; i > 0; --i) {
      const size_t j = shuffle_rng.below(i + 1);
      std::swap(order[i], order[j]);
    }
    double epoch_loss = 0.0;
    int done = 0;
    while (done < train.count) {
      const int batch = std::min(cfg.batch_size, train.count - done);
      const PreparedNetwork prep = prepare_network(net, real_mode);
      Gradients grads = zero_gradients(net);
      for (int b = 0; b < batch; ++b) {
        const int idx = order[static_cast<size_t>(done + b)];
        const RealTensor img = train.image(idx);
        const ActivationTrace trace = forward_full(prep, img);
        RealTensor dlogits;
        epoch_loss += loss_and_grad(trace.logits(),
                                    train.labels[static_cast<size_t>(idx)],
                                    dlogits);
        backward(net, img, trace, std::move(dlogits), grads);
      }
      const double step = lr / batch;
      for (size_t l = 0; l < net.layers.size(); ++l) {
        if (!net.layers[l].parametric()) continue;
        for (size_t i = 0; i < net.weights[l].data.size(); ++i)
          net.weights[l].data[i] -= step * grads.weights[l].data[i];
        for (size_t i = 0; i < net.biases[l].data.size(); ++i)
          net.biases[l].data[i] -= step * grads.biases[l].data[i];
      }
      done += batch;
    }
    epoch_loss /= train.count;
    if (!std::isfinite(epoch_loss))
      throw TrainingDiverged("train_fixture: non-finite loss at epoch " +
                             std::to_string(epoch));
    report.epoch_loss.push_back(epoch_loss);
    report.epoch_accuracy.push_back(real_accuracy(net, test));
    lr *= cfg.lr_decay;
  }
  report.test_accuracy = report.epoch_accuracy.back();
  return report;
}

void calibrate_quantization(NetworkGraph& net, const Dataset& calib, int bits,
                            double percentile, int max_images) {
  validate_network(net);
  if (!(percentile > 0.0 && percentile <= 1.0))
    throw InvalidArgument("calibrate_quantization: percentile out of range");
  PrepareOptions real_mode;
  real_mode.quantized = false;
  const PreparedNetwork prep = prepare_network(net, real_mode);
  const int n_img = std::min(max_images, calib.count);
  if (n_img <= 0)
    throw InvalidArgument("calibrate_quantization: empty calibration set");
  std::vector<std::vector<double>> mags(net.layers.size());
  for (int i = 0; i < n_img; ++i) {
    const ActivationTrace trace = forward_full(prep, calib.image(i));
    for (size_t l = 0; l < net.layers.size(); ++l) {
      const RealTensor& out = trace.layer_output(static_cast<int>(l));
      auto& m = mags[l];
      m.reserve(m.size() + out.data.size());
      for (double v : out.data) m.push_back(std::fabs(v));
    }
  }
  for (size_t l = 0; l < net.layers.size(); ++l) {
    auto& m = mags[l];
    const size_t k = std::min(
        m.size() - 1,
        static_cast<size_t>(percentile * static_cast<double>(m.size())));
    std::nth_element(m.begin(), m.begin() + static_cast<ptrdiff_t>(k), m.end());
    const double bound = std::max(m[k], 1e-6);
    net.layers[l].act_quant = QuantConfig{bits, bound};
    net.layers[l].has_act_quant = true;
    if (net.layers[l].parametric()) {
      double wmax = 0.0;
      for (double w : net.weights[l].data) wmax = std::max(wmax, std::fabs(w));
      net.layers[l].weight_quant = QuantConfig{bits, std::max(wmax, 1e-6)};
      net.layers[l].has_weight_quant = true;
    }
  }
}

std::vector<LayerSpec> fixture_layers_small() {
  return {
      LayerSpec::conv(1, 8, 5),  LayerSpec::relu(), LayerSpec::max_pool(2),
      LayerSpec::conv(8, 16, 5), LayerSpec::relu(), LayerSpec::max_pool(2),
      LayerSpec::flatten(),
      LayerSpec::fully_connected(256, 120), LayerSpec::relu(),
      LayerSpec::fully_connected(120, 84),  LayerSpec::relu(),
      LayerSpec::fully_connected(84, 10),
  };
}

std::vector<LayerSpec> fixture_layers_deep() {
  return {
      LayerSpec::conv(1, 8, 3, 1, 1),   LayerSpec::relu(),
      LayerSpec::max_pool(2),
      LayerSpec::conv(8, 16, 3, 1, 1),  LayerSpec::relu(),
      LayerSpec::max_pool(2),
      LayerSpec::conv(16, 16, 3, 1, 1), LayerSpec::relu(),
      LayerSpec::conv(16, 16, 3, 1, 1), LayerSpec::relu(),
      LayerSpec::flatten(),
      LayerSpec::fully_connected(784, 128), LayerSpec::relu(),
      LayerSpec::fully_connected(128, 64),  LayerSpec::relu(),
      LayerSpec::fully_connected(64, 32),   LayerSpec::relu(),
      LayerSpec::fully_connected(32, 10),
  };
}

}  // namespace softerr
