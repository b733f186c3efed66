#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <unordered_map>
#include <vector>

#include "softerr/errors.hpp"
#include "softerr/network.hpp"
#include "softerr/rng.hpp"
#include "softerr/tensor.hpp"

using namespace softerr;

namespace {

NetworkGraph tiny_conv_net() {
  NetworkGraph net;
  net.input_shape = {1, 3, 3};
  net.layers = {LayerSpec::conv(1, 1, 2)};
  net.weights.resize(1);
  net.biases.resize(1);
  net.weights[0] = make_tensor({1, 1, 2, 2}, {1.0, 0.0, 0.0, -1.0});
  net.biases[0] = make_tensor({1}, {0.5});
  net.class_count = 0;
  return net;
}

}  // namespace

TEST_CASE("conv forward matches a hand-computed example") {
  NetworkGraph net = tiny_conv_net();
  PrepareOptions opts;
  opts.quantized = false;
  const PreparedNetwork prep = prepare_network(net, opts);
  const RealTensor in =
      make_tensor({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const ActivationTrace tr = forward_full(prep, in);
  const RealTensor& out = tr.logits();
  CHECK(out.shape == std::vector<int>{1, 2, 2});
  for (double v : out.data) CHECK(v == doctest::Approx(-3.5).epsilon(1e-12));
}

TEST_CASE("padding contributes zeros") {
  NetworkGraph net = tiny_conv_net();
  net.layers[0] = LayerSpec::conv(1, 1, 2, 1, 1);
  net.biases[0].data[0] = 0.0;
  PrepareOptions opts;
  opts.quantized = false;
  const PreparedNetwork prep = prepare_network(net, opts);
  const RealTensor in = make_tensor({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const ActivationTrace tr = forward_full(prep, in);
  // Top-left output sees only input (0,0) through kernel position (1,1).
  CHECK(tr.logits().shape == std::vector<int>{1, 4, 4});
  CHECK(tr.logits().data[0] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("fc relu pool flatten hand examples") {
  NetworkGraph net;
  net.input_shape = {1, 2, 2};
  net.layers = {LayerSpec::avg_pool(2), LayerSpec::flatten(),
                LayerSpec::fully_connected(1, 2), LayerSpec::relu()};
  net.weights.resize(4);
  net.biases.resize(4);
  net.weights[2] = make_tensor({2, 1}, {2.0, -2.0});
  net.biases[2] = make_tensor({2}, {0.0, 0.0});
  net.class_count = 2;
  PrepareOptions opts;
  opts.quantized = false;
  const PreparedNetwork prep = prepare_network(net, opts);
  const RealTensor in = make_tensor({1, 2, 2}, {1.0, 2.0, 3.0, 6.0});
  const ActivationTrace tr = forward_full(prep, in);
  CHECK(tr.layer_output(0).data[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(tr.layer_output(2).data ==
        std::vector<double>{6.0, -6.0});
  CHECK(tr.logits().data == std::vector<double>{6.0, 0.0});
}

TEST_CASE("max pool keeps the window maximum") {
  NetworkGraph net;
  net.input_shape = {1, 2, 2};
  net.layers = {LayerSpec::max_pool(2)};
  net.weights.resize(1);
  net.biases.resize(1);
  net.class_count = 0;
  PrepareOptions opts;
  opts.quantized = false;
  const PreparedNetwork prep = prepare_network(net, opts);
  const RealTensor in = make_tensor({1, 2, 2}, {-4.0, -1.0, -3.0, -2.0});
  CHECK(forward_full(prep, in).logits().data[0] ==
        doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("shape inference and validation") {
  NetworkGraph net;
  net.input_shape = {1, 28, 28};
  net.layers = {LayerSpec::conv(1, 8, 5), LayerSpec::relu(),
                LayerSpec::max_pool(2), LayerSpec::flatten(),
                LayerSpec::fully_connected(8 * 12 * 12, 10)};
  net.weights.resize(5);
  net.biases.resize(5);
  net.weights[0] = RealTensor::zeros({8, 1, 5, 5});
  net.biases[0] = RealTensor::zeros({8});
  net.weights[4] = RealTensor::zeros({10, 8 * 12 * 12});
  net.biases[4] = RealTensor::zeros({10});
  net.class_count = 10;
  const auto shapes = layer_output_shapes(net);
  CHECK(shapes[0] == std::vector<int>{8, 24, 24});
  CHECK(shapes[2] == std::vector<int>{8, 12, 12});
  CHECK(shapes[3] == std::vector<int>{8 * 12 * 12});
  CHECK(shapes[4] == std::vector<int>{10});
  validate_network(net);

  SUBCASE("pool must tile the input") {
    net.layers[2] = LayerSpec::max_pool(5);
    CHECK_THROWS_AS(layer_output_shapes(net), InvalidArgument);
  }
  SUBCASE("fc input size must match") {
    net.layers[4] = LayerSpec::fully_connected(100, 10);
    net.weights[4] = RealTensor::zeros({10, 100});
    CHECK_THROWS_AS(layer_output_shapes(net), InvalidArgument);
  }
  SUBCASE("weight tensor shape must match the layer") {
    net.weights[0] = RealTensor::zeros({8, 1, 3, 3});
    CHECK_THROWS_AS(validate_network(net), InvalidArgument);
  }
  SUBCASE("class count pins the final width") {
    net.class_count = 12;
    CHECK_THROWS_AS(layer_output_shapes(net), InvalidArgument);
  }
}

TEST_CASE("random init is deterministic and scaled by fan-in") {
  std::vector<LayerSpec> layers = {LayerSpec::conv(1, 8, 5),
                                   LayerSpec::relu(), LayerSpec::flatten(),
                                   LayerSpec::fully_connected(8 * 24 * 24, 10)};
  const NetworkGraph a = init_random_network(layers, {1, 28, 28}, 10, 42);
  const NetworkGraph b = init_random_network(layers, {1, 28, 28}, 10, 42);
  const NetworkGraph c = init_random_network(layers, {1, 28, 28}, 10, 43);
  CHECK(a.weights[0].data == b.weights[0].data);
  CHECK(a.weights[3].data == b.weights[3].data);
  CHECK(a.weights[0].data != c.weights[0].data);

  const Moments m = tensor_stats(a.weights[3]);
  const double expect_sd = 1.0 / std::sqrt(8.0 * 24.0 * 24.0);
  CHECK(std::sqrt(m.variance) == doctest::Approx(expect_sd).epsilon(0.05));
  CHECK(std::abs(m.mean) < expect_sd * 0.05);
  for (double v : a.biases[0].data) CHECK(v == 0.0);
}

TEST_CASE("linear layers preserve unit variance at default scale") {
  std::vector<LayerSpec> layers = {
      LayerSpec::fully_connected(1024, 256)};
  const NetworkGraph net = init_random_network(layers, {1024}, 0, 7);
  PrepareOptions opts;
  opts.quantized = false;
  const PreparedNetwork prep = prepare_network(net, opts);
  Rng rng(5);
  double ss = 0.0;
  int64_t n = 0;
  for (int rep = 0; rep < 24; ++rep) {
    RealTensor in = RealTensor::zeros({1024});
    for (auto& v : in.data) v = rng.normal();
    const RealTensor out = forward_full(prep, in).logits();
    for (double v : out.data) ss += v * v;
    n += out.size();
  }
  CHECK(ss / static_cast<double>(n) == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("forward_from splices into the full trace") {
  std::vector<LayerSpec> layers = {LayerSpec::conv(1, 4, 3), LayerSpec::relu(),
                                   LayerSpec::max_pool(2),
                                   LayerSpec::flatten(),
                                   LayerSpec::fully_connected(4 * 13 * 13, 10)};
  NetworkGraph net = init_random_network(layers, {1, 28, 28}, 10, 21);
  PrepareOptions opts;
  opts.quantized = false;
  const PreparedNetwork prep = prepare_network(net, opts);
  Rng rng(6);
  RealTensor in = RealTensor::zeros({1, 28, 28});
  for (auto& v : in.data) v = rng.uniform();
  const ActivationTrace full = forward_full(prep, in);
  for (int start = 1; start < 5; ++start) {
    const ActivationTrace part =
        forward_from(prep, start, full.layer_output(start - 1));
    CHECK(part.start_layer == start);
    for (int l = start; l < 5; ++l)
      CHECK(part.layer_output(l).data == full.layer_output(l).data);
  }
}

TEST_CASE("quantized forward clamps to the activation bound") {
  NetworkGraph net;
  net.input_shape = {4};
  LayerSpec fc = LayerSpec::fully_connected(4, 4);
  fc.has_act_quant = true;
  fc.act_quant = QuantConfig{8, 1.0};
  fc.has_weight_quant = true;
  fc.weight_quant = QuantConfig{8, 4.0};
  net.layers = {fc};
  net.weights.resize(1);
  net.biases.resize(1);
  net.weights[0] = make_tensor({4, 4}, {4, 0, 0, 0,  //
                                        0, 1, 0, 0,  //
                                        0, 0, 1, 0,  //
                                        0, 0, 0, 1});
  net.biases[0] = RealTensor::zeros({4});
  net.class_count = 0;
  const PreparedNetwork prep = prepare_network(net);
  const RealTensor in = make_tensor({4}, {1.0, 0.5, -0.25, -2.0});
  const RealTensor out = forward_full(prep, in).logits();
  CHECK(out.data[0] == doctest::Approx(127.0 / 128.0).epsilon(1e-12));
  CHECK(out.data[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(out.data[2] == doctest::Approx(-0.25).epsilon(1e-12));
  CHECK(out.data[3] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("activation hook edits feed downstream layers only") {
  std::vector<LayerSpec> layers = {LayerSpec::conv(1, 2, 3), LayerSpec::relu(),
                                   LayerSpec::flatten(),
                                   LayerSpec::fully_connected(2 * 26 * 26, 10)};
  NetworkGraph net = init_random_network(layers, {1, 28, 28}, 10, 31);
  for (auto& l : net.layers) {
    l.has_act_quant = true;
    l.act_quant = QuantConfig{8, 4.0};
    if (l.parametric()) {
      l.has_weight_quant = true;
      l.weight_quant = QuantConfig{8, 1.0};
    }
  }
  const PreparedNetwork prep = prepare_network(net);
  Rng rng(8);
  RealTensor in = RealTensor::zeros({1, 28, 28});
  for (auto& v : in.data) v = rng.uniform();
  const ActivationTrace golden = forward_full(prep, in);

  int hits = 0;
  ActivationHook hook = [&](int layer, QuantTensor& words) {
    if (layer != 2) return;
    words.words[0] ^= 1 << 6;
    ++hits;
  };
  ForwardOverrides ovr;
  ovr.act_hook = &hook;
  const ActivationTrace faulty = forward_full(prep, in, ovr);
  CHECK(hits == 1);
  const auto deltas = delta_trace(golden, faulty);
  CHECK(deltas[0].rmse == 0.0);
  CHECK(deltas[1].rmse == 0.0);
  CHECK(deltas[2].rmse > 0.0);
  CHECK(deltas[3].rmse > 0.0);
}

TEST_CASE("weight overrides replace a single layer") {
  std::vector<LayerSpec> layers = {LayerSpec::fully_connected(8, 8),
                                   LayerSpec::fully_connected(8, 4)};
  NetworkGraph net = init_random_network(layers, {8}, 0, 77);
  PrepareOptions opts;
  opts.quantized = false;
  const PreparedNetwork prep = prepare_network(net, opts);
  RealTensor in = RealTensor::zeros({8});
  in.data[0] = 1.0;
  const ActivationTrace base = forward_full(prep, in);

  RealTensor w0 = prep.effective_weights[0];
  w0.data[0] += 0.5;
  std::unordered_map<int, RealTensor> repl{{0, w0}};
  ForwardOverrides ovr;
  ovr.weights = &repl;
  const ActivationTrace changed = forward_full(prep, in, ovr);
  CHECK(changed.layer_output(0).data[0] ==
        doctest::Approx(base.layer_output(0).data[0] + 0.5).epsilon(1e-12));
}

TEST_CASE("delta_trace of identical traces is zero and rrmse is relative") {
  std::vector<LayerSpec> layers = {LayerSpec::fully_connected(8, 8)};
  NetworkGraph net = init_random_network(layers, {8}, 0, 3);
  PrepareOptions opts;
  opts.quantized = false;
  const PreparedNetwork prep = prepare_network(net, opts);
  Rng rng(4);
  RealTensor in = RealTensor::zeros({8});
  for (auto& v : in.data) v = rng.normal();
  const ActivationTrace a = forward_full(prep, in);
  const ActivationTrace b = forward_full(prep, in);
  const auto deltas = delta_trace(a, b);
  CHECK(deltas.size() == 1);
  CHECK(deltas[0].rmse == 0.0);
  CHECK(deltas[0].rrmse == 0.0);
}

TEST_CASE("argmax returns the first maximal index") {
  CHECK(argmax_index(make_tensor({4}, {0.1, 0.9, 0.9, 0.2})) == 1);
  CHECK(argmax_index(make_tensor({3}, {-1.0, -2.0, -0.5})) == 2);
}
