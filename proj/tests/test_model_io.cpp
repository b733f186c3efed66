#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "softerr/dataset_gen.hpp"
#include "softerr/errors.hpp"
#include "softerr/model_io.hpp"
#include "softerr/network.hpp"
#include "softerr/rng.hpp"
#include "softerr/trainer.hpp"

using namespace softerr;

namespace {

namespace fs = std::filesystem;

std::string tmp_dir() {
  static int counter = 0;
  const std::string d =
      (fs::temp_directory_path() / ("softerr_test_" + std::to_string(::getpid()) +
                                    "_" + std::to_string(counter++)))
          .string();
  fs::create_directories(d);
  return d;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  REQUIRE(out.good());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

// Weights cast through float so container round trips are exact.
NetworkGraph float_exact_net(uint64_t seed) {
  std::vector<LayerSpec> layers = {LayerSpec::conv(1, 3, 3), LayerSpec::relu(),
                                   LayerSpec::max_pool(2),
                                   LayerSpec::flatten(),
                                   LayerSpec::fully_connected(3 * 13 * 13, 10)};
  NetworkGraph net = init_random_network(layers, {1, 28, 28}, 10, seed);
  for (auto& w : net.weights)
    for (auto& v : w.data) v = static_cast<double>(static_cast<float>(v));
  for (auto& b : net.biases)
    for (auto& v : b.data) v = static_cast<double>(static_cast<float>(v));
  for (auto& l : net.layers) {
    l.has_act_quant = true;
    l.act_quant = QuantConfig{8, 2.0};
    if (l.parametric()) {
      l.has_weight_quant = true;
      l.weight_quant = QuantConfig{8, 0.5};
    }
  }
  return net;
}

// Two-class toy set: class 0 lights the top half, class 1 the bottom half.
Dataset toy_dataset(int count, uint64_t seed) {
  Dataset d;
  d.count = count;
  d.rows = 4;
  d.cols = 4;
  d.class_count = 2;
  d.pixels.assign(static_cast<size_t>(count) * 16, 0.0);
  d.labels.resize(static_cast<size_t>(count));
  Rng rng(seed);
  for (int i = 0; i < count; ++i) {
    const int label = i % 2;
    d.labels[static_cast<size_t>(i)] = static_cast<uint8_t>(label);
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) {
        const bool lit = label == 0 ? r < 2 : r >= 2;
        double v = (lit ? 0.8 : 0.1) + (rng.uniform() - 0.5) * 0.1;
        d.pixels[(static_cast<size_t>(i) * 4 + r) * 4 + c] =
            std::min(1.0, std::max(0.0, v));
      }
    }
  }
  return d;
}

}  // namespace

TEST_CASE("model container round trips exactly") {
  const std::string dir = tmp_dir();
  const NetworkGraph net = float_exact_net(101);
  const std::string path = dir + "/model.soft";
  save_network(net, path);
  const NetworkGraph back = load_network(path);

  CHECK(back.input_shape == net.input_shape);
  CHECK(back.class_count == net.class_count);
  REQUIRE(back.layers.size() == net.layers.size());
  for (size_t i = 0; i < net.layers.size(); ++i) {
    CHECK(back.layers[i].kind == net.layers[i].kind);
    CHECK(back.layers[i].has_act_quant == net.layers[i].has_act_quant);
    if (net.layers[i].has_act_quant) {
      CHECK(back.layers[i].act_quant.bits == net.layers[i].act_quant.bits);
      CHECK(back.layers[i].act_quant.bound == net.layers[i].act_quant.bound);
    }
    CHECK(back.weights[i].shape == net.weights[i].shape);
    CHECK(back.weights[i].data == net.weights[i].data);
    CHECK(back.biases[i].data == net.biases[i].data);
  }

  // Identical forward behavior, bit for bit.
  const PreparedNetwork p1 = prepare_network(net);
  const PreparedNetwork p2 = prepare_network(back);
  Rng rng(3);
  RealTensor in = RealTensor::zeros({1, 28, 28});
  for (auto& v : in.data) v = rng.uniform();
  CHECK(forward_full(p1, in).logits().data ==
        forward_full(p2, in).logits().data);

  // Serialization checksum matches the on-disk bytes.
  const std::string bytes = slurp(path);
  CHECK(model_checksum(net) ==
        fnv1a64({reinterpret_cast<const uint8_t*>(bytes.data()),
                 bytes.size()}));
  CHECK(model_checksum(back) == model_checksum(net));
}

TEST_CASE("model container rejects damage") {
  const std::string dir = tmp_dir();
  const NetworkGraph net = float_exact_net(102);
  const std::string path = dir + "/model.soft";
  save_network(net, path);
  const std::string good = slurp(path);

  SUBCASE("unknown format version") {
    std::string bad = good;
    const size_t pos = bad.find("softerr-model/1");
    REQUIRE(pos != std::string::npos);
    bad.replace(pos, 15, "softerr-model/9");
    spit(path, bad);
    CHECK_THROWS_AS(load_network(path), UnsupportedVersion);
  }
  SUBCASE("corrupted blob byte") {
    std::string bad = good;
    bad[bad.size() - 3] = static_cast<char>(bad[bad.size() - 3] ^ 0x40);
    spit(path, bad);
    CHECK_THROWS_AS(load_network(path), ChecksumMismatch);
  }
  SUBCASE("truncated file") {
    spit(path, good.substr(0, good.size() - 10));
    CHECK_THROWS_AS(load_network(path), IoError);
  }
  SUBCASE("unknown manifest key") {
    std::string bad = good;
    const size_t pos = bad.find("class_count");
    REQUIRE(pos != std::string::npos);
    bad.replace(pos, 11, "class_woops");
    spit(path, bad);
    CHECK_THROWS_AS(load_network(path), IoError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_network(dir + "/nope.soft"), IoError);
  }
}

TEST_CASE("idx files round trip") {
  const std::string dir = tmp_dir();
  const int count = 7, rows = 5, cols = 3;
  std::vector<uint8_t> img(static_cast<size_t>(count) * rows * cols);
  std::vector<uint8_t> lab(static_cast<size_t>(count));
  Rng rng(9);
  for (auto& b : img) b = static_cast<uint8_t>(rng.below(256));
  for (size_t i = 0; i < lab.size(); ++i)
    lab[i] = static_cast<uint8_t>(i % 4);
  write_idx_images(dir + "/im.idx", count, rows, cols, img);
  write_idx_labels(dir + "/lb.idx", lab);

  const Dataset d = load_idx_dataset(dir + "/im.idx", dir + "/lb.idx");
  CHECK(d.count == count);
  CHECK(d.rows == rows);
  CHECK(d.cols == cols);
  CHECK(d.class_count == 4);
  CHECK(d.labels == lab);
  for (size_t i = 0; i < img.size(); ++i)
    CHECK(d.pixels[i] == doctest::Approx(img[i] / 255.0).epsilon(1e-12));
  CHECK(d.checksum() == load_idx_dataset(dir + "/im.idx", dir + "/lb.idx")
                            .checksum());

  SUBCASE("count mismatch is rejected") {
    write_idx_labels(dir + "/short.idx",
                     std::vector<uint8_t>(static_cast<size_t>(count - 1), 0));
    CHECK_THROWS_AS(load_idx_dataset(dir + "/im.idx", dir + "/short.idx"),
                    IoError);
  }
  SUBCASE("bad magic is rejected") {
    std::string bytes = slurp(dir + "/im.idx");
    bytes[3] = 0x04;
    spit(dir + "/im.idx", bytes);
    CHECK_THROWS_AS(load_idx_dataset(dir + "/im.idx", dir + "/lb.idx"),
                    IoError);
  }
}

TEST_CASE("glyph dataset is deterministic, balanced and in range") {
  GlyphDatasetConfig cfg;
  cfg.count = 200;
  cfg.seed = 5;
  cfg.split_tag = 0x7472;
  const Dataset a = generate_glyph_dataset(cfg);
  const Dataset b = generate_glyph_dataset(cfg);
  CHECK(a.pixels == b.pixels);
  CHECK(a.labels == b.labels);
  CHECK(a.count == 200);
  CHECK(a.rows == 28);
  CHECK(a.cols == 28);
  CHECK(a.class_count == 10);

  std::vector<int> counts(10, 0);
  for (uint8_t l : a.labels) ++counts[l];
  for (int c : counts) CHECK(c == 20);
  for (double p : a.pixels) {
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }

  GlyphDatasetConfig test_cfg = cfg;
  test_cfg.split_tag = 0x7465;
  const Dataset c = generate_glyph_dataset(test_cfg);
  CHECK(c.pixels != a.pixels);

  // Images carry real structure: lit glyph pixels clearly above background.
  double mx = 0.0;
  for (double p : a.pixels) mx = std::max(mx, p);
  CHECK(mx > 0.5);
}

TEST_CASE("fixture writer emits loadable idx files") {
  const std::string dir = tmp_dir();
  const FixtureDatasetPaths p = write_fixture_dataset(dir, 50, 30, 3);
  const Dataset train = load_idx_dataset(p.train_images, p.train_labels);
  const Dataset test = load_idx_dataset(p.test_images, p.test_labels);
  CHECK(train.count == 50);
  CHECK(test.count == 30);
  CHECK(train.checksum() != test.checksum());
}

TEST_CASE("golden outputs cache hits, rebuilds and survives corruption") {
  const std::string dir = tmp_dir();
  const NetworkGraph net = float_exact_net(103);
  const PreparedNetwork prep = prepare_network(net);
  GlyphDatasetConfig cfg;
  cfg.count = 20;
  cfg.seed = 8;
  const Dataset data = generate_glyph_dataset(cfg);

  const std::string cache = dir + "/golden.cache";
  const GoldenOutputs g1 = cache_golden_outputs(prep, data, cache);
  CHECK(fs::exists(cache));
  CHECK(g1.image_count == 20);
  CHECK(g1.layer_count == prep.layer_count());

  // Logits agree with a direct forward.
  const ActivationTrace tr = forward_full(prep, data.image(4));
  const auto logits = g1.image_logits(4);
  for (int k = 0; k < g1.class_count; ++k)
    CHECK(tr.logits().data[static_cast<size_t>(k)] ==
          logits[static_cast<size_t>(k)]);
  CHECK(g1.logit_variance(4) > 0.0);

  // Second call loads the cached table.
  const GoldenOutputs g2 = cache_golden_outputs(prep, data, cache);
  CHECK(g2.logits == g1.logits);
  CHECK(g2.top_class == g1.top_class);
  CHECK(g2.layer_var == g1.layer_var);

  // A different dataset invalidates the key and recomputes.
  cfg.seed = 9;
  const Dataset other = generate_glyph_dataset(cfg);
  const GoldenOutputs g3 = cache_golden_outputs(prep, other, cache);
  CHECK(g3.data_sum == other.checksum());
  CHECK(g3.data_sum != g1.data_sum);

  // Corruption falls back to a rebuild.
  spit(cache, "garbage");
  const GoldenOutputs g4 = cache_golden_outputs(prep, data, cache);
  CHECK(g4.logits == g1.logits);
}

TEST_CASE("training learns a separable toy problem deterministically") {
  const Dataset train = toy_dataset(200, 21);
  const Dataset test = toy_dataset(60, 22);

  std::vector<LayerSpec> layers = {LayerSpec::flatten(),
                                   LayerSpec::fully_connected(16, 8),
                                   LayerSpec::relu(),
                                   LayerSpec::fully_connected(8, 2)};
  NetworkGraph net = init_random_network(layers, {1, 4, 4}, 2, 11);
  const double before = real_accuracy(net, test);

  TrainConfig tc;
  tc.epochs = 5;
  tc.batch_size = 16;
  tc.learning_rate = 0.2;
  tc.seed = 11;
  NetworkGraph net2 = net;
  const TrainReport r1 = train_fixture(net, train, test, tc);
  const TrainReport r2 = train_fixture(net2, train, test, tc);

  CHECK(r1.test_accuracy >= 0.95);
  CHECK(r1.test_accuracy > before);
  CHECK(r1.epoch_loss.size() == 5);
  CHECK(r1.epoch_loss.front() > r1.epoch_loss.back());
  // Bitwise deterministic.
  CHECK(r1.test_accuracy == r2.test_accuracy);
  for (size_t i = 0; i < net.weights.size(); ++i)
    CHECK(net.weights[i].data == net2.weights[i].data);
}

TEST_CASE("calibration assigns usable quant configs") {
  const Dataset train = toy_dataset(100, 31);
  std::vector<LayerSpec> layers = {LayerSpec::flatten(),
                                   LayerSpec::fully_connected(16, 8),
                                   LayerSpec::relu(),
                                   LayerSpec::fully_connected(8, 2)};
  NetworkGraph net = init_random_network(layers, {1, 4, 4}, 2, 41);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 16;
  tc.seed = 41;
  train_fixture(net, toy_dataset(200, 42), train, tc);
  calibrate_quantization(net, train, 8);

  for (size_t i = 0; i < net.layers.size(); ++i) {
    CHECK(net.layers[i].has_act_quant);
    CHECK(net.layers[i].act_quant.bits == 8);
    CHECK(net.layers[i].act_quant.bound > 0.0);
    if (net.layers[i].parametric()) {
      CHECK(net.layers[i].has_weight_quant);
      double mx = 0.0;
      for (double v : net.weights[i].data) mx = std::max(mx, std::abs(v));
      CHECK(net.layers[i].weight_quant.bound ==
            doctest::Approx(mx).epsilon(1e-12));
    }
  }

  // Quantized accuracy close to the real one on this easy problem.
  const PreparedNetwork prep = prepare_network(net);
  const GoldenOutputs g = compute_golden_outputs(prep, train);
  double hits = 0.0;
  for (int i = 0; i < train.count; ++i)
    if (g.top_class[static_cast<size_t>(i)] ==
        train.labels[static_cast<size_t>(i)])
      hits += 1.0;
  CHECK(hits / train.count >= real_accuracy(net, train) - 0.05);
}
