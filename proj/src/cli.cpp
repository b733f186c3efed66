#include "softerr/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "softerr/campaign.hpp"
#include "softerr/csv.hpp"
#include "softerr/dataset_gen.hpp"
#include "softerr/errors.hpp"
#include "softerr/model_io.hpp"
#include "softerr/stats.hpp"
#include "softerr/trainer.hpp"

namespace softerr {

namespace {

namespace fs = std::filesystem;

struct CoreOpts {
  std::string model;
  std::string test_images, test_labels;
  std::string out = "out";
  uint64_t seed = 1;
  int threads = 0;
  int trials = 256;
  int images = 0;  // 0: whole set
};

struct CommonOpts : CoreOpts {
  std::string golden_cache;  // default <out>/golden.cache
  bool single_image = false;
};

void add_core(CLI::App* cmd, CoreOpts& o) {
  cmd->add_option("--model", o.model, "model container path")->required();
  cmd->add_option("--test-images", o.test_images, "IDX image file")
      ->required();
  cmd->add_option("--test-labels", o.test_labels, "IDX label file")
      ->required();
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--seed", o.seed, "campaign seed");
  cmd->add_option("--threads", o.threads,
                  "worker threads (0: SOFTERR_THREADS or 1); never changes "
                  "emitted numbers");
  cmd->add_option("--trials", o.trials, "fault trials per point");
  cmd->add_option("--images", o.images, "image pool size (0: whole set)");
}

void add_common(CLI::App* cmd, CommonOpts& o) {
  add_core(cmd, o);
  cmd->add_option("--golden-cache", o.golden_cache, "clean-run cache path");
  cmd->add_flag("--single-image", o.single_image,
                "pin every trial to one image");
}

struct EvalBundle {
  NetworkGraph net;
  Dataset data;
  PreparedNetwork prep;
  GoldenOutputs golden;
  ExperimentContext ctx;
};

std::unique_ptr<EvalBundle> load_eval(const CommonOpts& o) {
  auto b = std::make_unique<EvalBundle>();
  b->net = load_network(o.model);
  b->data = load_idx_dataset(o.test_images, o.test_labels);
  b->prep = prepare_network(b->net);
  fs::create_directories(o.out);
  const std::string cache =
      o.golden_cache.empty() ? o.out + "/golden.cache" : o.golden_cache;
  b->golden = cache_golden_outputs(b->prep, b->data, cache);
  b->ctx.net = &b->prep;
  b->ctx.data = &b->data;
  b->ctx.golden = &b->golden;
  b->ctx.seed = o.seed;
  b->ctx.workers = resolve_workers(o.threads);
  b->ctx.sampling =
      o.single_image ? SampleMode::SingleImage : SampleMode::MultiImage;
  return b;
}

std::string hex64(uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

using KvList = std::vector<std::pair<std::string, std::string>>;

void write_provenance(const std::string& path, const std::string& command,
                      const KvList& kv) {
  std::string text = "command = " + command + "\n";
  for (const auto& [k, v] : kv) text += k + " = " + v + "\n";
  write_text_file(path, text);
}

KvList base_provenance(const CommonOpts& o, const EvalBundle& b) {
  return {
      {"model", o.model},
      {"model_checksum", hex64(b.golden.model_sum)},
      {"dataset_checksum", hex64(b.golden.data_sum)},
      {"seed", csv_num(o.seed)},
      {"threads", csv_num(static_cast<int64_t>(b.ctx.workers))},
      {"trials", csv_num(o.trials)},
      {"images", csv_num(o.images)},
      {"sampling", b.ctx.sampling == SampleMode::SingleImage ? "single_image"
                                                             : "multi_image"},
  };
}

// Log-even grid unless an explicit list is given.
std::vector<double> rate_grid(const std::vector<double>& listed, double lo,
                              double hi, int points) {
  if (!listed.empty()) return listed;
  if (points < 1 || lo <= 0.0 || hi < lo)
    throw ConfigError("rate grid needs points >= 1 and 0 < min <= max");
  std::vector<double> g;
  if (points == 1) {
    g.push_back(lo);
    return g;
  }
  const double llo = std::log(lo), lhi = std::log(hi);
  for (int i = 0; i < points; ++i)
    g.push_back(std::exp(llo + (lhi - llo) * i / (points - 1)));
  return g;
}

const std::vector<std::string> kSweepHeader = {
    "ber",        "mode",         "trials",   "images",
    "flips_total", "rrmse_mean",  "rrmse_stderr", "accuracy",
    "accuracy_stderr", "seed"};

std::vector<std::string> sweep_row_cells(const SweepRow& r) {
  return {csv_num(r.ber),           r.mode,
          csv_num(r.trials),        csv_num(r.images),
          csv_num(r.flips_total),   csv_num(r.rrmse_mean),
          csv_num(r.rrmse_stderr),  csv_num(r.accuracy),
          csv_num(r.accuracy_stderr), csv_num(r.seed)};
}

// ---- gen-dataset ----

struct GenOpts {
  std::string dir = "data";
  int train = 4000;
  int test = 1000;
  uint64_t seed = 1;
};

void cmd_gen_dataset(const GenOpts& o) {
  const FixtureDatasetPaths p =
      write_fixture_dataset(o.dir, o.train, o.test, o.seed);
  std::printf("train-images: %s\n", p.train_images.c_str());
  std::printf("train-labels: %s\n", p.train_labels.c_str());
  std::printf("test-images: %s\n", p.test_images.c_str());
  std::printf("test-labels: %s\n", p.test_labels.c_str());
}

// ---- train-fixture ----

struct TrainOpts {
  std::string fixture = "small";
  std::string train_images, train_labels, test_images, test_labels;
  std::string model_out;
  int epochs = 4;
  int batch = 32;
  double lr = 0.1;
  double lr_decay = 0.5;
  uint64_t train_seed = 7;
  int bits = 8;
  double percentile = 0.999;
  int calib_images = 512;
};

void cmd_train_fixture(const TrainOpts& o) {
  const Dataset train = load_idx_dataset(o.train_images, o.train_labels);
  const Dataset test = load_idx_dataset(o.test_images, o.test_labels);
  const std::vector<LayerSpec> layers =
      o.fixture == "small" ? fixture_layers_small() : fixture_layers_deep();
  NetworkGraph net = init_random_network(layers, {1, 28, 28}, 10, o.train_seed);
  TrainConfig tc;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch;
  tc.learning_rate = o.lr;
  tc.lr_decay = o.lr_decay;
  tc.seed = o.train_seed;
  const TrainReport rep = train_fixture(net, train, test, tc);
  calibrate_quantization(net, train, o.bits, o.percentile, o.calib_images);
  const fs::path parent = fs::path(o.model_out).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  save_network(net, o.model_out);

  const PreparedNetwork prep = prepare_network(net);
  const GoldenOutputs g = compute_golden_outputs(prep, test);
  double hits = 0.0;
  for (int i = 0; i < test.count; ++i)
    if (g.top_class[static_cast<size_t>(i)] ==
        test.labels[static_cast<size_t>(i)])
      hits += 1.0;

  for (size_t e = 0; e < rep.epoch_loss.size(); ++e)
    std::printf("epoch %zu: loss=%s test_accuracy=%s\n", e + 1,
                csv_num(rep.epoch_loss[e]).c_str(),
                csv_num(rep.epoch_accuracy[e]).c_str());
  std::printf("real_test_accuracy: %s\n", csv_num(rep.test_accuracy).c_str());
  std::printf("quantized_test_accuracy: %s\n",
              csv_num(hits / static_cast<double>(test.count)).c_str());
  std::printf("model: %s\n", o.model_out.c_str());
}

// ---- simulate ----

struct SimulateOpts : CommonOpts {
  std::string target = "activations";
  std::string fault_mode = "random_bit";
  double ber = 0.0;
  std::vector<int> layers;
};

void cmd_simulate(const SimulateOpts& o) {
  auto b = load_eval(o);
  FaultSpec s;
  s.target = fault_target_from_name(o.target);
  s.mode = fault_mode_from_name(o.fault_mode);
  s.rate = o.ber;
  if (!o.layers.empty()) {
    s.all_layers = false;
    s.layers = o.layers;
  }
  const PointStats ps = measure_point(b->ctx, s, o.trials, o.images, 0);
  std::vector<std::vector<std::string>> rows;
  rows.push_back({csv_num(o.ber), o.target, o.fault_mode, csv_num(ps.trials),
                  csv_num(ps.images), csv_num(ps.flips),
                  csv_num(ps.rrmse_mean), csv_num(ps.rrmse_stderr),
                  csv_num(ps.accuracy), csv_num(ps.accuracy_stderr),
                  csv_num(o.seed)});
  write_csv(o.out + "/simulate.csv",
            {"ber", "target", "mode", "trials", "images", "flips_total",
             "rrmse_mean", "rrmse_stderr", "accuracy", "accuracy_stderr",
             "seed"},
            rows);
  KvList kv = base_provenance(o, *b);
  kv.emplace_back("target", o.target);
  kv.emplace_back("fault_mode", o.fault_mode);
  kv.emplace_back("ber", csv_num(o.ber));
  kv.emplace_back("layers",
                  o.layers.empty() ? std::string("all") : csv_list(o.layers));
  write_provenance(o.out + "/simulate-provenance.txt", "simulate", kv);
  std::printf("rrmse: %s\naccuracy: %s\nflips: %s\n",
              csv_num(ps.rrmse_mean).c_str(), csv_num(ps.accuracy).c_str(),
              csv_num(ps.flips).c_str());
}

// ---- sweep ----

struct SweepOpts : CommonOpts {
  std::string mode = "standard";
  std::string target = "activations";
  double ber_min = 1e-5;
  double ber_max = 1e-2;
  int points = 16;
  std::vector<double> bers;
  int anchors = 4;
  int anchor_trials = 80;
};

void cmd_sweep(const SweepOpts& o) {
  auto b = load_eval(o);
  const std::vector<double> grid =
      rate_grid(o.bers, o.ber_min, o.ber_max, o.points);
  FaultSpec base;
  base.target = fault_target_from_name(o.target);
  base.mode = FaultMode::RandomBit;
  const SweepResult res =
      o.mode == "standard"
          ? ber_sweep_standard(b->ctx, base, grid, o.trials, o.images)
          : ber_sweep_accelerated(b->ctx, base, grid, o.anchors,
                                  o.anchor_trials, o.images);
  std::vector<std::vector<std::string>> rows;
  rows.reserve(res.rows.size());
  for (const SweepRow& r : res.rows) rows.push_back(sweep_row_cells(r));
  write_csv(o.out + "/sweep.csv", kSweepHeader, rows);

  KvList kv = base_provenance(o, *b);
  kv.emplace_back("sweep_mode", o.mode);
  kv.emplace_back("target", o.target);
  kv.emplace_back("grid", csv_list(grid));
  kv.emplace_back("faulty_inferences", csv_num(res.faulty_inferences));
  if (o.mode == "accelerated") {
    kv.emplace_back("anchors", csv_num(o.anchors));
    kv.emplace_back("anchor_trials", csv_num(o.anchor_trials));
  }
  if (res.fit) {
    kv.emplace_back("fit_midpoint", csv_num(res.fit->model.midpoint));
    kv.emplace_back("fit_steepness", csv_num(res.fit->model.steepness));
    kv.emplace_back("fit_acc_clean", csv_num(res.fit->model.acc_clean));
    kv.emplace_back("fit_residual", csv_num(res.fit->residual));
  }
  write_provenance(o.out + "/sweep-provenance.txt", "sweep", kv);
  std::printf("points: %zu\nfaulty_inferences: %s\n", res.rows.size(),
              csv_num(res.faulty_inferences).c_str());
  if (res.fit)
    std::printf("fit: midpoint=%s steepness=%s residual=%s\n",
                csv_num(res.fit->model.midpoint).c_str(),
                csv_num(res.fit->model.steepness).c_str(),
                csv_num(res.fit->residual).c_str());
}

// ---- propagate ----

struct PropagateOpts : CommonOpts {
  int layer = 0;
  double ber = 1e-3;
};

void cmd_propagate(const PropagateOpts& o) {
  auto b = load_eval(o);
  const PropagationResult res =
      layer_propagation_experiment(b->ctx, o.layer, o.ber, o.trials, o.images);
  std::vector<std::vector<std::string>> rows;
  for (const PropagationRow& r : res.rows)
    rows.push_back({csv_num(r.inject_layer), csv_num(r.layer),
                    layer_kind_name(
                        b->net.layers[static_cast<size_t>(r.layer)].kind),
                    csv_num(r.rrmse_mean), csv_num(r.rrmse_stderr)});
  write_csv(o.out + "/propagate.csv",
            {"inject_layer", "layer", "kind", "rrmse_mean", "rrmse_stderr"},
            rows);
  KvList kv = base_provenance(o, *b);
  kv.emplace_back("inject_layer", csv_num(o.layer));
  kv.emplace_back("ber", csv_num(o.ber));
  kv.emplace_back("flips_total", csv_num(res.flips_total));
  write_provenance(o.out + "/propagate-provenance.txt", "propagate", kv);
  std::printf("layers: %zu\nflips: %s\n", res.rows.size(),
              csv_num(res.flips_total).c_str());
}

// ---- aggregate-validate ----

struct AggregateOpts : CommonOpts {
  double ber = 2e-4;
  int combos = 32;
};

void cmd_aggregate(const AggregateOpts& o) {
  auto b = load_eval(o);
  const AggregationResult res =
      aggregation_validation(b->ctx, o.ber, o.combos, o.trials, o.images);
  std::vector<std::vector<std::string>> lrows;
  for (size_t j = 0; j < res.layers.size(); ++j)
    lrows.push_back(
        {csv_num(res.layers[j]),
         layer_kind_name(
             b->net.layers[static_cast<size_t>(res.layers[j])].kind),
         csv_num(res.per_layer_rrmse[j])});
  write_csv(o.out + "/aggregate-layers.csv", {"layer", "kind", "rrmse"},
            lrows);
  std::vector<std::vector<std::string>> crows;
  for (const AggregationRow& r : res.rows)
    crows.push_back({csv_num(r.combo), csv_list(r.layer_rates),
                     csv_num(r.measured), csv_num(r.predicted),
                     csv_num(r.rel_error)});
  write_csv(o.out + "/aggregate-combos.csv",
            {"combo", "rates", "measured", "predicted", "rel_error"}, crows);
  KvList kv = base_provenance(o, *b);
  kv.emplace_back("base_ber", csv_num(o.ber));
  kv.emplace_back("combos", csv_num(o.combos));
  kv.emplace_back("mean_rel_error", csv_num(res.mean_rel_error));
  kv.emplace_back("faulty_inferences", csv_num(res.faulty_inferences));
  write_provenance(o.out + "/aggregate-provenance.txt", "aggregate-validate",
                   kv);
  std::printf("mean_rel_error: %s\n", csv_num(res.mean_rel_error).c_str());
}

// ---- bound-sweep ----

struct BoundOpts : CoreOpts {
  std::vector<double> bounds = {1.0, 2.0, 4.0, 8.0};
  int bits = 16;
  double ber = 1e-4;
};

void cmd_bound_sweep(const BoundOpts& o) {
  const NetworkGraph net = load_network(o.model);
  const Dataset data = load_idx_dataset(o.test_images, o.test_labels);
  fs::create_directories(o.out);
  FaultSpec base;
  base.target = FaultTarget::Activations;
  base.mode = FaultMode::RandomBit;
  const std::vector<BoundSweepRow> rows =
      bound_sweep(net, data, base, o.ber, o.bounds, o.bits, o.trials, o.images,
                  o.seed, resolve_workers(o.threads));
  std::vector<std::vector<std::string>> cells;
  for (const BoundSweepRow& r : rows)
    cells.push_back({csv_num(r.scale), csv_num(r.rrmse_mean),
                     csv_num(r.rrmse_stderr), csv_num(r.clean_accuracy)});
  write_csv(o.out + "/bound_sweep.csv",
            {"scale", "rrmse_mean", "rrmse_stderr", "clean_accuracy"}, cells);
  write_provenance(o.out + "/bound_sweep-provenance.txt", "bound-sweep",
                   {{"model", o.model},
                    {"ber", csv_num(o.ber)},
                    {"bits", csv_num(o.bits)},
                    {"scales", csv_list(o.bounds)},
                    {"trials", csv_num(o.trials)},
                    {"seed", csv_num(o.seed)}});
  for (const BoundSweepRow& r : rows)
    std::printf("scale %s: rrmse=%s clean_accuracy=%s\n",
                csv_num(r.scale).c_str(), csv_num(r.rrmse_mean).c_str(),
                csv_num(r.clean_accuracy).c_str());
}

// ---- bitwidth-compare ----

struct BitwidthOpts : CoreOpts {
  double ber = 1e-4;
};

void cmd_bitwidth(const BitwidthOpts& o) {
  const NetworkGraph net = load_network(o.model);
  const Dataset data = load_idx_dataset(o.test_images, o.test_labels);
  fs::create_directories(o.out);
  FaultSpec base;
  base.target = FaultTarget::Activations;
  base.mode = FaultMode::RandomBit;
  const std::vector<BitwidthRow> rows =
      bitwidth_comparison(net, data, base, o.ber, o.trials, o.images, o.seed,
                          resolve_workers(o.threads));
  std::vector<std::vector<std::string>> cells;
  for (const BitwidthRow& r : rows)
    cells.push_back({csv_num(r.bits), csv_num(r.ber), csv_num(r.rrmse_mean),
                     csv_num(r.rrmse_stderr), csv_num(r.expected_flips)});
  write_csv(o.out + "/bitwidth.csv",
            {"bits", "ber", "rrmse_mean", "rrmse_stderr", "expected_flips"},
            cells);
  write_provenance(o.out + "/bitwidth-provenance.txt", "bitwidth-compare",
                   {{"model", o.model},
                    {"ber", csv_num(o.ber)},
                    {"trials", csv_num(o.trials)},
                    {"seed", csv_num(o.seed)}});
  for (const BitwidthRow& r : rows)
    std::printf("bits %d: rrmse=%s expected_flips=%s\n", r.bits,
                csv_num(r.rrmse_mean).c_str(),
                csv_num(r.expected_flips).c_str());
}

// ---- class-subset ----

struct SubsetOpts : CommonOpts {
  std::vector<int> subsets = {2, 5, 10};
  double ber_min = 1e-4;
  double ber_max = 1e-2;
  int points = 4;
  std::vector<double> bers;
};

void cmd_class_subset(const SubsetOpts& o) {
  auto b = load_eval(o);
  const std::vector<double> grid =
      rate_grid(o.bers, o.ber_min, o.ber_max, o.points);
  const std::vector<ClassSubsetRow> rows =
      class_subset_experiment(b->ctx, o.subsets, grid, o.trials, o.images);
  std::vector<std::vector<std::string>> cells;
  for (const ClassSubsetRow& r : rows)
    cells.push_back({csv_num(r.nc), csv_num(r.ber), csv_num(r.trials),
                     csv_num(r.accuracy), csv_num(r.accuracy_stderr)});
  write_csv(o.out + "/class_subset.csv",
            {"nc", "ber", "trials", "accuracy", "accuracy_stderr"}, cells);
  KvList kv = base_provenance(o, *b);
  kv.emplace_back("subsets", csv_list(o.subsets));
  kv.emplace_back("grid", csv_list(grid));
  write_provenance(o.out + "/class_subset-provenance.txt", "class-subset", kv);
  std::printf("rows: %zu\n", rows.size());
}

// ---- fragile ----

struct FragileOpts : CommonOpts {
  std::string method = "accelerated";
  int k = 3;
  double ber = 1e-5;
};

void cmd_fragile(const FragileOpts& o) {
  auto b = load_eval(o);
  const FragileReport rep =
      o.method == "bruteforce"
          ? fragile_layers_bruteforce(b->ctx, o.ber, o.k, o.trials, o.images)
          : fragile_layers_accelerated(b->ctx, o.ber, o.k, o.trials,
                                       o.images);
  std::vector<std::vector<std::string>> cells;
  for (size_t i = 0; i < rep.rows.size(); ++i) {
    const FragileRow& r = rep.rows[i];
    cells.push_back({csv_num(static_cast<int64_t>(i + 1)),
                     csv_list(r.protect),
                     r.accuracy >= 0.0 ? csv_num(r.accuracy) : std::string(),
                     r.rrmse_score >= 0.0 ? csv_num(r.rrmse_score)
                                          : std::string(),
                     rep.method});
  }
  write_csv(o.out + "/fragile.csv",
            {"rank", "protected", "accuracy", "rrmse_score", "method"}, cells);
  KvList kv = base_provenance(o, *b);
  kv.emplace_back("method", rep.method);
  kv.emplace_back("k", csv_num(o.k));
  kv.emplace_back("ber", csv_num(o.ber));
  kv.emplace_back("faulty_inferences", csv_num(rep.faulty_inferences));
  write_provenance(o.out + "/fragile-provenance.txt", "fragile", kv);
  std::printf("top: %s\nfaulty_inferences: %s\n", csv_list(rep.top).c_str(),
              csv_num(rep.faulty_inferences).c_str());
}

// ---- convergence ----

struct ConvergeOpts : CommonOpts {
  double ber = 1e-4;
  std::string target = "activations";
  int n_images = 100;
  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8};
};

void cmd_converge(const ConvergeOpts& o) {
  auto b = load_eval(o);
  FaultSpec s;
  s.target = fault_target_from_name(o.target);
  s.mode = FaultMode::RandomBit;
  s.rate = o.ber;
  const std::vector<ConvergencePoint> pts =
      convergence_study(b->ctx, s, o.n_images, o.seeds);
  std::vector<std::vector<std::string>> cells;
  for (const ConvergencePoint& p : pts)
    cells.push_back({csv_num(p.seed), csv_num(p.images), csv_num(p.rrmse),
                     csv_num(p.accuracy)});
  write_csv(o.out + "/convergence.csv",
            {"seed", "images", "rrmse", "accuracy"}, cells);
  KvList kv = base_provenance(o, *b);
  kv.emplace_back("ber", csv_num(o.ber));
  kv.emplace_back("target", o.target);
  kv.emplace_back("n_images", csv_num(o.n_images));
  write_provenance(o.out + "/convergence-provenance.txt", "converge", kv);
  std::printf("points: %zu\n", pts.size());
}

// ---- predict ----

struct PredictOpts {
  std::string what;
  double rrmse = 1.0;
  int classes = 10;
  int bits = 8;
  double bound = 1.0;
  int kernel = 3;
  int in_ch = 1;
  int out_ch = 1;
  int feature = 1;
  std::vector<double> parts;
  double from_rate = 1e-5;
  double to_rate = 1e-5;
  double midpoint = 1.0;
  double steepness = 1.0;
  double acc_clean = 1.0;
};

void cmd_predict(const PredictOpts& o) {
  double v = 0.0;
  if (o.what == "sigma-delta") {
    v = flip_disturbance_rms(o.bits, o.bound);
  } else if (o.what == "binary") {
    v = binary_accuracy(o.rrmse);
  } else if (o.what == "multiclass") {
    v = multiclass_accuracy(o.rrmse, o.classes);
  } else if (o.what == "weight-rmse") {
    v = weight_fault_rmse(o.kernel, o.in_ch, o.out_ch,
                          flip_disturbance_rms(o.bits, o.bound));
  } else if (o.what == "act-rmse") {
    v = activation_fault_rmse(o.feature, o.in_ch,
                              flip_disturbance_rms(o.bits, o.bound));
  } else if (o.what == "aggregate") {
    v = aggregate_rrmse(o.parts);
  } else if (o.what == "msb-convert") {
    v = msb_to_standard_rrmse(o.rrmse, o.bits);
  } else if (o.what == "ber-scale") {
    v = scale_rrmse_to_ber(o.rrmse, o.from_rate, o.to_rate);
  } else if (o.what == "empirical") {
    SigmoidAccuracyModel m;
    m.midpoint = o.midpoint;
    m.steepness = o.steepness;
    m.acc_clean = o.acc_clean;
    m.class_count = o.classes;
    v = m(o.rrmse);
  } else {
    throw ConfigError("unknown prediction: " + o.what);
  }
  std::printf("%s\n", csv_num(v).c_str());
}

// ---- diagnose ----

struct DiagnoseOpts : CommonOpts {};

void cmd_diagnose(const DiagnoseOpts& o) {
  auto b = load_eval(o);
  const int pool_size = o.images > 0 ? o.images : 64;
  const std::vector<int> pool = build_image_pool(b->ctx, pool_size);
  const int nl = b->prep.layer_count();

  std::vector<std::vector<std::string>> cells;
  auto push_report = [&](const std::string& source, int layer,
                         std::span<const double> samples) {
    // Sources too small or flat for stable moments are left out of the table.
    if (samples.size() < kNormalityMinSamples) return;
    const auto [mn, mx] = std::minmax_element(samples.begin(), samples.end());
    if (*mn == *mx) return;
    const NormalityReport r = normality_diagnostics(samples);
    cells.push_back(
        {source, csv_num(layer),
         layer_kind_name(b->net.layers[static_cast<size_t>(layer)].kind),
         csv_num(static_cast<uint64_t>(r.count)), csv_num(r.mean),
         csv_num(r.variance), csv_num(r.skewness), csv_num(r.excess_kurtosis),
         csv_num(r.ks_distance)});
  };

  for (int l = 0; l < nl; ++l)
    if (b->net.layers[static_cast<size_t>(l)].parametric())
      push_report("weights", l,
                  b->net.weights[static_cast<size_t>(l)].data);

  std::vector<std::vector<double>> acts(static_cast<size_t>(nl));
  for (int img : pool) {
    const ActivationTrace tr = forward_full(b->prep, b->data.image(img));
    for (int l = 0; l < nl; ++l) {
      const RealTensor& t = tr.layer_output(l);
      acts[static_cast<size_t>(l)].insert(acts[static_cast<size_t>(l)].end(),
                                          t.data.begin(), t.data.end());
    }
  }
  for (int l = 0; l < nl; ++l)
    push_report("activations", l, acts[static_cast<size_t>(l)]);

  write_csv(o.out + "/diagnose.csv",
            {"source", "layer", "kind", "count", "mean", "variance",
             "skewness", "excess_kurtosis", "ks_distance"},
            cells);
  KvList kv = base_provenance(o, *b);
  kv.emplace_back("pool_size", csv_num(static_cast<int64_t>(pool.size())));
  write_provenance(o.out + "/diagnose-provenance.txt", "diagnose", kv);
  std::printf("rows: %zu\n", cells.size());
}

std::string sanitize(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    if (c == '"') c = '\'';
    if (c == '\n') c = ' ';
  }
  return out;
}

int fail(const char* category, const std::string& message, int code) {
  std::fprintf(stderr, "softerr-error: category=%s message=\"%s\"\n", category,
               sanitize(message).c_str());
  return code;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"bit-flip fault injection for quantized inference"};
  app.require_subcommand(1);
  app.set_config("--config", "", "flat key = value settings file");
  app.allow_config_extras(false);
  app.set_version_flag("--version", "softerr 1.0.0");

  auto gen = std::make_shared<GenOpts>();
  {
    CLI::App* c = app.add_subcommand("gen-dataset",
                                     "write the synthetic glyph IDX fixture");
    c->add_option("--dir", gen->dir, "output directory");
    c->add_option("--train", gen->train, "training image count");
    c->add_option("--test", gen->test, "test image count");
    c->add_option("--seed", gen->seed, "generator seed");
    c->callback([gen] { cmd_gen_dataset(*gen); });
  }

  auto tr = std::make_shared<TrainOpts>();
  {
    CLI::App* c =
        app.add_subcommand("train-fixture", "train and calibrate a fixture");
    c->add_option("--fixture", tr->fixture, "fixture name")
        ->check(CLI::IsMember({"small", "deep"}));
    c->add_option("--train-images", tr->train_images)->required();
    c->add_option("--train-labels", tr->train_labels)->required();
    c->add_option("--test-images", tr->test_images)->required();
    c->add_option("--test-labels", tr->test_labels)->required();
    c->add_option("--model", tr->model_out, "output model path")->required();
    c->add_option("--epochs", tr->epochs);
    c->add_option("--batch", tr->batch);
    c->add_option("--lr", tr->lr);
    c->add_option("--lr-decay", tr->lr_decay);
    c->add_option("--train-seed", tr->train_seed);
    c->add_option("--bits", tr->bits)->check(CLI::IsMember({8, 16}));
    c->add_option("--percentile", tr->percentile,
                  "activation bound percentile");
    c->add_option("--calib-images", tr->calib_images);
    c->callback([tr] { cmd_train_fixture(*tr); });
  }

  auto sim = std::make_shared<SimulateOpts>();
  {
    CLI::App* c = app.add_subcommand(
        "simulate", "one fault configuration, measured end to end");
    add_common(c, *sim);
    c->add_option("--target", sim->target)
        ->check(CLI::IsMember({"weights", "activations"}));
    c->add_option("--fault-mode", sim->fault_mode)
        ->check(CLI::IsMember({"random_bit", "msb_only"}));
    c->add_option("--ber", sim->ber, "per-bit (or per-word) flip rate")
        ->required();
    c->add_option("--layers", sim->layers, "restrict to these layers")
        ->delimiter(',');
    c->callback([sim] { cmd_simulate(*sim); });
  }

  auto sw = std::make_shared<SweepOpts>();
  {
    CLI::App* c = app.add_subcommand("sweep", "accuracy over a rate grid");
    add_common(c, *sw);
    c->add_option("--mode", sw->mode)
        ->check(CLI::IsMember({"standard", "accelerated"}));
    c->add_option("--target", sw->target)
        ->check(CLI::IsMember({"weights", "activations"}));
    c->add_option("--ber-min", sw->ber_min);
    c->add_option("--ber-max", sw->ber_max);
    c->add_option("--points", sw->points);
    c->add_option("--bers", sw->bers, "explicit grid")->delimiter(',');
    c->add_option("--anchors", sw->anchors, "accelerated anchor count");
    c->add_option("--anchor-trials", sw->anchor_trials);
    c->callback([sw] { cmd_sweep(*sw); });
  }

  auto pr = std::make_shared<PropagateOpts>();
  {
    CLI::App* c = app.add_subcommand(
        "propagate", "single-layer injection, per-layer deviation");
    add_common(c, *pr);
    c->add_option("--layer", pr->layer, "injection layer")->required();
    c->add_option("--ber", pr->ber);
    c->callback([pr] { cmd_propagate(*pr); });
  }

  auto ag = std::make_shared<AggregateOpts>();
  {
    CLI::App* c = app.add_subcommand(
        "aggregate-validate", "multi-layer composition against prediction");
    add_common(c, *ag);
    c->add_option("--ber", ag->ber, "base per-bit rate");
    c->add_option("--combos", ag->combos);
    c->callback([ag] { cmd_aggregate(*ag); });
  }

  auto bo = std::make_shared<BoundOpts>();
  {
    CLI::App* c = app.add_subcommand(
        "bound-sweep", "saturation bound scaling at fixed rate");
    add_core(c, *bo);
    c->add_option("--bounds", bo->bounds, "bound multipliers")
        ->delimiter(',');
    c->add_option("--bits", bo->bits)->check(CLI::IsMember({8, 16}));
    c->add_option("--ber", bo->ber);
    c->callback([bo] { cmd_bound_sweep(*bo); });
  }

  auto bw = std::make_shared<BitwidthOpts>();
  {
    CLI::App* c = app.add_subcommand(
        "bitwidth-compare", "8- vs 16-bit disturbance at fixed rate");
    add_core(c, *bw);
    c->add_option("--ber", bw->ber);
    c->callback([bw] { cmd_bitwidth(*bw); });
  }

  auto cs = std::make_shared<SubsetOpts>();
  {
    CLI::App* c = app.add_subcommand(
        "class-subset", "restricted argmax over nested class prefixes");
    add_common(c, *cs);
    c->add_option("--subsets", cs->subsets, "class counts")->delimiter(',');
    c->add_option("--ber-min", cs->ber_min);
    c->add_option("--ber-max", cs->ber_max);
    c->add_option("--points", cs->points);
    c->add_option("--bers", cs->bers, "explicit grid")->delimiter(',');
    c->callback([cs] { cmd_class_subset(*cs); });
  }

  auto fr = std::make_shared<FragileOpts>();
  {
    CLI::App* c = app.add_subcommand(
        "fragile", "rank protected layer sets by damage");
    add_common(c, *fr);
    c->add_option("--method", fr->method)
        ->check(CLI::IsMember({"bruteforce", "accelerated"}));
    c->add_option("--k", fr->k, "protected-set size");
    c->add_option("--ber", fr->ber);
    c->callback([fr] { cmd_fragile(*fr); });
  }

  auto cv = std::make_shared<ConvergeOpts>();
  {
    CLI::App* c = app.add_subcommand(
        "converge", "estimate stability across seeds and sample sizes");
    add_common(c, *cv);
    c->add_option("--ber", cv->ber);
    c->add_option("--target", cv->target)
        ->check(CLI::IsMember({"weights", "activations"}));
    c->add_option("--n-images", cv->n_images);
    c->add_option("--seeds", cv->seeds, "study seeds")->delimiter(',');
    c->callback([cv] { cmd_converge(*cv); });
  }

  auto pd = std::make_shared<PredictOpts>();
  {
    CLI::App* c =
        app.add_subcommand("predict", "closed-form model evaluations");
    c->add_option("what", pd->what, "which quantity")
        ->required()
        ->check(CLI::IsMember({"sigma-delta", "binary", "multiclass",
                               "weight-rmse", "act-rmse", "aggregate",
                               "msb-convert", "ber-scale", "empirical"}));
    c->add_option("--rrmse", pd->rrmse);
    c->add_option("--classes", pd->classes);
    c->add_option("--bits", pd->bits)->check(CLI::IsMember({8, 16}));
    c->add_option("--bound", pd->bound);
    c->add_option("--kernel", pd->kernel);
    c->add_option("--in-ch", pd->in_ch);
    c->add_option("--out-ch", pd->out_ch);
    c->add_option("--feature", pd->feature, "square feature map edge");
    c->add_option("--parts", pd->parts, "per-layer values")->delimiter(',');
    c->add_option("--from-rate", pd->from_rate);
    c->add_option("--to-rate", pd->to_rate);
    c->add_option("--midpoint", pd->midpoint);
    c->add_option("--steepness", pd->steepness);
    c->add_option("--acc-clean", pd->acc_clean);
    c->callback([pd] { cmd_predict(*pd); });
  }

  auto dg = std::make_shared<DiagnoseOpts>();
  {
    CLI::App* c = app.add_subcommand(
        "diagnose", "weight and activation distribution diagnostics");
    add_common(c, *dg);
    c->callback([dg] { cmd_diagnose(*dg); });
  }

  try {
    app.parse(argc, argv);
    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("config", e.what(), 2);
  } catch (const ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const InvalidArgument& e) {
    return fail("config", e.what(), 2);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 3);
  }
}

}  // namespace softerr
