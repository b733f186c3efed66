#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <cmath>
#include <set>
#include <vector>

#include "softerr/campaign.hpp"
#include "softerr/dataset_gen.hpp"
#include "softerr/errors.hpp"
#include "softerr/stats.hpp"

using namespace softerr;

namespace {

// Shared tiny fixture: untrained but fully quantized, enough structure for
// the campaign mechanics. Built once; tests must not mutate it.
struct Fixture {
  NetworkGraph net;
  PreparedNetwork prep;
  Dataset data;
  GoldenOutputs golden;

  Fixture() {
    std::vector<LayerSpec> layers = {
        LayerSpec::conv(1, 4, 3), LayerSpec::relu(), LayerSpec::max_pool(2),
        LayerSpec::flatten(), LayerSpec::fully_connected(4 * 13 * 13, 10)};
    net = init_random_network(layers, {1, 28, 28}, 10, 77);
    for (auto& l : net.layers) {
      l.has_act_quant = true;
      l.act_quant = QuantConfig{8, 4.0};
      if (l.parametric()) {
        l.has_weight_quant = true;
        l.weight_quant = QuantConfig{8, 0.5};
      }
    }
    prep = prepare_network(net);
    GlyphDatasetConfig cfg;
    cfg.count = 40;
    cfg.seed = 3;
    data = generate_glyph_dataset(cfg);
    golden = compute_golden_outputs(prep, data);
  }

  ExperimentContext ctx(uint64_t seed = 1, int workers = 1) const {
    ExperimentContext c;
    c.net = &prep;
    c.data = &data;
    c.golden = &golden;
    c.seed = seed;
    c.workers = workers;
    return c;
  }
};

const Fixture& fx() {
  static Fixture f;
  return f;
}

FaultSpec act_spec(double rate) {
  FaultSpec s;
  s.target = FaultTarget::Activations;
  s.mode = FaultMode::RandomBit;
  s.rate = rate;
  return s;
}

}  // namespace

TEST_CASE("worker resolution and slot-parallel execution") {
  CHECK(resolve_workers(4) == 4);
  CHECK(resolve_workers(1) == 1);
  CHECK(resolve_workers(0) >= 1);

  std::vector<std::atomic<int>> hits(37);
  parallel_trials(37, 3, [&](int t) { hits[static_cast<size_t>(t)] += 1; });
  for (auto& h : hits) CHECK(h.load() == 1);
  parallel_trials(0, 3, [&](int) { FAIL("no trials expected"); });
}

TEST_CASE("image pool is a deterministic truncated permutation") {
  const auto& f = fx();
  const auto ctx = f.ctx(5);
  const std::vector<int> a = build_image_pool(ctx, 16);
  const std::vector<int> b = build_image_pool(ctx, 16);
  CHECK(a == b);
  CHECK(a.size() == 16);
  std::set<int> uniq(a.begin(), a.end());
  CHECK(uniq.size() == a.size());
  for (int i : a) {
    CHECK(i >= 0);
    CHECK(i < f.data.count);
  }
  const std::vector<int> c = build_image_pool(f.ctx(6), 16);
  CHECK(c != a);

  // More trials than images wraps; pool caps at the population.
  CHECK(build_image_pool(ctx, 1000).size() == 40);

  SUBCASE("single-image sampling pins one image") {
    auto sctx = f.ctx(5);
    sctx.sampling = SampleMode::SingleImage;
    const std::vector<int> s = build_image_pool(sctx, 16);
    CHECK(s.size() == 1);
  }
  SUBCASE("eligible filter restricts the population") {
    std::vector<int> keep = {2, 4, 8};
    const std::vector<int> s = build_image_pool(ctx, 16, &keep);
    CHECK(s.size() == 3);
    for (int i : s) CHECK(std::set<int>(keep.begin(), keep.end()).count(i));
  }
}

TEST_CASE("zero rate short-circuits to clean outputs") {
  const auto& f = fx();
  const PointStats ps = measure_point(f.ctx(), act_spec(0.0), 32, 8, 1);
  CHECK(ps.trials == 32);
  CHECK(ps.flips == 0);
  CHECK(ps.rrmse_mean == 0.0);
  CHECK(ps.rrmse_stderr == 0.0);

  const std::vector<int> pool = build_image_pool(f.ctx(), 8);
  double hits = 0;
  for (int t = 0; t < 32; ++t) {
    const int img = pool[static_cast<size_t>(t) % pool.size()];
    if (f.golden.top_class[static_cast<size_t>(img)] ==
        f.data.labels[static_cast<size_t>(img)])
      hits += 1.0;
  }
  CHECK(ps.accuracy == doctest::Approx(hits / 32).epsilon(1e-12));
}

TEST_CASE("faulty points report flips and positive error") {
  const auto& f = fx();
  const PointStats ps = measure_point(f.ctx(), act_spec(1e-3), 48, 8, 2);
  CHECK(ps.trials == 48);
  CHECK(ps.images == 8);
  CHECK(ps.flips > 0);
  CHECK(ps.rrmse_mean > 0.0);
  CHECK(std::isfinite(ps.rrmse_stderr));
  CHECK(ps.accuracy >= 0.0);
  CHECK(ps.accuracy <= 1.0);
}

TEST_CASE("results are identical across worker counts") {
  const auto& f = fx();
  const FaultSpec s = act_spec(5e-4);
  const PointStats a = measure_point(f.ctx(9, 1), s, 40, 8, 7);
  const PointStats b = measure_point(f.ctx(9, 3), s, 40, 8, 7);
  CHECK(a.rrmse_mean == b.rrmse_mean);
  CHECK(a.rrmse_stderr == b.rrmse_stderr);
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.flips == b.flips);

  const std::vector<double> grid = {1e-4, 1e-3};
  const SweepResult sa = ber_sweep_standard(f.ctx(9, 1), s, grid, 24, 8);
  const SweepResult sb = ber_sweep_standard(f.ctx(9, 3), s, grid, 24, 8);
  REQUIRE(sa.rows.size() == sb.rows.size());
  for (size_t i = 0; i < sa.rows.size(); ++i) {
    CHECK(sa.rows[i].rrmse_mean == sb.rows[i].rrmse_mean);
    CHECK(sa.rows[i].accuracy == sb.rows[i].accuracy);
    CHECK(sa.rows[i].flips_total == sb.rows[i].flips_total);
  }
}

TEST_CASE("rrmse grows like the square root of the fault rate") {
  const auto& f = fx();
  const PointStats lo = measure_point(f.ctx(4), act_spec(2e-4), 160, 10, 11);
  const PointStats hi = measure_point(f.ctx(4), act_spec(2e-3), 160, 10, 12);
  const double ratio = hi.rrmse_mean / lo.rrmse_mean;
  CHECK(ratio == doctest::Approx(std::sqrt(10.0)).epsilon(0.30));
}

TEST_CASE("standard sweep emits one simulated row per grid point") {
  const auto& f = fx();
  const std::vector<double> grid = {0.0, 1e-4, 1e-3};
  const SweepResult r = ber_sweep_standard(f.ctx(), act_spec(0), grid, 16, 8);
  REQUIRE(r.rows.size() == 3);
  CHECK(!r.fit.has_value());
  for (size_t i = 0; i < r.rows.size(); ++i) {
    CHECK(r.rows[i].ber == grid[i]);
    CHECK(r.rows[i].mode == "standard");
    CHECK(r.rows[i].trials == 16);
  }
  CHECK(r.rows[0].flips_total == 0);
  CHECK(r.rows[2].flips_total > r.rows[1].flips_total);
  // Zero-rate grid points are served from the golden cache.
  CHECK(r.faulty_inferences == 2 * 16);
  CHECK(r.rows[0].seed != r.rows[1].seed);
}

TEST_CASE("accelerated sweep predicts the grid from msb anchors") {
  const auto& f = fx();
  std::vector<double> grid;
  for (int i = 0; i < 6; ++i)
    grid.push_back(1e-4 * std::pow(10.0, i / 5.0 * 2.0));
  const SweepResult r =
      ber_sweep_accelerated(f.ctx(), act_spec(0), grid, 3, 24, 8);
  REQUIRE(r.rows.size() == 3 + grid.size());
  CHECK(r.faulty_inferences == 3 * 24);
  REQUIRE(r.fit.has_value());

  int anchors = 0, predicted = 0;
  for (const auto& row : r.rows) {
    if (row.mode == "msb_anchor") {
      ++anchors;
      CHECK(row.trials == 24);
      CHECK(row.flips_total > 0);
    } else {
      REQUIRE(row.mode == "accelerated");
      ++predicted;
      CHECK(row.trials == 0);
      CHECK(row.flips_total == 0);
      CHECK(row.rrmse_mean > 0.0);
      CHECK(row.accuracy >= 0.0);
      CHECK(row.accuracy <= 1.0);
    }
  }
  CHECK(anchors == 3);
  CHECK(predicted == static_cast<int>(grid.size()));

  // Predicted rrmse scales exactly as sqrt(ber) along the grid.
  const SweepRow* first = nullptr;
  const SweepRow* last = nullptr;
  for (const auto& row : r.rows)
    if (row.mode == "accelerated") {
      if (!first) first = &row;
      last = &row;
    }
  REQUIRE(first != nullptr);
  const double want = std::sqrt(last->ber / first->ber);
  CHECK(last->rrmse_mean / first->rrmse_mean ==
        doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("aggregation rows carry a self-consistent prediction") {
  const auto& f = fx();
  const AggregationResult r =
      aggregation_validation(f.ctx(), 2e-4, 6, 32, 6);
  REQUIRE(!r.layers.empty());
  REQUIRE(r.per_layer_rrmse.size() == r.layers.size());
  REQUIRE(r.rows.size() == 6);
  for (double v : r.per_layer_rrmse) CHECK(v > 0.0);

  for (const auto& row : r.rows) {
    REQUIRE(row.layer_rates.size() == r.layers.size());
    double any = 0.0;
    std::vector<double> parts(r.layers.size());
    for (size_t j = 0; j < parts.size(); ++j) {
      any += row.layer_rates[j];
      parts[j] = r.per_layer_rrmse[j] * std::sqrt(row.layer_rates[j] / 2e-4);
    }
    CHECK(any > 0.0);
    CHECK(row.predicted ==
          doctest::Approx(aggregate_rrmse(parts)).epsilon(1e-12));
    CHECK(row.rel_error ==
          doctest::Approx(std::abs(row.measured - row.predicted) /
                          row.predicted)
              .epsilon(1e-12));
  }
  CHECK(r.faulty_inferences ==
        static_cast<uint64_t>(32) * (r.layers.size() + 6));
}

TEST_CASE("propagation reports downstream layers only") {
  const auto& f = fx();
  const PropagationResult r =
      layer_propagation_experiment(f.ctx(), 1, 1e-3, 24, 6);
  REQUIRE(!r.rows.empty());
  const int nl = f.prep.layer_count();
  CHECK(static_cast<int>(r.rows.size()) == nl - 1);
  for (const auto& row : r.rows) {
    CHECK(row.inject_layer == 1);
    CHECK(row.layer >= 1);
    CHECK(row.layer < nl);
    CHECK(row.rrmse_mean >= 0.0);
  }
  CHECK(r.faulty_inferences == 24);
}

TEST_CASE("class subsets share one faulty forward per trial") {
  const auto& f = fx();
  const std::vector<ClassSubsetRow> rows = class_subset_experiment(
      f.ctx(), {2, 5, 10}, {0.0, 1e-3}, 24, 8);
  REQUIRE(rows.size() == 6);
  for (const auto& row : rows) {
    CHECK((row.nc == 2 || row.nc == 5 || row.nc == 10));
    CHECK(row.accuracy >= 0.0);
    CHECK(row.accuracy <= 1.0);
    CHECK(row.trials == 24);
  }
  // Deterministic across calls.
  const std::vector<ClassSubsetRow> again = class_subset_experiment(
      f.ctx(), {2, 5, 10}, {0.0, 1e-3}, 24, 8);
  for (size_t i = 0; i < rows.size(); ++i)
    CHECK(rows[i].accuracy == again[i].accuracy);
}

TEST_CASE("fragile rankings cover every subset") {
  const auto& f = fx();
  // Two parametric layers, k = 1: exactly two candidate subsets.
  const FragileReport bf = fragile_layers_bruteforce(f.ctx(), 1e-3, 1, 16, 6);
  CHECK(bf.method == "bruteforce");
  REQUIRE(bf.rows.size() == 2);
  CHECK(bf.rows[0].accuracy >= bf.rows[1].accuracy);
  CHECK(bf.top == bf.rows[0].protect);
  CHECK(bf.faulty_inferences == 2 * 16);

  const FragileReport ac = fragile_layers_accelerated(f.ctx(), 1e-3, 1, 16, 6);
  CHECK(ac.method == "accelerated");
  REQUIRE(ac.rows.size() == 2);
  CHECK(ac.rows[0].rrmse_score <= ac.rows[1].rrmse_score);
  CHECK(ac.top == ac.rows[0].protect);
  CHECK(ac.faulty_inferences == 2 * 16);

  SUBCASE("match predicate honors the tie tolerance") {
    FragileReport a, b;
    a.method = "bruteforce";
    a.rows = {{{0}, 0.90, -1.0}, {{1}, 0.88, -1.0}};
    a.top = {0};
    b.method = "accelerated";
    b.rows = {{{0}, -1.0, 0.20}, {{1}, -1.0, 0.30}};
    b.top = {0};
    CHECK(fragile_topk_matches(a, b, 0.0));
    b.top = {1};
    CHECK(!fragile_topk_matches(a, b, 0.01));
    CHECK(fragile_topk_matches(a, b, 0.05));
    b.top = {2};  // not present in the bruteforce table
    CHECK(!fragile_topk_matches(a, b, 0.05));
  }
}

TEST_CASE("convergence study tracks running means per seed") {
  const auto& f = fx();
  const std::vector<uint64_t> seeds = {1, 2};
  const auto pts = convergence_study(f.ctx(), act_spec(1e-3), 10, seeds);
  REQUIRE(pts.size() == 20);
  for (int s = 0; s < 2; ++s) {
    for (int i = 0; i < 10; ++i) {
      const auto& p = pts[static_cast<size_t>(s * 10 + i)];
      CHECK(p.seed == seeds[static_cast<size_t>(s)]);
      CHECK(p.images == i + 1);
      CHECK(p.rrmse >= 0.0);
      CHECK(p.accuracy >= 0.0);
      CHECK(p.accuracy <= 1.0);
    }
  }
  const auto again = convergence_study(f.ctx(), act_spec(1e-3), 10, seeds);
  CHECK(pts.back().rrmse == again.back().rrmse);

  // Running accuracy is a cumulative mean: step i changes it by at most 1/i.
  for (int i = 1; i < 10; ++i) {
    const double prev = pts[static_cast<size_t>(i - 1)].accuracy;
    const double cur = pts[static_cast<size_t>(i)].accuracy;
    CHECK(std::abs(cur - prev) <= 1.0 / (i + 1) + 1e-12);
  }
}

TEST_CASE("bound and bitwidth campaigns rebuild per configuration") {
  const auto& f = fx();
  const std::vector<BoundSweepRow> rows =
      bound_sweep(f.net, f.data, act_spec(0), 1e-3, {1.0, 4.0}, 8, 24, 6, 3, 1);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].scale == 1.0);
  CHECK(rows[1].scale == 4.0);
  for (const auto& r : rows) {
    CHECK(r.rrmse_mean > 0.0);
    CHECK(r.clean_accuracy >= 0.0);
  }
  // Wider bounds at fixed bits mean bigger flip disturbances.
  CHECK(rows[1].rrmse_mean > rows[0].rrmse_mean);

  const std::vector<BitwidthRow> bw =
      bitwidth_comparison(f.net, f.data, act_spec(0), 1e-3, 24, 6, 3, 1);
  REQUIRE(bw.size() == 2);
  CHECK(bw[0].bits == 8);
  CHECK(bw[1].bits == 16);
  CHECK(bw[1].expected_flips == doctest::Approx(2 * bw[0].expected_flips));
  for (const auto& r : bw) CHECK(r.rrmse_mean > 0.0);
}
