#include "softerr/campaign.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <numeric>
#include <thread>

#include "softerr/errors.hpp"
#include "softerr/rng.hpp"

namespace softerr {

namespace {

constexpr uint64_t kPoolSalt = 0x706f6f6c;   // image pool shuffle
constexpr uint64_t kPointSalt = 0x73696d75;  // per-point plan seeds
constexpr uint64_t kComboSalt = 0x636f6d62;  // aggregation combo menu

void check_context(const ExperimentContext& ctx) {
  if (ctx.net == nullptr || ctx.data == nullptr || ctx.golden == nullptr)
    throw InvalidArgument(
        "experiment context: network, dataset and golden outputs required");
  if (ctx.golden->image_count != ctx.data->count)
    throw InvalidArgument("golden outputs do not cover the dataset");
  if (ctx.golden->class_count != ctx.net->net.class_count)
    throw InvalidArgument("golden outputs disagree on class count");
  if (ctx.workers < 1) throw InvalidArgument("workers must be >= 1");
}

double mean_of(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return pairwise_sum(xs) / static_cast<double>(xs.size());
}

double stderr_of(std::span<const double> xs, double mean) {
  const size_t n = xs.size();
  if (n < 2) return 0.0;
  std::vector<double> sq(n);
  for (size_t i = 0; i < n; ++i) {
    const double d = xs[i] - mean;
    sq[i] = d * d;
  }
  const double var = pairwise_sum(sq) / static_cast<double>(n - 1);
  return std::sqrt(var / static_cast<double>(n));
}

// Golden activations for a fixed image pool; lets weight- and single-layer
// experiments resume forwards below the first disturbed layer.
struct TracePool {
  std::vector<int> images;
  std::vector<ActivationTrace> traces;
};

TracePool build_trace_pool(const ExperimentContext& ctx,
                           const std::vector<int>& pool) {
  TracePool tp;
  tp.images = pool;
  tp.traces.reserve(pool.size());
  for (int img : pool)
    tp.traces.push_back(forward_full(*ctx.net, ctx.data->image(img)));
  return tp;
}

// Shared trial loop: per trial one transient-fault inference, final-logit
// RRMSE against the golden logits plus argmax correctness. The campaign
// RRMSE is the quadratic mean of the per-trial values (root of the pooled
// mean square): that is the statistic the sqrt(rate) scaling law and the
// Euclidean aggregation law hold for. Slot-indexed writes and an
// order-fixed reduction keep the result identical for any worker count.
PointStats run_plan(const ExperimentContext& ctx, const InjectionPlan& plan,
                    int trials, const std::vector<int>& pool,
                    const TracePool* traces) {
  if (trials < 1) throw InvalidArgument("trials must be >= 1");
  if (pool.empty()) throw InvalidArgument("empty image pool");
  const int n = static_cast<int>(pool.size());
  std::vector<double> rrmse_s(static_cast<size_t>(trials));
  std::vector<double> correct_s(static_cast<size_t>(trials));
  std::vector<uint64_t> flips_s(static_cast<size_t>(trials));
  parallel_trials(trials, ctx.workers, [&](int t) {
    const int img = pool[static_cast<size_t>(t % n)];
    const RealTensor input = ctx.data->image(img);
    auto out = traces != nullptr
                   ? faulty_forward_from_golden(
                         *ctx.net, input,
                         traces->traces[static_cast<size_t>(t % n)], plan,
                         static_cast<uint64_t>(t))
                   : faulty_forward(*ctx.net, input, plan,
                                    static_cast<uint64_t>(t));
    const RealTensor& logits = out.first.logits();
    const std::span<const double> gold = ctx.golden->image_logits(img);
    double se = 0.0;
    for (int64_t i = 0; i < logits.size(); ++i) {
      const double d = logits.data[static_cast<size_t>(i)] -
                       gold[static_cast<size_t>(i)];
      se += d * d;
    }
    const double ref_var = ctx.golden->logit_variance(img);
    if (ref_var <= 0.0)
      throw DegenerateInput("golden logits have zero variance");
    rrmse_s[static_cast<size_t>(t)] =
        std::sqrt(se / static_cast<double>(logits.size()) / ref_var);
    correct_s[static_cast<size_t>(t)] =
        argmax_index(logits) == ctx.data->labels[static_cast<size_t>(img)]
            ? 1.0
            : 0.0;
    flips_s[static_cast<size_t>(t)] = out.second.total_flips();
  });
  PointStats ps;
  ps.trials = trials;
  ps.images = n;
  ps.seed = plan.seed;
  for (uint64_t f : flips_s) ps.flips += f;
  std::vector<double> sq(rrmse_s.size());
  for (size_t i = 0; i < rrmse_s.size(); ++i) sq[i] = rrmse_s[i] * rrmse_s[i];
  const double ms = mean_of(sq);
  ps.rrmse_mean = std::sqrt(ms);
  // Delta method: sd(sqrt(X)) = sd(X) / (2 sqrt(E X)).
  ps.rrmse_stderr = ms > 0.0 ? stderr_of(sq, ms) / (2.0 * ps.rrmse_mean) : 0.0;
  ps.accuracy = mean_of(correct_s);
  ps.accuracy_stderr = stderr_of(correct_s, ps.accuracy);
  return ps;
}

bool plan_has_active_rate(const InjectionPlan& plan) {
  for (double r : plan.layer_rates)
    if (r > 0.0) return true;
  return false;
}

// Word width shared by every active layer of the plan; conversions between
// flip modes assume one width.
int plan_word_bits(const PreparedNetwork& prep, const InjectionPlan& plan) {
  int bits = 0;
  for (size_t l = 0; l < plan.layer_rates.size(); ++l) {
    if (plan.layer_rates[l] <= 0.0) continue;
    const int b = plan.target == FaultTarget::Weights
                      ? prep.weight_words[l].config.bits
                      : prep.act_cfg[l].bits;
    if (bits == 0)
      bits = b;
    else if (bits != b)
      throw InvalidArgument("active layers mix word widths");
  }
  if (bits == 0) throw InvalidArgument("plan has no active layers");
  return bits;
}

std::vector<int> parametric_layers(const PreparedNetwork& prep) {
  std::vector<int> out;
  for (int l = 0; l < prep.layer_count(); ++l)
    if (prep.net.layers[static_cast<size_t>(l)].parametric()) out.push_back(l);
  return out;
}

// Lexicographic k-subsets of `items`.
std::vector<std::vector<int>> k_subsets(const std::vector<int>& items, int k) {
  const int n = static_cast<int>(items.size());
  std::vector<std::vector<int>> out;
  std::vector<int> pick(static_cast<size_t>(k));
  std::iota(pick.begin(), pick.end(), 0);
  for (;;) {
    std::vector<int> subset(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i)
      subset[static_cast<size_t>(i)] = items[static_cast<size_t>(pick[i])];
    out.push_back(std::move(subset));
    int i = k - 1;
    while (i >= 0 && pick[static_cast<size_t>(i)] == n - k + i) --i;
    if (i < 0) break;
    ++pick[static_cast<size_t>(i)];
    for (int j = i + 1; j < k; ++j)
      pick[static_cast<size_t>(j)] = pick[static_cast<size_t>(j - 1)] + 1;
  }
  return out;
}

}  // namespace

int resolve_workers(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("SOFTERR_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 1;
}

void parallel_trials(int count, int workers,
                     const std::function<void(int)>& fn) {
  if (count <= 0) return;
  const int w = std::max(1, std::min(workers, count));
  if (w == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex err_mu;
  std::exception_ptr err;
  std::vector<std::thread> threads;
  threads.reserve(static_cast<size_t>(w));
  for (int i = 0; i < w; ++i) {
    threads.emplace_back([&] {
      for (;;) {
        const int t = next.fetch_add(1, std::memory_order_relaxed);
        if (t >= count) return;
        try {
          fn(t);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!err) err = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : threads) th.join();
  if (err) std::rethrow_exception(err);
}

std::vector<int> build_image_pool(const ExperimentContext& ctx, int pool_size,
                                  const std::vector<int>* eligible) {
  check_context(ctx);
  std::vector<int> idx;
  if (eligible != nullptr) {
    idx = *eligible;
  } else {
    idx.resize(static_cast<size_t>(ctx.data->count));
    std::iota(idx.begin(), idx.end(), 0);
  }
  if (idx.empty()) throw InvalidArgument("image pool: no eligible images");
  Rng rng(mix_seed({ctx.seed, kPoolSalt}));
  for (size_t i = idx.size() - 1; i > 0; --i) {
    const size_t j = static_cast<size_t>(rng.below(i + 1));
    std::swap(idx[i], idx[j]);
  }
  size_t want = pool_size <= 0 ? idx.size()
                               : std::min(idx.size(),
                                          static_cast<size_t>(pool_size));
  if (ctx.sampling == SampleMode::SingleImage) want = 1;
  idx.resize(want);
  return idx;
}

PointStats measure_point(const ExperimentContext& ctx, const FaultSpec& spec,
                         int trials, int pool_size, uint64_t point_tag) {
  check_context(ctx);
  if (trials < 1) throw InvalidArgument("trials must be >= 1");
  const std::vector<int> pool = build_image_pool(ctx, pool_size);
  FaultSpec s = spec;
  s.seed = mix_seed({ctx.seed, kPointSalt, point_tag});
  const InjectionPlan plan = plan_from_spec(*ctx.net, s);
  if (!plan_has_active_rate(plan)) {
    // Nothing to disturb: serve clean results from the golden cache.
    const int n = static_cast<int>(pool.size());
    std::vector<double> correct_s(static_cast<size_t>(trials));
    for (int t = 0; t < trials; ++t) {
      const int img = pool[static_cast<size_t>(t % n)];
      correct_s[static_cast<size_t>(t)] =
          ctx.golden->top_class[static_cast<size_t>(img)] ==
                  ctx.data->labels[static_cast<size_t>(img)]
              ? 1.0
              : 0.0;
    }
    PointStats ps;
    ps.trials = trials;
    ps.images = n;
    ps.seed = s.seed;
    ps.accuracy = mean_of(correct_s);
    ps.accuracy_stderr = stderr_of(correct_s, ps.accuracy);
    return ps;
  }
  return run_plan(ctx, plan, trials, pool, nullptr);
}

SweepResult ber_sweep_standard(const ExperimentContext& ctx,
                               const FaultSpec& base, std::vector<double> bers,
                               int trials_per_point, int pool_size) {
  check_context(ctx);
  if (bers.empty()) throw InvalidArgument("sweep needs at least one point");
  SweepResult res;
  for (size_t i = 0; i < bers.size(); ++i) {
    FaultSpec s = base;
    s.mode = FaultMode::RandomBit;
    s.rate = bers[i];
    const PointStats ps =
        measure_point(ctx, s, trials_per_point, pool_size, i);
    res.rows.push_back({bers[i], "standard", ps.trials, ps.images, ps.flips,
                        ps.rrmse_mean, ps.rrmse_stderr, ps.accuracy,
                        ps.accuracy_stderr, ps.seed});
    if (bers[i] > 0.0)
      res.faulty_inferences += static_cast<uint64_t>(trials_per_point);
  }
  return res;
}

SweepResult ber_sweep_accelerated(const ExperimentContext& ctx,
                                  const FaultSpec& base,
                                  std::vector<double> bers, int anchor_count,
                                  int trials_per_anchor, int pool_size) {
  check_context(ctx);
  if (bers.empty()) throw InvalidArgument("sweep needs at least one point");
  if (anchor_count < 2) throw InvalidArgument("need at least two anchors");
  double bmin = bers[0], bmax = bers[0];
  for (double b : bers) {
    if (b <= 0.0)
      throw InvalidArgument("accelerated sweep needs positive rates");
    bmin = std::min(bmin, b);
    bmax = std::max(bmax, b);
  }
  if (bmax <= bmin)
    throw InvalidArgument("accelerated sweep needs a rate span");

  FaultSpec probe = base;
  probe.mode = FaultMode::MsbOnly;
  probe.rate = bmin;
  probe.seed = 0;
  const int bits =
      plan_word_bits(*ctx.net, plan_from_spec(*ctx.net, probe));

  // Sign-bit anchors: per-word selection rate numerically equal to the
  // anchor rate, i.e. `bits` times fewer flips than the standard run it
  // stands in for.
  SweepResult res;
  std::vector<double> anchors(static_cast<size_t>(anchor_count));
  std::vector<double> anchor_rrmse(static_cast<size_t>(anchor_count));
  std::vector<double> anchor_flips(static_cast<size_t>(anchor_count));
  std::vector<std::pair<double, double>> fit_points;
  const double lmin = std::log(bmin), lmax = std::log(bmax);
  for (int i = 0; i < anchor_count; ++i) {
    const double a = std::exp(lmin + (lmax - lmin) * i / (anchor_count - 1));
    anchors[static_cast<size_t>(i)] = a;
    FaultSpec s = base;
    s.mode = FaultMode::MsbOnly;
    s.rate = a;
    const PointStats ps = measure_point(ctx, s, trials_per_anchor, pool_size,
                                        0x4d534200ull + static_cast<uint64_t>(i));
    anchor_rrmse[static_cast<size_t>(i)] = ps.rrmse_mean;
    anchor_flips[static_cast<size_t>(i)] = static_cast<double>(ps.flips);
    fit_points.emplace_back(ps.rrmse_mean, ps.accuracy);
    res.rows.push_back({a, "msb_anchor", ps.trials, ps.images, ps.flips,
                        ps.rrmse_mean, ps.rrmse_stderr, ps.accuracy,
                        ps.accuracy_stderr, ps.seed});
    res.faulty_inferences += static_cast<uint64_t>(trials_per_anchor);
  }

  double clean_hits = 0.0;
  for (int i = 0; i < ctx.data->count; ++i)
    if (ctx.golden->top_class[static_cast<size_t>(i)] ==
        ctx.data->labels[static_cast<size_t>(i)])
      clean_hits += 1.0;
  const double acc_clean = clean_hits / static_cast<double>(ctx.data->count);
  res.fit =
      fit_sigmoid_accuracy(fit_points, acc_clean, ctx.net->net.class_count);

  for (double t : bers) {
    // Each anchor independently predicts the random-bit RRMSE at rate t.
    // Anchors are averaged weighted by observed flip count: the relative
    // variance of an RMS estimate shrinks with the flips behind it, and a
    // zero-flip anchor carries no scaling information at all.
    double sum = 0.0, wsum = 0.0;
    for (int i = 0; i < anchor_count; ++i) {
      const double w = anchor_flips[static_cast<size_t>(i)];
      if (w <= 0.0) continue;
      const double std_eq = msb_to_standard_rrmse(
          anchor_rrmse[static_cast<size_t>(i)], bits);
      sum += w * scale_rrmse_to_ber(
                     std_eq, anchors[static_cast<size_t>(i)] / bits, t);
      wsum += w;
    }
    const double r = wsum > 0.0 ? sum / wsum : 0.0;
    res.rows.push_back({t, "accelerated", 0, 0, 0, r, 0.0,
                        res.fit->model(r), 0.0, ctx.seed});
  }
  return res;
}

PropagationResult layer_propagation_experiment(const ExperimentContext& ctx,
                                               int inject_layer, double ber,
                                               int trials, int pool_size) {
  check_context(ctx);
  if (trials < 1) throw InvalidArgument("trials must be >= 1");
  const std::vector<int> pool = build_image_pool(ctx, pool_size);
  const TracePool tp = build_trace_pool(ctx, pool);

  FaultSpec s;
  s.target = FaultTarget::Activations;
  s.mode = FaultMode::RandomBit;
  s.rate = ber;
  s.all_layers = false;
  s.layers = {inject_layer};
  s.seed = mix_seed({ctx.seed, kPointSalt, 0x70726f70});
  const InjectionPlan plan = plan_from_spec(*ctx.net, s);

  const int last = ctx.net->layer_count();
  const int nl = last - inject_layer;
  if (nl < 1) throw InvalidArgument("inject layer out of range");
  std::vector<double> slots(static_cast<size_t>(trials) *
                            static_cast<size_t>(nl));
  std::vector<uint64_t> flips_s(static_cast<size_t>(trials));
  parallel_trials(trials, ctx.workers, [&](int t) {
    const size_t p = static_cast<size_t>(t) % pool.size();
    auto out = faulty_forward_from_golden(*ctx.net,
                                          ctx.data->image(pool[p]),
                                          tp.traces[p], plan,
                                          static_cast<uint64_t>(t));
    const std::vector<LayerDelta> deltas = delta_trace(tp.traces[p], out.first);
    for (int j = 0; j < nl; ++j)
      slots[static_cast<size_t>(t) * nl + static_cast<size_t>(j)] =
          deltas[static_cast<size_t>(j)].rrmse;
    flips_s[static_cast<size_t>(t)] = out.second.total_flips();
  });

  PropagationResult res;
  res.trials = trials;
  res.faulty_inferences = static_cast<uint64_t>(trials);
  for (uint64_t f : flips_s) res.flips_total += f;
  std::vector<double> col(static_cast<size_t>(trials));
  for (int j = 0; j < nl; ++j) {
    for (int t = 0; t < trials; ++t) {
      const double r =
          slots[static_cast<size_t>(t) * nl + static_cast<size_t>(j)];
      col[static_cast<size_t>(t)] = r * r;
    }
    const double ms = mean_of(col);
    PropagationRow row;
    row.inject_layer = inject_layer;
    row.layer = inject_layer + j;
    row.rrmse_mean = std::sqrt(ms);
    row.rrmse_stderr =
        ms > 0.0 ? stderr_of(col, ms) / (2.0 * row.rrmse_mean) : 0.0;
    res.rows.push_back(row);
  }
  return res;
}

AggregationResult aggregation_validation(const ExperimentContext& ctx,
                                         double base_ber, int n_combos,
                                         int trials, int pool_size) {
  check_context(ctx);
  if (base_ber <= 0.0) throw InvalidArgument("base rate must be positive");
  if (n_combos < 1) throw InvalidArgument("need at least one combination");
  const std::vector<int> pool = build_image_pool(ctx, pool_size);
  const TracePool tp = build_trace_pool(ctx, pool);

  AggregationResult res;
  for (int l = 0; l < ctx.net->layer_count(); ++l)
    if (ctx.net->has_act[static_cast<size_t>(l)]) res.layers.push_back(l);
  if (res.layers.empty())
    throw InvalidArgument("no activation-quantized layers to inject into");
  const size_t nl = res.layers.size();

  res.per_layer_rrmse.resize(nl);
  for (size_t j = 0; j < nl; ++j) {
    InjectionPlan plan;
    plan.target = FaultTarget::Activations;
    plan.mode = FaultMode::RandomBit;
    plan.layer_rates.assign(static_cast<size_t>(ctx.net->layer_count()), 0.0);
    plan.layer_rates[static_cast<size_t>(res.layers[j])] = base_ber;
    plan.seed = mix_seed({ctx.seed, kPointSalt, 0x61676762, j});
    const PointStats ps = run_plan(ctx, plan, trials, pool, &tp);
    res.per_layer_rrmse[j] = ps.rrmse_mean;
    res.faulty_inferences += static_cast<uint64_t>(trials);
  }

  Rng menu(mix_seed({ctx.seed, kComboSalt}));
  double rel_sum = 0.0;
  for (int c = 0; c < n_combos; ++c) {
    std::vector<double> rates(nl, 0.0);
    bool any = false;
    while (!any) {
      for (size_t j = 0; j < nl; ++j) {
        const uint64_t pick = menu.below(3);  // {0, base, 2*base}
        rates[j] = static_cast<double>(pick) * base_ber;
        any = any || pick != 0;
      }
    }
    InjectionPlan plan;
    plan.target = FaultTarget::Activations;
    plan.mode = FaultMode::RandomBit;
    plan.layer_rates.assign(static_cast<size_t>(ctx.net->layer_count()), 0.0);
    for (size_t j = 0; j < nl; ++j)
      plan.layer_rates[static_cast<size_t>(res.layers[j])] = rates[j];
    plan.seed = mix_seed({ctx.seed, kPointSalt, 0x6167676d,
                          static_cast<uint64_t>(c)});
    const PointStats ps = run_plan(ctx, plan, trials, pool, &tp);
    res.faulty_inferences += static_cast<uint64_t>(trials);

    std::vector<double> parts(nl);
    for (size_t j = 0; j < nl; ++j)
      parts[j] = res.per_layer_rrmse[j] *
                 std::sqrt(rates[j] / base_ber);
    AggregationRow row;
    row.combo = c;
    row.layer_rates = rates;
    row.measured = ps.rrmse_mean;
    row.predicted = aggregate_rrmse(parts);
    row.rel_error = row.predicted > 0.0
                        ? std::abs(row.measured - row.predicted) / row.predicted
                        : 0.0;
    rel_sum += row.rel_error;
    res.rows.push_back(std::move(row));
  }
  res.mean_rel_error = rel_sum / n_combos;
  return res;
}

std::vector<BoundSweepRow> bound_sweep(const NetworkGraph& net,
                                       const Dataset& data,
                                       const FaultSpec& base, double ber,
                                       std::vector<double> scales, int bits,
                                       int trials, int pool_size,
                                       uint64_t seed, int workers) {
  if (scales.empty()) throw InvalidArgument("bound sweep needs scales");
  std::vector<BoundSweepRow> rows;
  for (size_t i = 0; i < scales.size(); ++i) {
    PrepareOptions opts;
    opts.quantized = true;
    opts.bound_scale = scales[i];
    opts.bits_override = bits;
    const PreparedNetwork prep = prepare_network(net, opts);
    const GoldenOutputs golden = compute_golden_outputs(prep, data);
    double hits = 0.0;
    for (int k = 0; k < data.count; ++k)
      if (golden.top_class[static_cast<size_t>(k)] ==
          data.labels[static_cast<size_t>(k)])
        hits += 1.0;
    ExperimentContext ctx;
    ctx.net = &prep;
    ctx.data = &data;
    ctx.golden = &golden;
    ctx.seed = seed;
    ctx.workers = workers;
    FaultSpec s = base;
    s.rate = ber;
    const PointStats ps =
        measure_point(ctx, s, trials, pool_size, 0x626e6400ull + i);
    rows.push_back({scales[i], ps.rrmse_mean, ps.rrmse_stderr,
                    hits / static_cast<double>(data.count)});
  }
  return rows;
}

std::vector<BitwidthRow> bitwidth_comparison(const NetworkGraph& net,
                                             const Dataset& data,
                                             const FaultSpec& base, double ber,
                                             int trials, int pool_size,
                                             uint64_t seed, int workers) {
  std::vector<BitwidthRow> rows;
  for (int bits : {8, 16}) {
    PrepareOptions opts;
    opts.quantized = true;
    opts.bits_override = bits;
    const PreparedNetwork prep = prepare_network(net, opts);
    const GoldenOutputs golden = compute_golden_outputs(prep, data);
    ExperimentContext ctx;
    ctx.net = &prep;
    ctx.data = &data;
    ctx.golden = &golden;
    ctx.seed = seed;
    ctx.workers = workers;
    FaultSpec s = base;
    s.rate = ber;
    const PointStats ps = measure_point(ctx, s, trials, pool_size,
                                        0x62697400ull +
                                            static_cast<uint64_t>(bits));
    BitwidthRow row;
    row.bits = bits;
    row.ber = ber;
    row.rrmse_mean = ps.rrmse_mean;
    row.rrmse_stderr = ps.rrmse_stderr;
    row.expected_flips = expected_flip_count(prep, s);
    rows.push_back(row);
  }
  return rows;
}

std::vector<ClassSubsetRow> class_subset_experiment(
    const ExperimentContext& ctx, std::vector<int> class_counts,
    std::vector<double> bers, int trials, int pool_size) {
  check_context(ctx);
  if (class_counts.empty()) throw InvalidArgument("need class subsets");
  std::sort(class_counts.begin(), class_counts.end());
  class_counts.erase(
      std::unique(class_counts.begin(), class_counts.end()),
      class_counts.end());
  const int full = ctx.net->net.class_count;
  for (int nc : class_counts)
    if (nc < 2 || nc > full)
      throw InvalidArgument("class subset sizes must lie in [2, class_count]");
  const int smallest = class_counts.front();

  // Common population: images whose label lives in every nested subset, so
  // each faulty inference scores all subsets at once.
  std::vector<int> eligible;
  for (int i = 0; i < ctx.data->count; ++i)
    if (ctx.data->labels[static_cast<size_t>(i)] < smallest)
      eligible.push_back(i);
  const std::vector<int> pool = build_image_pool(ctx, pool_size, &eligible);

  const size_t ns = class_counts.size();
  std::vector<ClassSubsetRow> rows;
  for (size_t bi = 0; bi < bers.size(); ++bi) {
    FaultSpec s;
    s.target = FaultTarget::Activations;
    s.mode = FaultMode::RandomBit;
    s.rate = bers[bi];
    s.seed = mix_seed({ctx.seed, kPointSalt, 0x636c7373, bi});
    const InjectionPlan plan = plan_from_spec(*ctx.net, s);

    std::vector<double> correct(static_cast<size_t>(trials) * ns);
    parallel_trials(trials, ctx.workers, [&](int t) {
      const int img = pool[static_cast<size_t>(t) % pool.size()];
      auto out = faulty_forward(*ctx.net, ctx.data->image(img), plan,
                                static_cast<uint64_t>(t));
      const RealTensor& logits = out.first.logits();
      const int label = ctx.data->labels[static_cast<size_t>(img)];
      for (size_t si = 0; si < ns; ++si) {
        const int nc = class_counts[si];
        int best = 0;
        for (int k = 1; k < nc; ++k)
          if (logits.data[static_cast<size_t>(k)] >
              logits.data[static_cast<size_t>(best)])
            best = k;
        correct[static_cast<size_t>(t) * ns + si] = best == label ? 1.0 : 0.0;
      }
    });
    std::vector<double> col(static_cast<size_t>(trials));
    for (size_t si = 0; si < ns; ++si) {
      for (int t = 0; t < trials; ++t)
        col[static_cast<size_t>(t)] =
            correct[static_cast<size_t>(t) * ns + si];
      ClassSubsetRow row;
      row.nc = class_counts[si];
      row.ber = bers[bi];
      row.accuracy = mean_of(col);
      row.accuracy_stderr = stderr_of(col, row.accuracy);
      row.trials = trials;
      rows.push_back(row);
    }
  }
  return rows;
}

FragileReport fragile_layers_bruteforce(const ExperimentContext& ctx,
                                        double ber, int k,
                                        int trials_per_combo, int pool_size) {
  check_context(ctx);
  const std::vector<int> params = parametric_layers(*ctx.net);
  if (k < 1 || k >= static_cast<int>(params.size()))
    throw InvalidArgument("protected-set size must leave layers exposed");
  const std::vector<int> pool = build_image_pool(ctx, pool_size);
  const TracePool tp = build_trace_pool(ctx, pool);

  FragileReport rep;
  rep.method = "bruteforce";
  const auto subsets = k_subsets(params, k);
  for (size_t c = 0; c < subsets.size(); ++c) {
    FaultSpec s;
    s.target = FaultTarget::Weights;
    s.mode = FaultMode::RandomBit;
    s.rate = ber;
    s.all_layers = false;
    for (int l : params)
      if (std::find(subsets[c].begin(), subsets[c].end(), l) ==
          subsets[c].end())
        s.layers.push_back(l);
    s.seed = mix_seed({ctx.seed, kPointSalt, 0x66726167, c});
    const InjectionPlan plan = plan_from_spec(*ctx.net, s);
    const PointStats ps = run_plan(ctx, plan, trials_per_combo, pool, &tp);
    rep.faulty_inferences += static_cast<uint64_t>(trials_per_combo);
    FragileRow row;
    row.protect = subsets[c];
    row.accuracy = ps.accuracy;
    rep.rows.push_back(std::move(row));
  }
  std::stable_sort(rep.rows.begin(), rep.rows.end(),
                   [](const FragileRow& a, const FragileRow& b) {
                     if (a.accuracy != b.accuracy)
                       return a.accuracy > b.accuracy;
                     return a.protect < b.protect;
                   });
  rep.top = rep.rows.front().protect;
  return rep;
}

FragileReport fragile_layers_accelerated(const ExperimentContext& ctx,
                                         double ber, int k,
                                         int trials_per_layer, int pool_size) {
  check_context(ctx);
  const std::vector<int> params = parametric_layers(*ctx.net);
  if (k < 1 || k >= static_cast<int>(params.size()))
    throw InvalidArgument("protected-set size must leave layers exposed");
  const std::vector<int> pool = build_image_pool(ctx, pool_size);
  const TracePool tp = build_trace_pool(ctx, pool);

  FragileReport rep;
  rep.method = "accelerated";
  // One sign-bit probe per layer, per-word rate sized for a fixed expected
  // flip count, converted to the random-bit RRMSE at the target rate.
  constexpr double kProbeFlips = 8.0;
  std::vector<double> layer_rrmse(params.size());
  for (size_t j = 0; j < params.size(); ++j) {
    const int l = params[j];
    const QuantTensor& words =
        ctx.net->weight_words[static_cast<size_t>(l)];
    const double n_words = static_cast<double>(words.words.size());
    const double probe_rate = std::min(0.25, kProbeFlips / n_words);
    InjectionPlan plan;
    plan.target = FaultTarget::Weights;
    plan.mode = FaultMode::MsbOnly;
    plan.layer_rates.assign(static_cast<size_t>(ctx.net->layer_count()), 0.0);
    plan.layer_rates[static_cast<size_t>(l)] = probe_rate;
    plan.seed = mix_seed({ctx.seed, kPointSalt, 0x66726770, j});
    const PointStats ps = run_plan(ctx, plan, trials_per_layer, pool, &tp);
    rep.faulty_inferences += static_cast<uint64_t>(trials_per_layer);
    const double std_eq = msb_to_standard_rrmse(ps.rrmse_mean,
                                                words.config.bits);
    layer_rrmse[j] = scale_rrmse_to_ber(
        std_eq, probe_rate / words.config.bits, ber);
  }

  for (const auto& subset : k_subsets(params, k)) {
    std::vector<double> parts;
    for (size_t j = 0; j < params.size(); ++j)
      if (std::find(subset.begin(), subset.end(), params[j]) == subset.end())
        parts.push_back(layer_rrmse[j]);
    FragileRow row;
    row.protect = subset;
    row.rrmse_score = aggregate_rrmse(parts);
    rep.rows.push_back(std::move(row));
  }
  std::stable_sort(rep.rows.begin(), rep.rows.end(),
                   [](const FragileRow& a, const FragileRow& b) {
                     if (a.rrmse_score != b.rrmse_score)
                       return a.rrmse_score < b.rrmse_score;
                     return a.protect < b.protect;
                   });
  rep.top = rep.rows.front().protect;
  return rep;
}

bool fragile_topk_matches(const FragileReport& bruteforce,
                          const FragileReport& accelerated, double tol) {
  if (bruteforce.rows.empty() || accelerated.rows.empty()) return false;
  if (bruteforce.top == accelerated.top) return true;
  const double best = bruteforce.rows.front().accuracy;
  for (const FragileRow& row : bruteforce.rows)
    if (row.protect == accelerated.top) return best - row.accuracy <= tol;
  return false;
}

std::vector<ConvergencePoint> convergence_study(
    const ExperimentContext& ctx, const FaultSpec& spec, int n_images,
    const std::vector<uint64_t>& seeds) {
  check_context(ctx);
  if (n_images < 1) throw InvalidArgument("need at least one image");
  if (seeds.empty()) throw InvalidArgument("need at least one seed");
  std::vector<ConvergencePoint> points;
  for (uint64_t sd : seeds) {
    ExperimentContext local = ctx;
    local.seed = sd;
    const std::vector<int> pool = build_image_pool(local, n_images);
    FaultSpec s = spec;
    s.seed = mix_seed({sd, kPointSalt, 0x636e7667});
    const InjectionPlan plan = plan_from_spec(*ctx.net, s);
    double rrmse_sq_sum = 0.0, correct_sum = 0.0;
    for (size_t i = 0; i < pool.size(); ++i) {
      const int img = pool[i];
      auto out = faulty_forward(*ctx.net, ctx.data->image(img), plan,
                                static_cast<uint64_t>(i));
      const RealTensor& logits = out.first.logits();
      const std::span<const double> gold = ctx.golden->image_logits(img);
      double se = 0.0;
      for (int64_t j = 0; j < logits.size(); ++j) {
        const double d = logits.data[static_cast<size_t>(j)] -
                         gold[static_cast<size_t>(j)];
        se += d * d;
      }
      rrmse_sq_sum += se / static_cast<double>(logits.size()) /
                      ctx.golden->logit_variance(img);
      correct_sum += argmax_index(logits) ==
                             ctx.data->labels[static_cast<size_t>(img)]
                         ? 1.0
                         : 0.0;
      ConvergencePoint pt;
      pt.seed = sd;
      pt.images = static_cast<int>(i) + 1;
      pt.rrmse = std::sqrt(rrmse_sq_sum / static_cast<double>(i + 1));
      pt.accuracy = correct_sum / static_cast<double>(i + 1);
      points.push_back(pt);
    }
  }
  return points;
}

}  // namespace softerr
