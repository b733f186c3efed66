#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "softerr/fault.hpp"
#include "softerr/model_io.hpp"
#include "softerr/network.hpp"
#include "softerr/stats.hpp"

namespace softerr {

enum class SampleMode { SingleImage, MultiImage };

// Resolves a worker-count request: positive values pass through, zero reads
// SOFTERR_THREADS (default 1). Worker count never changes emitted numbers;
// trials are seeded by index and reduced in slot order.
int resolve_workers(int requested);

// Runs fn(0..count-1) across `workers` threads; fn writes only its own slot.
void parallel_trials(int count, int workers,
                     const std::function<void(int)>& fn);

// Shared inputs of one experiment run. `golden` must be computed from
// exactly (net, data).
struct ExperimentContext {
  const PreparedNetwork* net = nullptr;
  const Dataset* data = nullptr;
  const GoldenOutputs* golden = nullptr;
  uint64_t seed = 1;
  int workers = 1;
  SampleMode sampling = SampleMode::MultiImage;
};

// Trial-index-to-image mapping: a seeded permutation of the eligible images,
// truncated to pool_size; trial t uses pool[t % pool_size].
std::vector<int> build_image_pool(const ExperimentContext& ctx, int pool_size,
                                  const std::vector<int>* eligible = nullptr);

struct PointStats {
  int trials = 0;
  int images = 0;
  uint64_t flips = 0;
  // Quadratic mean of the per-trial final-logit RRMSEs (root of the pooled
  // mean square); its standard error comes from the delta method. The
  // quadratic mean is what the sqrt(rate) scaling and Euclidean aggregation
  // laws apply to.
  double rrmse_mean = 0.0;
  double rrmse_stderr = 0.0;
  double accuracy = 0.0;
  double accuracy_stderr = 0.0;
  uint64_t seed = 0;  // effective seed of the flip streams
};

// Workhorse: `trials` transient-fault inferences under the spec, final-logit
// RRMSE against the golden logits and argmax accuracy. point_tag decorrelates
// flip streams between sweep points under one campaign seed. A zero rate
// short-circuits to the cached clean outputs (no faulty inference executed).
PointStats measure_point(const ExperimentContext& ctx, const FaultSpec& spec,
                         int trials, int pool_size, uint64_t point_tag);

// Sweep row in the emitted column order.
struct SweepRow {
  double ber = 0.0;
  std::string mode;  // "standard", "msb_anchor" or "accelerated"
  int trials = 0;
  int images = 0;
  uint64_t flips_total = 0;
  double rrmse_mean = 0.0;
  double rrmse_stderr = 0.0;
  double accuracy = 0.0;
  double accuracy_stderr = 0.0;
  uint64_t seed = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  uint64_t faulty_inferences = 0;
  std::optional<SigmoidFit> fit;  // accelerated sweeps carry their fit
};

// Full Monte-Carlo sweep: every grid point simulated with the template
// spec's target at RandomBit mode.
SweepResult ber_sweep_standard(const ExperimentContext& ctx,
                               const FaultSpec& base, std::vector<double> bers,
                               int trials_per_point, int pool_size);

// Model-accelerated sweep: `anchor_count` log-even anchor points simulated
// in MsbOnly mode (per-word rate numerically equal to the anchor BER, i.e.
// `bits` times fewer flips), anchor RRMSEs converted to random-bit
// equivalents and rescaled along the grid (anchors averaged weighted by
// observed flip count), accuracy predicted by a sigmoid fit through the
// anchors' (rrmse, accuracy) pairs. Grid rows carry trials = 0: they cost
// no faulty inference.
SweepResult ber_sweep_accelerated(const ExperimentContext& ctx,
                                  const FaultSpec& base,
                                  std::vector<double> bers, int anchor_count,
                                  int trials_per_anchor, int pool_size);

struct PropagationRow {
  int inject_layer = -1;
  int layer = -1;
  double rrmse_mean = 0.0;
  double rrmse_stderr = 0.0;
};

struct PropagationResult {
  std::vector<PropagationRow> rows;
  int trials = 0;
  uint64_t flips_total = 0;
  uint64_t faulty_inferences = 0;
};

// Activation injection at one layer; mean RRMSE of every downstream layer.
PropagationResult layer_propagation_experiment(const ExperimentContext& ctx,
                                               int inject_layer, double ber,
                                               int trials, int pool_size);

struct AggregationRow {
  int combo = 0;
  std::vector<double> layer_rates;  // indexed by eligible layer slot
  double measured = 0.0;
  double predicted = 0.0;
  double rel_error = 0.0;
};

struct AggregationResult {
  std::vector<int> layers;               // eligible activation layers used
  std::vector<double> per_layer_rrmse;   // measured at base_ber
  std::vector<AggregationRow> rows;
  double mean_rel_error = 0.0;
  uint64_t faulty_inferences = 0;
};

// Validates Euclidean error composition: per-layer RRMSE measured once at
// base_ber, then n_combos random multi-layer configurations with per-layer
// rates drawn from {0, base_ber, 2*base_ber} measured against the
// prediction sqrt(sum r_l^2 * rate_l/base_ber).
AggregationResult aggregation_validation(const ExperimentContext& ctx,
                                         double base_ber, int n_combos,
                                         int trials, int pool_size);

struct BoundSweepRow {
  double scale = 0.0;
  double rrmse_mean = 0.0;
  double rrmse_stderr = 0.0;
  double clean_accuracy = 0.0;
};

// Rebuilds the network per bound multiplier and measures RRMSE at fixed BER
// plus the clean quantized accuracy over the whole dataset.
std::vector<BoundSweepRow> bound_sweep(const NetworkGraph& net,
                                       const Dataset& data,
                                       const FaultSpec& base, double ber,
                                       std::vector<double> scales, int bits,
                                       int trials, int pool_size,
                                       uint64_t seed, int workers);

struct BitwidthRow {
  int bits = 0;
  double ber = 0.0;
  double rrmse_mean = 0.0;
  double rrmse_stderr = 0.0;
  double expected_flips = 0.0;
};

std::vector<BitwidthRow> bitwidth_comparison(const NetworkGraph& net,
                                             const Dataset& data,
                                             const FaultSpec& base, double ber,
                                             int trials, int pool_size,
                                             uint64_t seed, int workers);

struct ClassSubsetRow {
  int nc = 0;
  double ber = 0.0;
  double accuracy = 0.0;
  double accuracy_stderr = 0.0;
  int trials = 0;
};

// Restricted argmax over nested label prefixes {0..nc-1}, evaluated on a
// common image population (labels within the smallest subset) so each trial
// shares one faulty inference across all subsets.
std::vector<ClassSubsetRow> class_subset_experiment(
    const ExperimentContext& ctx, std::vector<int> class_counts,
    std::vector<double> bers, int trials, int pool_size);

struct FragileRow {
  std::vector<int> protect;  // protected parametric layers
  double accuracy = -1.0;    // bruteforce only
  double rrmse_score = -1.0; // accelerated only: aggregate of unprotected
};

struct FragileReport {
  std::string method;  // "bruteforce" or "accelerated"
  std::vector<FragileRow> rows;  // best-first
  std::vector<int> top;          // protected set of the best row
  uint64_t faulty_inferences = 0;
};

// Exhaustive: for every k-subset of parametric layers, accuracy with that
// subset fault-free and all other parametric layers injected at `ber`.
FragileReport fragile_layers_bruteforce(const ExperimentContext& ctx,
                                        double ber, int k,
                                        int trials_per_combo, int pool_size);

// Accelerated: one MsbOnly RRMSE measurement per parametric layer, converted
// to the random-bit equivalent at `ber`; subsets ranked by the aggregate
// RRMSE of their unprotected layers (low is good).
FragileReport fragile_layers_accelerated(const ExperimentContext& ctx,
                                         double ber, int k,
                                         int trials_per_layer, int pool_size);

// True when both reports pick the same protected set, or when the
// bruteforce accuracy of the accelerated pick is within `tol` of the
// bruteforce winner (tie tolerance).
bool fragile_topk_matches(const FragileReport& bruteforce,
                          const FragileReport& accelerated, double tol);

struct ConvergencePoint {
  uint64_t seed = 0;
  int images = 0;
  double rrmse = 0.0;
  double accuracy = 0.0;
};

// Running estimates per seed: after each image, the cumulative quadratic-mean
// RRMSE and mean accuracy. One trial per image.
std::vector<ConvergencePoint> convergence_study(const ExperimentContext& ctx,
                                                const FaultSpec& spec,
                                                int n_images,
                                                const std::vector<uint64_t>& seeds);

}  // namespace softerr
