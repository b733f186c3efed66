#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "softerr/network.hpp"
#include "softerr/quant.hpp"
#include "softerr/rng.hpp"

namespace softerr {

enum class FaultTarget { Weights, Activations };
enum class FaultMode { RandomBit, MsbOnly };

const char* fault_target_name(FaultTarget t);
const char* fault_mode_name(FaultMode m);
FaultTarget fault_target_from_name(const std::string& s);
FaultMode fault_mode_from_name(const std::string& s);

// One injection configuration. `rate` is the per-bit flip probability in
// RandomBit mode and the per-word selection probability in MsbOnly mode.
// An empty `layers` with all_layers=true targets every eligible layer.
struct FaultSpec {
  FaultTarget target = FaultTarget::Activations;
  FaultMode mode = FaultMode::RandomBit;
  double rate = 0.0;
  bool all_layers = true;
  std::vector<int> layers;
  uint64_t seed = 0;
};

struct LayerFlips {
  int layer = -1;
  std::vector<std::pair<int64_t, int>> flips;  // (word index, bit index)
};

struct InjectionRecord {
  std::vector<LayerFlips> per_layer;

  uint64_t total_flips() const;
};

// Flip-count sampling: binomial draw over the eligible positions, then that
// many distinct positions uniformly without replacement. Distributionally
// identical to independent per-position trials. Mutates q in place.
LayerFlips inject_tensor(QuantTensor& q, FaultMode mode, double rate, Rng& rng,
                         int layer = -1);

// Copying flavor used at the API boundary; layer selection and seed in
// `spec` are ignored at tensor level.
std::pair<QuantTensor, InjectionRecord> inject(const QuantTensor& q,
                                               const FaultSpec& spec,
                                               Rng& rng);

// Per-layer rates resolved against a prepared network. Rates are indexed by
// layer; ineligible layers must stay at zero.
struct InjectionPlan {
  FaultTarget target = FaultTarget::Activations;
  FaultMode mode = FaultMode::RandomBit;
  std::vector<double> layer_rates;
  uint64_t seed = 0;
};

// Validates selection (layers exist; weight targets are parametric and
// quantized; activation targets carry an activation quant config).
InjectionPlan plan_from_spec(const PreparedNetwork& prep,
                             const FaultSpec& spec);

// First layer whose state the plan can disturb; layer_count() for all-zero
// plans (nothing to do).
int first_affected_layer(const PreparedNetwork& prep,
                         const InjectionPlan& plan);

// Expected flips per inference under the spec.
double expected_flip_count(const PreparedNetwork& prep, const FaultSpec& spec);

// One transient-fault inference. Weight faults flip private copies of the
// quantized weights; activation faults flip each targeted layer's quantized
// output in flight. Flip streams are derived from (plan seed, trial, layer),
// so results do not depend on scheduling or on where the forward starts.
std::pair<ActivationTrace, InjectionRecord> faulty_forward(
    const PreparedNetwork& prep, const RealTensor& input,
    const InjectionPlan& plan, uint64_t trial);

// Same trial, but resumed from the first affected layer using the golden
// trace for the upstream prefix. Produces the identical downstream flips and
// activations as faulty_forward for the same (plan, trial).
std::pair<ActivationTrace, InjectionRecord> faulty_forward_from_golden(
    const PreparedNetwork& prep, const RealTensor& input,
    const ActivationTrace& golden, const InjectionPlan& plan, uint64_t trial);

}  // namespace softerr
