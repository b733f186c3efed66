#include "softerr/fault.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>

#include "softerr/errors.hpp"

namespace softerr {

namespace {

constexpr uint64_t kWeightStream = 0x5741;
constexpr uint64_t kActStream = 0x4143;

}  // namespace

const char* fault_target_name(FaultTarget t) {
  return t == FaultTarget::Weights ? "weights" : "activations";
}

const char* fault_mode_name(FaultMode m) {
  return m == FaultMode::RandomBit ? "random_bit" : "msb_only";
}

FaultTarget fault_target_from_name(const std::string& s) {
  if (s == "weights") return FaultTarget::Weights;
  if (s == "activations") return FaultTarget::Activations;
  throw InvalidArgument("fault_target_from_name: unknown target '" + s + "'");
}

FaultMode fault_mode_from_name(const std::string& s) {
  if (s == "random_bit") return FaultMode::RandomBit;
  if (s == "msb_only") return FaultMode::MsbOnly;
  throw InvalidArgument("fault_mode_from_name: unknown mode '" + s + "'");
}

uint64_t InjectionRecord::total_flips() const {
  uint64_t n = 0;
  for (const auto& lf : per_layer) n += lf.flips.size();
  return n;
}

LayerFlips inject_tensor(QuantTensor& q, FaultMode mode, double rate, Rng& rng,
                         int layer) {
  if (!(rate >= 0.0 && rate <= 1.0))
    throw InvalidArgument("inject_tensor: rate must lie in [0, 1]");
  LayerFlips out;
  out.layer = layer;
  if (rate == 0.0 || q.words.empty()) return out;
  const uint64_t words = static_cast<uint64_t>(q.words.size());
  if (mode == FaultMode::RandomBit) {
    const uint64_t positions = words * static_cast<uint64_t>(q.config.bits);
    const uint64_t k = static_cast<uint64_t>(
        rng.binomial(static_cast<int64_t>(positions), rate));
    const auto picks = rng.sample_distinct(positions, k);
    out.flips.reserve(picks.size());
    for (uint64_t p : picks) {
      const int64_t word = static_cast<int64_t>(p / q.config.bits);
      const int bit = static_cast<int>(p % q.config.bits);
      toggle_bit(q, word, bit);
      out.flips.emplace_back(word, bit);
    }
  } else {
    const int msb = q.config.bits - 1;
    const uint64_t k = static_cast<uint64_t>(
        rng.binomial(static_cast<int64_t>(words), rate));
    const auto picks = rng.sample_distinct(words, k);
    out.flips.reserve(picks.size());
    for (uint64_t w : picks) {
      toggle_bit(q, static_cast<int64_t>(w), msb);
      out.flips.emplace_back(static_cast<int64_t>(w), msb);
    }
  }
  return out;
}

std::pair<QuantTensor, InjectionRecord> inject(const QuantTensor& q,
                                               const FaultSpec& spec,
                                               Rng& rng) {
  QuantTensor copy = q;
  InjectionRecord rec;
  rec.per_layer.push_back(inject_tensor(copy, spec.mode, spec.rate, rng));
  return {std::move(copy), std::move(rec)};
}

namespace {

bool layer_eligible(const PreparedNetwork& prep, FaultTarget target, int l) {
  if (target == FaultTarget::Weights)
    return !prep.weight_words[static_cast<size_t>(l)].words.empty();
  return prep.has_act[static_cast<size_t>(l)] != 0;
}

}  // namespace

InjectionPlan plan_from_spec(const PreparedNetwork& prep,
                             const FaultSpec& spec) {
  if (!(spec.rate >= 0.0 && spec.rate <= 1.0))
    throw InvalidArgument("plan_from_spec: rate must lie in [0, 1]");
  if (!prep.quantized)
    throw InvalidArgument("plan_from_spec: network must be quantized");
  InjectionPlan plan;
  plan.target = spec.target;
  plan.mode = spec.mode;
  plan.seed = spec.seed;
  plan.layer_rates.assign(static_cast<size_t>(prep.layer_count()), 0.0);
  if (spec.all_layers) {
    for (int l = 0; l < prep.layer_count(); ++l)
      if (layer_eligible(prep, spec.target, l))
        plan.layer_rates[static_cast<size_t>(l)] = spec.rate;
  } else {
    for (int l : spec.layers) {
      if (l < 0 || l >= prep.layer_count())
        throw InvalidArgument("plan_from_spec: layer index out of range");
      if (!layer_eligible(prep, spec.target, l))
        throw InvalidArgument("plan_from_spec: layer " + std::to_string(l) +
                              " is not eligible for " +
                              fault_target_name(spec.target));
      plan.layer_rates[static_cast<size_t>(l)] = spec.rate;
    }
  }
  return plan;
}

int first_affected_layer(const PreparedNetwork& prep,
                         const InjectionPlan& plan) {
  if (plan.layer_rates.size() != static_cast<size_t>(prep.layer_count()))
    throw InvalidArgument("first_affected_layer: plan size mismatch");
  for (int l = 0; l < prep.layer_count(); ++l)
    if (plan.layer_rates[static_cast<size_t>(l)] > 0.0) return l;
  return prep.layer_count();
}

double expected_flip_count(const PreparedNetwork& prep,
                           const FaultSpec& spec) {
  const InjectionPlan plan = plan_from_spec(prep, spec);
  double total = 0.0;
  for (int l = 0; l < prep.layer_count(); ++l) {
    const double r = plan.layer_rates[static_cast<size_t>(l)];
    if (r == 0.0) continue;
    int64_t words;
    int bits;
    if (plan.target == FaultTarget::Weights) {
      const QuantTensor& q = prep.weight_words[static_cast<size_t>(l)];
      words = q.size();
      bits = q.config.bits;
    } else {
      words = shape_size(prep.shapes[static_cast<size_t>(l)]);
      bits = prep.act_cfg[static_cast<size_t>(l)].bits;
    }
    const double positions =
        (plan.mode == FaultMode::RandomBit)
            ? static_cast<double>(words) * bits
            : static_cast<double>(words);
    total += positions * r;
  }
  return total;
}

namespace {

std::pair<ActivationTrace, InjectionRecord> run_faulty(
    const PreparedNetwork& prep, int start_layer, const RealTensor& start_act,
    const InjectionPlan& plan, uint64_t trial) {
  if (plan.layer_rates.size() != static_cast<size_t>(prep.layer_count()))
    throw InvalidArgument("faulty_forward: plan size mismatch");
  InjectionRecord rec;
  std::unordered_map<int, RealTensor> weight_ovr;
  if (plan.target == FaultTarget::Weights) {
    for (int l = start_layer; l < prep.layer_count(); ++l) {
      const double r = plan.layer_rates[static_cast<size_t>(l)];
      if (r == 0.0) continue;
      QuantTensor words = prep.weight_words[static_cast<size_t>(l)];
      Rng rng(mix_seed({plan.seed, trial, static_cast<uint64_t>(l),
                        kWeightStream}));
      LayerFlips lf = inject_tensor(words, plan.mode, r, rng, l);
      if (!lf.flips.empty()) {
        weight_ovr.emplace(l, dequantize(words));
        rec.per_layer.push_back(std::move(lf));
      }
    }
  }
  ActivationHook hook;
  if (plan.target == FaultTarget::Activations) {
    hook = [&](int layer, QuantTensor& q) {
      const double r = plan.layer_rates[static_cast<size_t>(layer)];
      if (r == 0.0) return;
      Rng rng(mix_seed({plan.seed, trial, static_cast<uint64_t>(layer),
                        kActStream}));
      LayerFlips lf = inject_tensor(q, plan.mode, r, rng, layer);
      if (!lf.flips.empty()) rec.per_layer.push_back(std::move(lf));
    };
  }
  ForwardOverrides ovr;
  if (!weight_ovr.empty()) ovr.weights = &weight_ovr;
  if (hook) ovr.act_hook = &hook;
  ActivationTrace trace = forward_from(prep, start_layer, start_act, ovr);
  return {std::move(trace), std::move(rec)};
}

}  // namespace

std::pair<ActivationTrace, InjectionRecord> faulty_forward(
    const PreparedNetwork& prep, const RealTensor& input,
    const InjectionPlan& plan, uint64_t trial) {
  return run_faulty(prep, 0, input, plan, trial);
}

std::pair<ActivationTrace, InjectionRecord> faulty_forward_from_golden(
    const PreparedNetwork& prep, const RealTensor& input,
    const ActivationTrace& golden, const InjectionPlan& plan, uint64_t trial) {
  const int start = first_affected_layer(prep, plan);
  if (start >= prep.layer_count()) {
    // Nothing to inject; the golden trace already is the answer.
    return {golden, InjectionRecord{}};
  }
  if (golden.start_layer != 0 || golden.end_layer() != prep.layer_count())
    throw InvalidArgument("faulty_forward_from_golden: need a full trace");
  const RealTensor& act =
      (start == 0) ? input : golden.layer_output(start - 1);
  return run_faulty(prep, start, act, plan, trial);
}

}  // namespace softerr
