#pragma once

#include <optional>
#include <span>
#include <vector>

#include "lvprune/model/toy_mllm.hpp"

namespace lvprune {

struct ModelInput {
  // vision_tokens x vision_dim raw patch vectors.
  Tensor patches;
  std::vector<int> text_ids;
  // The first text_before ids precede the image; the rest follow it.
  int text_before = 0;
};

struct Embedded {
  ad::Var h;
  TokenLayout layout;
  std::vector<int> positions;
};

// Sequence order: text_ids[0, text_before), the V vision rows (through the
// linear connector), then the remaining text ids.
Embedded embed_inputs(const BackboneVars& backbone, const ToyMllmConfig& cfg, const ModelInput& input,
                      ad::Tape& tape);

inline constexpr double kCausalMaskValue = -1e9;

// Additive causal mask from original position indices: -1e9 where the key's
// position exceeds the query's.
Tensor causal_additive_mask(std::span<const int> positions);

// One decoder layer. Raw attention scores get the additive causal mask, then
// masked_row_softmax with `prune_mask` when given (plain softmax otherwise).
ad::Var decoder_layer_forward(const DecoderLayerVars& layer, ad::Var h, std::span<const int> positions,
                              std::optional<ad::Var> prune_mask, const ToyMllmConfig& cfg);

ad::Var output_logits(const BackboneVars& backbone, ad::Var h, const ToyMllmConfig& cfg);

struct MaskedForwardOptions {
  double tau = 1.0;
  DecisionMode mode = DecisionMode::kStraightThrough;
  // Per-stage decisions used instead of the decision modules' output, combined
  // cumulatively like sampled ones.
  const std::vector<PruneDecision>* forced_decisions = nullptr;
  bool keep_hidden = false;
};

// Tape-level masked (training) forward. Sequence length never changes; the
// mask built after module s governs every later layer until module s+1.
struct MaskedForward {
  ad::Var logits;
  std::vector<ad::Var> gammas;
  // Cumulative decisions, 1 x |I_V| each.
  std::vector<ad::Var> decisions;
  std::vector<ad::Var> hidden;
  TokenLayout layout;
  std::vector<int> positions;
};

MaskedForward forward_masked(ad::Tape& tape, const BackboneVars& backbone,
                             std::span<const DecisionModuleVars> modules, const ToyMllmConfig& cfg,
                             const DecisionModuleConfig& module_cfg, const ModelInput& input,
                             const PruneSchedule& schedule, const MaskedForwardOptions& options,
                             SeededRng& rng);

struct ForwardTrace {
  // Masked forward: N x vocab. Pruned forward: |I_T| x vocab.
  Tensor logits;
  std::vector<KeepScores> keep_scores;
  // Cumulative keep flags over the original vision tokens, per stage.
  std::vector<PruneDecision> decisions;
  std::vector<double> keep_fractions;
  // Pruned forward only: surviving original vision indices (ascending).
  std::vector<std::vector<int>> kept_indices;
  // Per decoder layer output and the original positions of its rows.
  std::vector<Tensor> hidden;
  std::vector<std::vector<int>> hidden_positions;
  std::vector<int> text_positions;
};

ForwardTrace forward_train(const ToyMllm& model, const ModelInput& input, const PruneSchedule& schedule,
                           double tau, SeededRng& rng,
                           DecisionMode mode = DecisionMode::kStraightThrough,
                           const std::vector<PruneDecision>* forced_decisions = nullptr,
                           bool keep_hidden = false);

struct InferOptions {
  // Per-stage original vision indices to keep, bypassing scoring.
  const std::vector<std::vector<int>>* forced_keep = nullptr;
  // When set, keep scores are replaced by uniform draws from this stream.
  SeededRng* random_scores = nullptr;
  bool keep_hidden = false;
};

// Physically pruned forward. After module s the dropped vision rows are
// removed and survivors keep their original position indices. `schedule`
// carries the inference ratios, which must be nonincreasing.
ForwardTrace forward_infer(const ToyMllm& model, const ModelInput& input, const PruneSchedule& schedule,
                           const InferOptions& options = {});

// Plain backbone forward with no decision modules.
ForwardTrace forward_plain(const ToyMllm& model, const ModelInput& input, bool keep_hidden = false);

struct EquivalenceReport {
  double max_abs_hidden = 0.0;
  double max_abs_logits = 0.0;
  std::vector<double> per_layer;
  std::vector<std::vector<int>> kept_indices;

  double max_abs() const { return std::max(max_abs_hidden, max_abs_logits); }
};

// Samples straight-through decisions from a masked forward (seeded), replays
// them as keep-sets through the pruned forward and compares hidden states at
// every layer (surviving vision and all text rows) and text logits.
EquivalenceReport verify_equivalence(const ToyMllm& model, const ModelInput& input,
                                     const PruneSchedule& schedule, std::uint64_t seed, double tau = 1.0);

}  // namespace lvprune
