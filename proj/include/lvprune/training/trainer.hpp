#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "lvprune/training/dataset.hpp"
#include "lvprune/training/losses.hpp"
#include "lvprune/training/optimizer.hpp"

namespace lvprune {

struct EpochMetrics {
  int epoch = 0;
  // Optimizer steps completed at the end of this epoch.
  std::size_t step = 0;
  double causal_loss = 0.0;
  double ratio_loss = 0.0;
  double total_loss = 0.0;
  // Mean realized cumulative keep fraction per stage (empty when pretraining).
  std::vector<double> keep_fractions;
  // Answer accuracy of the training-mode forward over the epoch's samples.
  double accuracy = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

struct TrainerOptions {
  double tau = 1.0;
  // Samples of a step are split into micro-batches of this size (0: the whole
  // batch). Each micro-batch runs on one tape; with threads > 1 micro-batches
  // run concurrently. Gradients are reduced in micro-batch order, so results
  // do not depend on the thread count.
  int micro_batch = 0;
  int threads = 1;
  EpochCallback on_epoch;
};

// Phase A: trains every backbone parameter on the task with no pruning
// (causal loss at the answer position only). Decision modules are untouched.
std::vector<EpochMetrics> pretrain_backbone(ToyMllm& model, const std::vector<SyntheticSample>& data,
                                            const OptimizerConfig& opt, std::uint64_t seed,
                                            const TrainerOptions& options = {});

// Phase B: freezes the backbone and trains only the decision modules with
// total_loss on the masked forward (straight-through decisions).
std::vector<EpochMetrics> train_decision_modules(ToyMllm& model, const std::vector<SyntheticSample>& data,
                                                 const PruneSchedule& schedule, const LossConfig& loss,
                                                 const OptimizerConfig& opt, std::uint64_t seed,
                                                 const TrainerOptions& options = {});

enum class EvalMode {
  // Masked forward with noiseless decisions (argmax of gamma).
  kMasked,
  // Physically pruned forward, top-k by keep probability.
  kPruned,
  // Pruned forward with keep scores replaced by seeded uniform draws.
  kRandom,
};

// Fraction of samples whose argmax prediction at the answer position equals
// the target. Without a schedule the plain backbone is evaluated.
double evaluate_accuracy(const ToyMllm& model, const std::vector<SyntheticSample>& data,
                         const std::optional<PruneSchedule>& schedule, EvalMode mode, std::uint64_t seed = 0);

// FNV-1a checksum over the bytes of every backbone tensor.
std::uint64_t backbone_checksum(const ToyMllm& model);

}  // namespace lvprune
