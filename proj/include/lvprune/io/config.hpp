#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lvprune/cost/cost_model.hpp"
#include "lvprune/model/toy_mllm.hpp"
#include "lvprune/training/dataset.hpp"
#include "lvprune/training/losses.hpp"
#include "lvprune/training/optimizer.hpp"

namespace lvprune {

struct ScheduleConfig {
  PruneSchedule train;
  // Inference keep ratios; defaults to the training ratios when empty.
  std::vector<double> inference_ratios;
  double tau = 1.0;

  PruneSchedule inference() const;
  bool operator==(const ScheduleConfig&) const = default;
};

struct PretrainConfig {
  OptimizerConfig optimizer;
  // Load the backbone from this checkpoint instead of running phase A.
  std::string from_checkpoint;
  bool operator==(const PretrainConfig&) const = default;
};

struct TrainerConfig {
  int micro_batch = 0;
  int threads = 1;
  bool operator==(const TrainerConfig&) const = default;
};

struct DataConfig {
  // task.samples is the training set size.
  SyntheticSpec task;
  int eval_samples = 1000;
  std::uint64_t seed = 1;

  std::vector<SyntheticSample> train_set() const;
  std::vector<SyntheticSample> eval_set() const;
  bool operator==(const DataConfig&) const = default;
};

struct CostConfig {
  ArchitectureSpec arch;
  InputSpec input;
  std::vector<int> layers;
  // Default first-stage ratio for `flops --rho` when none is given.
  double rho = 0.5;
  bool operator==(const CostConfig&) const = default;
};

struct OutputConfig {
  std::string checkpoint;
  std::string metrics;
  std::string report;
  bool operator==(const OutputConfig&) const = default;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ToyMllmConfig model;
  // d_model always follows model.d_model.
  DecisionModuleConfig module;
  ScheduleConfig schedule;
  LossConfig loss;
  PretrainConfig pretrain;
  OptimizerConfig optimizer;
  TrainerConfig trainer;
  DataConfig data;
  std::optional<CostConfig> cost;
  OutputConfig output;

  // Every section's own checks plus the cross-section ones. Throws ConfigError.
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

// Missing keys keep their defaults; unknown keys and wrongly typed values are
// errors naming the offending field. The result is validated.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
std::string serialize_config(const RunConfig& cfg);

// The toy model as a cost-model architecture: no vision encoder, a linear
// connector and a plain-FFN decoder.
ArchitectureSpec toy_architecture(const ToyMllmConfig& model, const DecisionModuleConfig& module);

}  // namespace lvprune
