#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lvprune/pruning/layout.hpp"

namespace lvprune {

// Analytic FLOP accounting. Convention: 2 FLOPs per multiply-accumulate;
// only matrix products are counted (norms, activations, residuals, rotary,
// embedding lookups and the vocabulary head are excluded).

enum class FfnKind {
  // Three matrices (gate, up, down).
  kGated,
  // Two matrices (up, down).
  kPlain,
};

struct TransformerSpec {
  int layers = 0;
  int d = 0;
  int heads = 0;
  int ffn = 0;
  FfnKind ffn_kind = FfnKind::kPlain;
  int vocab = 0;

  void validate(const std::string& section) const;
  bool operator==(const TransformerSpec&) const = default;
};

struct VisionEncoderSpec {
  // 0 means no encoder; d is then the raw patch width.
  int layers = 0;
  int d = 0;
  int heads = 0;
  int ffn = 0;
  FfnKind ffn_kind = FfnKind::kPlain;
  // Tokens processed by the encoder (patches plus any class token).
  int tokens = 0;

  void validate() const;
  TransformerSpec as_transformer() const { return {layers, d, heads, ffn, ffn_kind, 0}; }
  bool operator==(const VisionEncoderSpec&) const = default;
};

struct ConnectorSpec {
  // Layer widths from the encoder output to the decoder input, e.g.
  // {1024, 4096, 4096} for a two-layer MLP.
  std::vector<int> widths;

  void validate() const;
  bool operator==(const ConnectorSpec&) const = default;
};

struct DecisionModuleSpec {
  int blocks = 2;
  int heads = 8;
  int d = 0;

  void validate() const;
  bool operator==(const DecisionModuleSpec&) const = default;
};

struct ArchitectureSpec {
  TransformerSpec decoder;
  VisionEncoderSpec vision;
  ConnectorSpec connector;
  DecisionModuleSpec module;

  void validate() const;
  bool operator==(const ArchitectureSpec&) const = default;
};

struct InputSpec {
  int vision_tokens = 0;
  int text_tokens = 0;

  void validate() const;
  bool operator==(const InputSpec&) const = default;
};

// One transformer layer over n tokens: 4nd^2 projection MACs, 2n^2 d
// attention MACs, and 3 n d f (gated) or 2 n d f (plain) FFN MACs.
double decoder_layer_flops(long n, const TransformerSpec& spec);

// One decision module with q vision queries and t text keys/values. Per
// block: Q and output projections 2qd^2, K/V projections 2td^2, attention
// 2qtd, FFN 4qd^2 MACs; plus the 2-way scoring head qd*2.
double decision_module_flops(long q, long t, const DecisionModuleSpec& spec);

double connector_flops(long tokens, const ConnectorSpec& spec);

struct CostReport {
  double vision_encoder = 0.0;
  double connector = 0.0;
  std::vector<double> decoder_layers;
  // Tokens in force at each decoder layer.
  std::vector<int> layer_tokens;
  std::vector<double> decision_modules;
  // Vision queries scored by each decision module.
  std::vector<int> module_queries;
  double decoder = 0.0;
  double modules = 0.0;
  double total = 0.0;
  double baseline = 0.0;
  // (baseline - total) / baseline.
  double reduction = 0.0;
};

// Full pipeline cost. Without a schedule every decoder layer sees all tokens
// and no decision modules run. With one, module s scores the vision tokens
// still alive before it and decoder layers from schedule.layers[s] onward
// see keep_count(ratio_s, V) vision tokens plus the text. `ratios` replaces
// schedule.ratios when given (inference ratios); it must match the stage
// count, lie in (0, 1] and be nonincreasing.
CostReport pipeline_flops(const ArchitectureSpec& arch, const InputSpec& input,
                          const std::optional<PruneSchedule>& schedule,
                          const std::optional<std::vector<double>>& ratios = std::nullopt);

// Extra FLOPs of the decision modules when nothing is pruned: the pipeline
// with all-one keep ratios minus the baseline.
double decision_module_overhead(const ArchitectureSpec& arch, const InputSpec& input,
                                const std::vector<int>& layers);

// Ratios rho, rho - 0.2, rho - 0.4, ... for `stages` stages.
std::vector<double> stepped_ratios(double rho, std::size_t stages);

struct SweepPoint {
  double rho = 0.0;
  CostReport report;
};

struct Sweep {
  std::vector<SweepPoint> points;
  // Values of rho whose last ratio would be <= 0.
  std::vector<double> skipped;
};

// Evaluates rho = lo, lo + step, ... <= hi (with a small tolerance on the
// upper end) using stepped_ratios.
Sweep reduction_sweep(const ArchitectureSpec& arch, const InputSpec& input, const std::vector<int>& layers,
                      double lo, double hi, double step);

}  // namespace lvprune
