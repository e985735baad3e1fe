#pragma once

#include <span>
#include <vector>

#include "lvprune/numerics/autograd.hpp"

namespace lvprune {

// Which sequence rows hold vision tokens and which hold text tokens.
struct TokenLayout {
  int total = 0;
  std::vector<int> vision;
  std::vector<int> text;

  // Validates disjointness, coverage of 0..total-1 and strict ordering.
  static TokenLayout make(int total, std::vector<int> vision, std::vector<int> text);
  // Vision rows first, then text rows.
  static TokenLayout vision_then_text(int vision_count, int text_count);

  int vision_count() const noexcept { return static_cast<int>(vision.size()); }
  int text_count() const noexcept { return static_cast<int>(text.size()); }
};

// Per-vision-token keep flag, indexed by position within TokenLayout::vision.
struct PruneDecision {
  std::vector<double> values;

  static PruneDecision all_kept(int vision_count);
  // Throws if any entry is not exactly 0 or 1.
  void validate_binary() const;
  int kept() const;
  double keep_fraction() const;
  bool operator==(const PruneDecision&) const = default;
};

// Decision-module layer indices (a module runs after that many decoder
// layers) and cumulative keep ratios of the original vision-token count.
struct PruneSchedule {
  std::vector<int> layers;
  std::vector<double> ratios;

  std::size_t stages() const noexcept { return layers.size(); }
  // Strictly increasing layers in [0, depth), ratios in (0, 1] strictly
  // decreasing. Throws ScheduleInfeasibleError otherwise.
  void validate(int depth) const;
  // Inference ratios only need to be nonincreasing: an equal ratio prunes
  // nothing further at that stage.
  void validate_inference(int depth) const;
  bool operator==(const PruneSchedule&) const = default;
};

// Number of vision tokens kept at ratio rho: floor(rho * count), at least 1.
// A 1e-9 guard absorbs products such as 0.29 * 100 = 28.999999999999996.
int keep_count(double rho, int vision_count);

// Elementwise product; once dropped a token stays dropped.
PruneDecision combine_decisions(const PruneDecision& prev, const PruneDecision& next);

// M(i,j) = 1 if i == j or j is text; M(i,j) = d_j for other vision columns.
Tensor build_attention_mask(const PruneDecision& d, const TokenLayout& layout);

namespace ad {
// Differentiable mask construction; `decision` is 1 x |I_V| and may be soft.
Var build_attention_mask(Var decision, const TokenLayout& layout);
}  // namespace ad

// Indices (within vision ordering) of the k highest keep probabilities among
// surviving tokens, in descending score order; ties go to the smaller index.
// k = keep_count(rho_hat, keep_probability.size()).
std::vector<int> select_top_k(std::span<const double> keep_probability, double rho_hat,
                              const PruneDecision& surviving);

// Position indices of the pruned sequence: kept vision tokens (ascending
// original order) followed by all text tokens, each carrying its original
// index from `positions`.
std::vector<int> reindex_positions(std::span<const int> positions, std::span<const int> kept_vision,
                                   const TokenLayout& layout);

}  // namespace lvprune
