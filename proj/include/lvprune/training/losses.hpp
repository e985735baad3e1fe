#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lvprune/numerics/autograd.hpp"

namespace lvprune {

enum class RatioLossKind { kMse, kHuber };

struct LossConfig {
  double lambda_causal = 1.0;
  double lambda_ratio = 2.0;
  RatioLossKind ratio_kind = RatioLossKind::kMse;
  double huber_beta = 0.5;

  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

// Mean next-token cross-entropy over `positions`; targets[k] is the id
// predicted at positions[k].
ad::Var causal_lm_loss(ad::Var logits, std::span<const int> positions, std::span<const int> targets);
double causal_lm_loss(const Tensor& logits, std::span<const int> positions, std::span<const int> targets);

// (1/S) sum_s penalty(rho_s - mean_i D_s,i) over cumulative decisions D_s
// (each 1 x |I_V|). penalty is the square, or the Huber function with
// threshold beta.
ad::Var ratio_loss(std::span<const ad::Var> cumulative_decisions, std::span<const double> targets,
                   const LossConfig& cfg);
double ratio_loss(std::span<const double> keep_fractions, std::span<const double> targets,
                  const LossConfig& cfg);

ad::Var total_loss(ad::Var causal, ad::Var ratio, const LossConfig& cfg);
double total_loss(double causal, double ratio, const LossConfig& cfg);

}  // namespace lvprune
