#include "lvprune/training/losses.hpp"

#include <cmath>
#include <string>

namespace lvprune {

void LossConfig::validate() const {
  if (lambda_causal < 0.0 || lambda_ratio < 0.0) throw ConfigError("loss: weights must be nonnegative");
  if (lambda_causal == 0.0 && lambda_ratio == 0.0) throw ConfigError("loss: weights cannot both be zero");
  if (!(huber_beta > 0.0)) throw ConfigError("loss: huber_beta must be positive");
}

ad::Var causal_lm_loss(ad::Var logits, std::span<const int> positions, std::span<const int> targets) {
  if (positions.empty()) throw DegenerateLossError("causal_lm_loss: no loss positions");
  return ad::cross_entropy(logits, positions, targets);
}

double causal_lm_loss(const Tensor& logits, std::span<const int> positions, std::span<const int> targets) {
  ad::Tape tape;
  return causal_lm_loss(tape.constant_view(logits), positions, targets).scalar();
}

namespace {

double penalty(double x, const LossConfig& cfg) {
  if (cfg.ratio_kind == RatioLossKind::kMse) return x * x;
  const double ax = std::abs(x);
  return ax <= cfg.huber_beta ? 0.5 * x * x : cfg.huber_beta * (ax - 0.5 * cfg.huber_beta);
}

}  // namespace

ad::Var ratio_loss(std::span<const ad::Var> cumulative_decisions, std::span<const double> targets,
                   const LossConfig& cfg) {
  if (cumulative_decisions.size() != targets.size()) {
    throw DimensionError("ratio_loss: " + std::to_string(cumulative_decisions.size()) + " stages but " +
                         std::to_string(targets.size()) + " targets");
  }
  if (targets.empty()) throw DimensionError("ratio_loss: no stages");
  ad::Var total;
  for (std::size_t s = 0; s < targets.size(); ++s) {
    ad::Var gap = ad::add_scalar(ad::scale(ad::mean(cumulative_decisions[s]), -1.0), targets[s]);
    ad::Var term = cfg.ratio_kind == RatioLossKind::kMse ? ad::square(gap) : ad::huber(gap, cfg.huber_beta);
    total = s == 0 ? term : ad::add(total, term);
  }
  return ad::scale(total, 1.0 / static_cast<double>(targets.size()));
}

double ratio_loss(std::span<const double> keep_fractions, std::span<const double> targets,
                  const LossConfig& cfg) {
  if (keep_fractions.size() != targets.size()) {
    throw DimensionError("ratio_loss: " + std::to_string(keep_fractions.size()) + " stages but " +
                         std::to_string(targets.size()) + " targets");
  }
  if (targets.empty()) throw DimensionError("ratio_loss: no stages");
  double acc = 0.0;
  for (std::size_t s = 0; s < targets.size(); ++s) acc += penalty(targets[s] - keep_fractions[s], cfg);
  return acc / static_cast<double>(targets.size());
}

ad::Var total_loss(ad::Var causal, ad::Var ratio, const LossConfig& cfg) {
  return ad::add(ad::scale(causal, cfg.lambda_causal), ad::scale(ratio, cfg.lambda_ratio));
}

double total_loss(double causal, double ratio, const LossConfig& cfg) {
  return cfg.lambda_causal * causal + cfg.lambda_ratio * ratio;
}

}  // namespace lvprune
