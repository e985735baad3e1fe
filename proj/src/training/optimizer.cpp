#include "lvprune/training/optimizer.hpp"

#include <cmath>
#include <numbers>

namespace lvprune {

void OptimizerConfig::validate() const {
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) throw ConfigError("optimizer: warmup_ratio must be in [0, 1)");
  if (!(max_grad_norm > 0.0)) throw ConfigError("optimizer: max_grad_norm must be positive");
  if (peak_lr < 0.0) throw ConfigError("optimizer: peak_lr must be nonnegative");
  if (weight_decay < 0.0) throw ConfigError("optimizer: weight_decay must be nonnegative");
  if (total_steps == 0) throw ConfigError("optimizer: total_steps must be positive");
  if (batch_size == 0) throw ConfigError("optimizer: batch_size must be positive");
}

std::size_t OptimizerConfig::warmup_steps() const {
  return static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps)));
}

double lr_at(std::size_t step, const OptimizerConfig& cfg) {
  const std::size_t warmup = cfg.warmup_steps();
  if (step >= cfg.total_steps) return 0.0;
  if (step < warmup) return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(cfg.total_steps - warmup);
  return cfg.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double global_norm(std::span<const Tensor> grads) {
  double sq = 0.0;
  for (const Tensor& g : grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

double clip_grad_norm(std::span<Tensor> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw Error("clip_grad_norm: max_norm must be positive");
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (Tensor& g : grads) g *= factor;
  }
  return norm;
}

void Optimizer::step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr) {
  if (params.size() != grads.size()) throw DimensionError("Optimizer::step: params/grads length mismatch");
  ++t_;
  if (cfg_.rule == UpdateRule::kAdam && m_.empty()) {
    for (Tensor* p : params) {
      m_.push_back(Tensor::Zero(p->rows(), p->cols()));
      v_.push_back(Tensor::Zero(p->rows(), p->cols()));
    }
  }
  const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    if (g.size() == 0) continue;
    require_same_shape(p, g, "Optimizer::step");
    if (cfg_.weight_decay > 0.0) p -= (lr * cfg_.weight_decay) * p;
    if (cfg_.rule == UpdateRule::kSgd) {
      p -= lr * g;
    } else {
      m_[i] = cfg_.adam_beta1 * m_[i] + (1.0 - cfg_.adam_beta1) * g;
      v_[i] = cfg_.adam_beta2 * v_[i] + (1.0 - cfg_.adam_beta2) * g.cwiseProduct(g);
      p.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.adam_eps);
    }
  }
}

}  // namespace lvprune
