#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lvprune/numerics/tensor.hpp"

namespace lvprune {

enum class UpdateRule { kSgd, kAdam };

struct OptimizerConfig {
  double peak_lr = 2e-6;
  double warmup_ratio = 0.03;
  std::size_t total_steps = 1000;
  double max_grad_norm = 1.0;
  double weight_decay = 0.0;
  std::size_t batch_size = 64;
  UpdateRule rule = UpdateRule::kSgd;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
  std::size_t warmup_steps() const;
  bool operator==(const OptimizerConfig&) const = default;
};

// Linear warmup 0 -> peak over warmup_steps(), then cosine decay to 0 at
// total_steps. Steps past the end return 0.
double lr_at(std::size_t step, const OptimizerConfig& cfg);

// Rescales every gradient by max_norm / norm when the global L2 norm exceeds
// max_norm. Returns the pre-clip norm.
double clip_grad_norm(std::span<Tensor> grads, double max_norm);

double global_norm(std::span<const Tensor> grads);

// Applies one update to `params` in place. Weight decay is decoupled
// (params -= lr * wd * params) and off by default.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(std::move(cfg)) {}

  void step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr);
  std::size_t steps_taken() const noexcept { return t_; }

 private:
  OptimizerConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace lvprune
