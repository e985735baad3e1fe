#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lvprune/model/forward.hpp"

namespace lvprune {

struct CheckResult {
  std::string name;
  // The measured quantity (a deviation, error or violation count) and the
  // bound it must stay below (or equal, for counts).
  double value = 0.0;
  double threshold = 0.0;
  bool pass = false;
  std::string detail;
};

// Mask structure over random decisions and layouts: diagonal ones, text
// columns ones, other vision columns equal to d_j; the tape and plain
// builders agree.
CheckResult check_mask_structure(std::uint64_t seed, int trials = 200);

// Masked softmax rows sum to 1 and pruned (off-diagonal) columns are zero.
CheckResult check_masked_softmax(std::uint64_t seed, int trials = 200);

// Perturbing tokens pruned by a module before layer 0 leaves every other row
// of every layer and the logits unchanged.
CheckResult check_pruned_isolation(const ToyMllm& model, std::uint64_t seed, int trials = 5);

// Cumulative top-k selection over random schedules: no token comes back and
// survivor counts equal keep_count at every stage. Value is the number of
// violations.
CheckResult check_monotone_pruning(std::uint64_t seed, int schedules = 100);

// Masked vs physically pruned forward over `inputs` random inputs, each with
// freshly drawn decision-module parameters on the model's backbone.
CheckResult check_equivalence(const ToyMllm& model, const PruneSchedule& schedule, std::uint64_t seed,
                              int inputs = 10);

// Central differences on total_loss over every decision-module parameter of a
// small model (d=16, V=6, 2 text tokens) using the soft relaxation.
CheckResult check_gradients(std::uint64_t seed, double h = 1e-5);

// Straight-through decisions are one-hot, eval decisions follow argmax, and
// Gumbel-max keep frequencies match softmax(gamma).
CheckResult check_gumbel(std::uint64_t seed);

// Analytic decoder-layer and decision-module FLOPs against the count
// accumulated inside the matmul kernel.
CheckResult check_cost_agreement(const ToyMllm& model);

std::vector<CheckResult> run_verify_suite(const ToyMllm& model, const PruneSchedule& schedule,
                                          std::uint64_t seed);

}  // namespace lvprune
