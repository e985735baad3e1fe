#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "lvprune/numerics/autograd.hpp"

namespace lvprune {

// Builds a scalar loss on `tape` from parameter leaves bound in the order
// they were passed to finite_diff_check. Must be a pure function of the
// parameter values (fix any randomness inside it).
using LossBuilder = std::function<ad::Var(ad::Tape& tape, std::span<const ad::Var> params)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  // Location of the worst coordinate.
  std::size_t worst_tensor = 0;
  Eigen::Index worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares tape gradients with central differences (f(x+h) - f(x-h)) / 2h for
// every coordinate of every tensor. Relative error per coordinate is
// |analytic - numeric| / max(|analytic|, |numeric|, floor).
GradCheckReport finite_diff_check(const LossBuilder& loss, std::vector<Tensor> params, double h,
                                  double floor = 1e-6);

}  // namespace lvprune
