#include "lvprune/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace lvprune {

namespace {

double evaluate(const LossBuilder& loss, const std::vector<Tensor>& params) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(tape.constant(p));
  return loss(tape, leaves).scalar();
}

}  // namespace

GradCheckReport finite_diff_check(const LossBuilder& loss, std::vector<Tensor> params, double h,
                                  double floor) {
  if (!(h > 0.0)) throw Error("finite_diff_check: step must be positive");

  std::vector<Tensor> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const Tensor& p : params) leaves.push_back(tape.parameter(p));
    ad::Var root = loss(tape, leaves);
    tape.backward(root);
    for (const ad::Var& v : leaves) analytic.push_back(tape.grad(v));
  }

  GradCheckReport report;
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (Eigen::Index i = 0; i < params[t].size(); ++i) {
      double& x = params[t].data()[i];
      const double saved = x;
      x = saved + h;
      const double up = evaluate(loss, params);
      x = saved - h;
      const double down = evaluate(loss, params);
      x = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[t].data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.coordinates;
      if (rel > report.max_relative_error || !std::isfinite(rel)) {
        report.max_relative_error = std::isfinite(rel) ? rel : INFINITY;
        report.worst_tensor = t;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace lvprune
