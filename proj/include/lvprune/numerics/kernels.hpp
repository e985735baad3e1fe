#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "lvprune/numerics/tensor.hpp"

namespace lvprune {

// Counts floating-point work performed by matmul() on the current thread
// while a FlopCounter is alive. A matmul of (m x k) by (k x n) adds 2*m*k*n.
class FlopCounter {
 public:
  FlopCounter() : previous_(active_) { active_ = this; }
  ~FlopCounter() { active_ = previous_; }
  FlopCounter(const FlopCounter&) = delete;
  FlopCounter& operator=(const FlopCounter&) = delete;

  std::uint64_t flops() const noexcept { return flops_; }

  static void record(std::uint64_t flops) noexcept {
    for (FlopCounter* c = active_; c != nullptr; c = c->previous_) c->flops_ += flops;
  }

 private:
  std::uint64_t flops_ = 0;
  FlopCounter* previous_;
  static inline thread_local FlopCounter* active_ = nullptr;
};

template <typename A, typename B>
Matrix<typename A::Scalar> matmul(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_string(a) + " x " +
                         shape_string(b));
  }
  FlopCounter::record(2ull * static_cast<std::uint64_t>(a.rows()) *
                      static_cast<std::uint64_t>(a.cols()) * static_cast<std::uint64_t>(b.cols()));
  Matrix<typename A::Scalar> out = a * b;
  return out;
}

template <typename Derived>
Matrix<typename Derived::Scalar> row_softmax(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> out(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const Scalar mx = a.row(i).maxCoeff();
    out.row(i) = (a.row(i).array() - mx).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

// Softmax restricted to entries with nonzero mask weight:
//   out(i,j) = exp(a(i,j)) m(i,j) / sum_k exp(a(i,k)) m(i,k).
// The row maximum is taken over unmasked entries so an all-ones mask
// reproduces row_softmax exactly. Masks may be fractional.
template <typename A, typename M>
Matrix<typename A::Scalar> masked_row_softmax(const Eigen::MatrixBase<A>& a,
                                              const Eigen::MatrixBase<M>& m) {
  using Scalar = typename A::Scalar;
  require_same_shape(a, m, "masked_row_softmax");
  Matrix<Scalar> out(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (m(i, j) != Scalar(0) && a(i, j) > mx) mx = a(i, j);
    }
    if (!std::isfinite(static_cast<double>(mx))) {
      throw DegenerateRowError("masked_row_softmax: row " + std::to_string(i) +
                               " has no unmasked entry");
    }
    Scalar z = 0;
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out(i, j) = m(i, j) == Scalar(0) ? Scalar(0) : std::exp(a(i, j) - mx) * m(i, j);
      z += out(i, j);
    }
    if (!(z > Scalar(0))) {
      throw DegenerateRowError("masked_row_softmax: row " + std::to_string(i) +
                               " has zero normalizer");
    }
    out.row(i) /= z;
  }
  return out;
}

template <typename X, typename G, typename B>
Matrix<typename X::Scalar> layer_norm(const Eigen::MatrixBase<X>& x, const Eigen::MatrixBase<G>& gain,
                                      const Eigen::MatrixBase<B>& bias, double eps) {
  using Scalar = typename X::Scalar;
  if (gain.size() != x.cols() || bias.size() != x.cols()) {
    throw DimensionError("layer_norm: gain/bias width must equal " + std::to_string(x.cols()));
  }
  Matrix<Scalar> out(x.rows(), x.cols());
  const Scalar d = static_cast<Scalar>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar mean = x.row(i).sum() / d;
    const auto centered = (x.row(i).array() - mean).eval();
    const Scalar var = centered.square().sum() / d;
    const Scalar inv = Scalar(1) / std::sqrt(var + static_cast<Scalar>(eps));
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      out(i, j) = centered(j) * inv * gain(j) + bias(j);
    }
  }
  return out;
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  // Split on sign so neither branch evaluates exp of a large positive number.
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

// Elementwise logistic function, vectorized. exp(-x) overflowing to inf for
// very negative x yields 0, never NaN.
template <typename Derived>
Matrix<typename Derived::Scalar> logistic(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return (Scalar(1) / (Scalar(1) + (-x.array()).exp())).matrix();
}

template <typename Derived>
Matrix<typename Derived::Scalar> silu(const Eigen::MatrixBase<Derived>& x) {
  return x.cwiseProduct(logistic(x));
}

}  // namespace lvprune
