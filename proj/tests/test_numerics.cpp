#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "lvprune/numerics/gradcheck.hpp"
#include "lvprune/numerics/kernels.hpp"
#include "lvprune/numerics/rng.hpp"

namespace lvprune {
namespace {

Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  Tensor t(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) t(i, j++) = v;
    ++i;
  }
  return t;
}

Tensor random_tensor(Eigen::Index rows, Eigen::Index cols, SeededRng& rng) {
  return sample_normal(rows, cols, 1.0, rng);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor b = from_rows({{1, 2}, {3, 4}});
  EXPECT_EQ(matmul(Tensor::Identity(2, 2), b), b);
}

TEST(Matmul, SelectorRow) {
  const Tensor out = matmul(from_rows({{1, 0}}), from_rows({{5}, {7}}));
  ASSERT_EQ(out.rows(), 1);
  ASSERT_EQ(out.cols(), 1);
  EXPECT_EQ(out(0, 0), 5.0);
}

TEST(Matmul, MatchesTripleLoop) {
  SeededRng rng(11, 0);
  const Tensor a = random_tensor(3, 4, rng);
  const Tensor b = random_tensor(4, 2, rng);
  const Tensor out = matmul(a, b);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += a(i, k) * b(k, j);
      EXPECT_NEAR(out(i, j), acc, 1e-12);
    }
  }
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Tensor::Zero(2, 3), Tensor::Zero(2, 3)), DimensionError);
}

TEST(Matmul, FlopCounterAddsTwoMkn) {
  FlopCounter counter;
  matmul(Tensor::Zero(3, 4), Tensor::Zero(4, 5));
  EXPECT_EQ(counter.flops(), 2u * 3u * 4u * 5u);
}

TEST(RowSoftmax, UniformRow) {
  const Tensor out = row_softmax(from_rows({{0, 0, 0}}));
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(out(0, j), 1.0 / 3.0, 1e-15);
}

TEST(RowSoftmax, ClosedForm) {
  const Tensor out = row_softmax(from_rows({{0, std::log(3.0)}}));
  EXPECT_NEAR(out(0, 0), 0.25, 1e-15);
  EXPECT_NEAR(out(0, 1), 0.75, 1e-15);
}

TEST(RowSoftmax, LargeEntriesDoNotOverflow) {
  const Tensor out = row_softmax(from_rows({{1000, 1000}}));
  EXPECT_EQ(out(0, 0), 0.5);
  EXPECT_EQ(out(0, 1), 0.5);
}

TEST(MaskedSoftmax, UniformOverUnmasked) {
  const Tensor out = masked_row_softmax(from_rows({{0, 0, 0, 0}}), from_rows({{1, 0, 1, 1}}));
  EXPECT_NEAR(out(0, 0), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(out(0, 1), 0.0);
  EXPECT_NEAR(out(0, 2), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(out(0, 3), 1.0 / 3.0, 1e-15);
}

TEST(MaskedSoftmax, AllOnesEqualsPlainSoftmax) {
  SeededRng rng(3, 0);
  const Tensor a = random_tensor(6, 6, rng);
  const Tensor diff = masked_row_softmax(a, Tensor::Ones(6, 6)) - row_softmax(a);
  EXPECT_LE(diff.cwiseAbs().maxCoeff(), 1e-15);
}

TEST(MaskedSoftmax, CausalPremaskThenPruneMask) {
  const Tensor out = masked_row_softmax(from_rows({{-1e9, 0, 0}}), from_rows({{1, 1, 0}}));
  EXPECT_NEAR(out(0, 0), 0.0, 1e-300);
  EXPECT_NEAR(out(0, 1), 1.0, 1e-15);
  EXPECT_EQ(out(0, 2), 0.0);
}

TEST(MaskedSoftmax, ZeroMaskRowThrows) {
  EXPECT_THROW(masked_row_softmax(from_rows({{0, 0}}), from_rows({{0, 0}})), DegenerateRowError);
}

TEST(MaskedSoftmax, RowsSumToOneAndMaskedEntriesAreZero) {
  SeededRng rng(5, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor a = random_tensor(7, 7, rng);
    Tensor m(7, 7);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
    m.diagonal().setOnes();
    const Tensor out = masked_row_softmax(a, m);
    for (int i = 0; i < 7; ++i) {
      EXPECT_NEAR(out.row(i).sum(), 1.0, 1e-12);
      for (int j = 0; j < 7; ++j) {
        if (m(i, j) == 0.0) EXPECT_EQ(out(i, j), 0.0);
      }
    }
  }
}

TEST(LayerNorm, ConstantRowGivesZero) {
  const Tensor out = layer_norm(from_rows({{2, 2, 2}}), Tensor::Ones(1, 3), Tensor::Zero(1, 3), 1e-5);
  EXPECT_EQ(out.cwiseAbs().maxCoeff(), 0.0);
}

TEST(LayerNorm, NormalizedRowIsFixed) {
  const Tensor out = layer_norm(from_rows({{1, -1}}), Tensor::Ones(1, 2), Tensor::Zero(1, 2), 0.0);
  EXPECT_NEAR(out(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(out(0, 1), -1.0, 1e-15);
}

TEST(LayerNorm, MatchesDirectFormula) {
  SeededRng rng(8, 0);
  const Tensor x = random_tensor(4, 9, rng);
  const Tensor gain = random_tensor(1, 9, rng);
  const Tensor bias = random_tensor(1, 9, rng);
  const double eps = 1e-5;
  const Tensor out = layer_norm(x, gain, bias, eps);
  for (int i = 0; i < 4; ++i) {
    double mean = 0.0;
    for (int j = 0; j < 9; ++j) mean += x(i, j);
    mean /= 9.0;
    double var = 0.0;
    for (int j = 0; j < 9; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= 9.0;
    for (int j = 0; j < 9; ++j) {
      EXPECT_NEAR(out(i, j), (x(i, j) - mean) / std::sqrt(var + eps) * gain(0, j) + bias(0, j), 1e-10);
    }
  }
}

TEST(LayerNorm, WrongGainWidthThrows) {
  EXPECT_THROW(layer_norm(Tensor::Zero(2, 3), Tensor::Ones(1, 2), Tensor::Zero(1, 3), 1e-5), DimensionError);
}

TEST(Silu, Values) {
  const Tensor out = silu(from_rows({{0.0, 1.0, 50.0, -50.0}}));
  EXPECT_EQ(out(0, 0), 0.0);
  EXPECT_NEAR(out(0, 1), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(out(0, 1), 0.7311, 1e-4);
  EXPECT_NEAR(out(0, 2), 50.0, 1e-12);
  EXPECT_NEAR(out(0, 3), 0.0, 1e-12);
}

TEST(Silu, VeryNegativeInputIsFinite) {
  const Tensor out = silu(from_rows({{-1000.0}}));
  EXPECT_TRUE(all_finite(out));
  EXPECT_EQ(out(0, 0), 0.0);
}

TEST(Rng, SameSeedAndStreamReproduce) {
  SeededRng a(42, 3);
  SeededRng b(42, 3);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, StreamsDiffer) {
  SeededRng a(42, 0);
  SeededRng b(42, 1);
  int same = 0;
  for (int i = 0; i < 100; ++i) same += a.next_u64() == b.next_u64();
  EXPECT_EQ(same, 0);
}

TEST(Rng, DiscardRestoresPosition) {
  SeededRng a(9, 2);
  for (int i = 0; i < 37; ++i) a.uniform();
  SeededRng b(9, 2);
  b.discard(a.draws());
  EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, BelowStaysInRange) {
  SeededRng rng(1, 1);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(rng.below(7), 7u);
}

TEST(Gumbel, ReproducibleForFixedSeed) {
  SeededRng a(123, 0);
  SeededRng b(123, 0);
  EXPECT_EQ(sample_gumbel(5, 4, a), sample_gumbel(5, 4, b));
}

TEST(Gumbel, MeanIsEulerMascheroni) {
  SeededRng rng(2024, 0);
  const Tensor g = sample_gumbel(1000, 1000, rng);
  EXPECT_TRUE(all_finite(g));
  EXPECT_NEAR(g.mean(), std::numbers::egamma, 0.01);
}

TEST(Gumbel, ClampBoundsValues) {
  SeededRng rng(77, 0);
  const Tensor g = sample_gumbel(200, 200, rng);
  EXPECT_GE(g.minCoeff(), -std::log(-std::log(kGumbelClamp)));
  EXPECT_LE(g.maxCoeff(), -std::log(-std::log(1.0 - kGumbelClamp)));
}

TEST(GradCheck, QuadraticIsExact) {
  SeededRng rng(4, 0);
  const Tensor a = random_tensor(3, 3, rng);
  const LossBuilder loss = [&](ad::Tape& tape, std::span<const ad::Var> p) {
    return ad::sum(ad::square(ad::matmul(tape.constant(a), p[0])));
  };
  const GradCheckReport r = finite_diff_check(loss, {random_tensor(3, 2, rng)}, 1e-5);
  EXPECT_EQ(r.coordinates, 6u);
  EXPECT_LT(r.max_relative_error, 1e-8);
}

TEST(GradCheck, DetectsWrongGradient) {
  // A node whose recorded adjoint is deliberately doubled.
  const LossBuilder loss = [](ad::Tape& tape, std::span<const ad::Var> p) {
    ad::Var x = p[0];
    ad::Var y = tape.record(x.value(), {x}, [x](ad::Tape& t, const Tensor& g) { t.accumulate(x, 2.0 * g); });
    return ad::sum(y);
  };
  const GradCheckReport r = finite_diff_check(loss, {Tensor::Ones(2, 2)}, 1e-5);
  EXPECT_GT(r.max_relative_error, 0.4);
}

}  // namespace
}  // namespace lvprune
