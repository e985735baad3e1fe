#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lvprune/numerics/kernels.hpp"
#include "lvprune/pruning/decision_module.hpp"
#include "lvprune/pruning/layout.hpp"

namespace lvprune {
namespace {

DecisionModuleConfig small_config(int d, int heads, int blocks) {
  DecisionModuleConfig cfg;
  cfg.d_model = d;
  cfg.heads = heads;
  cfg.blocks = blocks;
  return cfg;
}

DecisionModuleParams random_params(const DecisionModuleConfig& cfg, std::uint64_t seed, double stddev = 0.5) {
  SeededRng rng(seed, 0);
  DecisionModuleParams p = init_decision_module(cfg, rng);
  DecisionModuleParams::visit(p, "", [&](const std::string&, Tensor& t) {
    t = sample_normal(t.rows(), t.cols(), stddev, rng);
  });
  return p;
}

// Independent evaluation of one block, head by head, with plain Eigen.
Tensor block_oracle(const Tensor& queries, const Tensor& text, const CrossAttentionBlockParams& b,
                    const DecisionModuleConfig& cfg) {
  const Tensor q = queries * b.wq;
  const Tensor k = text * b.wk;
  const Tensor v = text * b.wv;
  const int dh = cfg.head_dim();
  Tensor attn(q.rows(), q.cols());
  for (int h = 0; h < cfg.heads; ++h) {
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      std::vector<double> w(static_cast<std::size_t>(k.rows()));
      double z = 0.0;
      for (Eigen::Index j = 0; j < k.rows(); ++j) {
        double s = 0.0;
        for (int c = 0; c < dh; ++c) s += q(i, h * dh + c) * k(j, h * dh + c);
        w[static_cast<std::size_t>(j)] = std::exp(s / std::sqrt(static_cast<double>(dh)));
        z += w[static_cast<std::size_t>(j)];
      }
      for (int c = 0; c < dh; ++c) {
        double acc = 0.0;
        for (Eigen::Index j = 0; j < k.rows(); ++j) acc += w[static_cast<std::size_t>(j)] / z * v(j, h * dh + c);
        attn(i, h * dh + c) = acc;
      }
    }
  }
  const Tensor o = attn * b.w_proj + q;
  auto norm = [&](const Tensor& x, const Tensor& g, const Tensor& bias) {
    Tensor out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double mean = x.row(i).mean();
      const double var = (x.row(i).array() - mean).square().mean();
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        out(i, j) = (x(i, j) - mean) / std::sqrt(var + cfg.norm_eps) * g(0, j) + bias(0, j);
      }
    }
    return out;
  };
  Tensor f = norm(o, b.ffn_norm_in_gain, b.ffn_norm_in_bias);
  f = (f * b.ffn_w1).rowwise() + b.ffn_b1.row(0);
  f = f.unaryExpr([](double x) { return x / (1.0 + std::exp(-x)); });
  f = (f * b.ffn_w2).rowwise() + b.ffn_b2.row(0);
  return o + norm(f, b.ffn_norm_out_gain, b.ffn_norm_out_bias);
}

TEST(TokenLayout, VisionThenText) {
  const TokenLayout l = TokenLayout::vision_then_text(2, 3);
  EXPECT_EQ(l.total, 5);
  EXPECT_EQ(l.vision, (std::vector<int>{0, 1}));
  EXPECT_EQ(l.text, (std::vector<int>{2, 3, 4}));
}

TEST(TokenLayout, RejectsOverlapGapsAndDisorder) {
  EXPECT_THROW(TokenLayout::make(3, {0, 1}, {1, 2}), DimensionError);
  EXPECT_THROW(TokenLayout::make(4, {0, 1}, {3}), DimensionError);
  EXPECT_THROW(TokenLayout::make(3, {1, 0}, {2}), DimensionError);
  EXPECT_NO_THROW(TokenLayout::make(4, {1, 2}, {0, 3}));
}

TEST(PruneSchedule, Validation) {
  EXPECT_NO_THROW((PruneSchedule{{1, 3, 5}, {0.5, 0.3, 0.1}}.validate(8)));
  EXPECT_THROW((PruneSchedule{{3, 1}, {0.5, 0.3}}.validate(8)), ScheduleInfeasibleError);
  EXPECT_THROW((PruneSchedule{{1, 8}, {0.5, 0.3}}.validate(8)), ScheduleInfeasibleError);
  EXPECT_THROW((PruneSchedule{{1, 3}, {0.5, 0.5}}.validate(8)), ScheduleInfeasibleError);
  EXPECT_THROW((PruneSchedule{{1}, {0.0}}.validate(8)), ScheduleInfeasibleError);
  EXPECT_THROW((PruneSchedule{{1}, {1.2}}.validate(8)), ScheduleInfeasibleError);
  EXPECT_NO_THROW((PruneSchedule{{1, 3}, {1.0, 1.0}}.validate_inference(8)));
  EXPECT_THROW((PruneSchedule{{1, 3}, {0.3, 0.5}}.validate_inference(8)), ScheduleInfeasibleError);
}

TEST(KeepCount, FloorWithMinimumOne) {
  EXPECT_EQ(keep_count(0.45, 576), 259);
  EXPECT_EQ(keep_count(0.5, 16), 8);
  EXPECT_EQ(keep_count(0.3, 16), 4);
  EXPECT_EQ(keep_count(0.1, 16), 1);
  EXPECT_EQ(keep_count(0.01, 16), 1);
  EXPECT_EQ(keep_count(0.29, 100), 29);
  EXPECT_EQ(keep_count(1.0, 16), 16);
}

TEST(CombineDecisions, ElementwiseProduct) {
  const PruneDecision a{{1, 1, 0}};
  const PruneDecision b{{1, 0, 1}};
  EXPECT_EQ(combine_decisions(a, b), (PruneDecision{{1, 0, 0}}));
  EXPECT_EQ(combine_decisions(PruneDecision::all_kept(3), b), b);
  EXPECT_EQ(combine_decisions(a, a), a);
  EXPECT_THROW(combine_decisions(a, PruneDecision{{1, 0}}), DimensionError);
}

TEST(PruneDecision, BinaryValidationAndCounts) {
  EXPECT_THROW((PruneDecision{{1, 0.5}}.validate_binary()), Error);
  const PruneDecision d{{1, 0, 1, 1}};
  EXPECT_EQ(d.kept(), 3);
  EXPECT_DOUBLE_EQ(d.keep_fraction(), 0.75);
}

TEST(AttentionMask, HandEvaluated) {
  const TokenLayout l = TokenLayout::vision_then_text(2, 2);
  const Tensor m = build_attention_mask(PruneDecision{{1, 0}}, l);
  Tensor expected(4, 4);
  expected << 1, 0, 1, 1,
              1, 1, 1, 1,
              1, 0, 1, 1,
              1, 0, 1, 1;
  EXPECT_EQ(m, expected);
}

TEST(AttentionMask, AllKeptIsAllOnes) {
  const TokenLayout l = TokenLayout::make(6, {1, 2, 4}, {0, 3, 5});
  EXPECT_EQ(build_attention_mask(PruneDecision::all_kept(3), l), Tensor::Ones(6, 6));
}

TEST(AttentionMask, DiagonalAndTextColumnsAlwaysOne) {
  SeededRng rng(12, 0);
  const TokenLayout l = TokenLayout::make(7, {0, 2, 3, 5}, {1, 4, 6});
  for (int trial = 0; trial < 50; ++trial) {
    PruneDecision d{std::vector<double>(4)};
    for (double& v : d.values) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    const Tensor m = build_attention_mask(d, l);
    for (int i = 0; i < 7; ++i) EXPECT_EQ(m(i, i), 1.0);
    for (int t : l.text) EXPECT_EQ(m.col(t), Tensor::Ones(7, 1));
    for (std::size_t v = 0; v < l.vision.size(); ++v) {
      for (int i = 0; i < 7; ++i) {
        if (i != l.vision[v]) EXPECT_EQ(m(i, l.vision[v]), d.values[v]);
      }
    }
  }
}

TEST(AttentionMask, TapeVersionMatchesPlain) {
  const TokenLayout l = TokenLayout::make(5, {1, 2, 3}, {0, 4});
  const PruneDecision d{{0, 1, 0}};
  ad::Tape tape;
  const Tensor m = ad::build_attention_mask(tape.constant(row_vector(d.values)), l).value();
  EXPECT_EQ(m, build_attention_mask(d, l));
}

TEST(SelectTopK, SortAndTake) {
  const std::vector<double> p = {0.9, 0.1, 0.5, 0.7};
  EXPECT_EQ(select_top_k(p, 0.5, PruneDecision::all_kept(4)), (std::vector<int>{0, 3}));
}

TEST(SelectTopK, TiesGoToSmallerIndex) {
  const std::vector<double> p = {0.5, 0.5, 0.2};
  EXPECT_EQ(select_top_k(p, 0.34, PruneDecision::all_kept(3)), (std::vector<int>{0}));
}

TEST(SelectTopK, OnlySurvivorsAreEligible) {
  const std::vector<double> p = {0.9, 0.8, 0.1, 0.2};
  const std::vector<int> kept = select_top_k(p, 0.5, PruneDecision{{0, 1, 1, 1}});
  EXPECT_EQ(kept, (std::vector<int>{1, 3}));
}

TEST(SelectTopK, TooFewSurvivorsThrows) {
  const std::vector<double> p = {0.9, 0.8, 0.1, 0.2};
  EXPECT_THROW(select_top_k(p, 0.75, PruneDecision{{0, 1, 1, 0}}), ScheduleInfeasibleError);
}

TEST(SelectTopK, ScaleInvariant) {
  SeededRng rng(4, 0);
  std::vector<double> p(20);
  for (double& x : p) x = rng.uniform();
  std::vector<double> scaled = p;
  for (double& x : scaled) x *= 3.7;
  const PruneDecision all = PruneDecision::all_kept(20);
  EXPECT_EQ(select_top_k(p, 0.35, all), select_top_k(scaled, 0.35, all));
}

TEST(ReindexPositions, Examples) {
  const std::vector<int> pos = {0, 1, 2, 3, 4};
  const TokenLayout l = TokenLayout::vision_then_text(3, 2);
  EXPECT_EQ(reindex_positions(pos, std::vector<int>{0, 2}, l), (std::vector<int>{0, 2, 3, 4}));
  EXPECT_EQ(reindex_positions(pos, std::vector<int>{0, 1, 2}, l), pos);
  EXPECT_EQ(reindex_positions(pos, std::vector<int>{1}, l), (std::vector<int>{1, 3, 4}));
}

TEST(ReindexPositions, TextFirstLayout) {
  const std::vector<int> pos = {0, 1, 2, 3, 4};
  const TokenLayout l = TokenLayout::make(5, {1, 2, 3}, {0, 4});
  EXPECT_EQ(reindex_positions(pos, std::vector<int>{2, 0}, l), (std::vector<int>{1, 3, 0, 4}));
  EXPECT_THROW(reindex_positions(pos, std::vector<int>{3}, l), DimensionError);
}

TEST(DecisionModuleConfig, HeadsMustDivideWidth) {
  EXPECT_THROW(small_config(10, 4, 2).validate(), Error);
  EXPECT_NO_THROW(small_config(16, 8, 2).validate());
}

TEST(DecisionModule, ParameterShapes) {
  const DecisionModuleConfig cfg = small_config(16, 8, 2);
  SeededRng rng(1, 0);
  const DecisionModuleParams p = init_decision_module(cfg, rng);
  ASSERT_EQ(p.blocks.size(), 2u);
  EXPECT_EQ(p.blocks[0].wq.rows(), 16);
  EXPECT_EQ(p.blocks[0].wq.cols(), 16);
  EXPECT_EQ(p.blocks[0].ffn_w1.cols(), 32);
  EXPECT_EQ(p.blocks[0].ffn_w2.rows(), 32);
  EXPECT_EQ(p.w_out.rows(), 16);
  EXPECT_EQ(p.w_out.cols(), 2);
}

TEST(ProjectQkv, IdentityQueryReturnsVisionRows) {
  const DecisionModuleConfig cfg = small_config(4, 2, 1);
  DecisionModuleParams p = random_params(cfg, 2);
  p.blocks[0].wq = Tensor::Identity(4, 4);
  SeededRng rng(3, 0);
  const Tensor h = sample_normal(3, 4, 1.0, rng);
  const TokenLayout l = TokenLayout::vision_then_text(2, 1);
  ad::Tape tape;
  const QKV qkv = project_qkv(tape.constant(h), l, bind(tape, p, false), 0);
  EXPECT_EQ(qkv.q.value(), h.topRows(2));
  EXPECT_EQ(qkv.k.rows(), 1);
  EXPECT_EQ(qkv.v.rows(), 1);
  EXPECT_LE((qkv.k.value() - h.bottomRows(1) * p.blocks[0].wk).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((qkv.v.value() - h.bottomRows(1) * p.blocks[0].wv).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ProjectQkv, NoTextThrows) {
  const DecisionModuleConfig cfg = small_config(4, 2, 1);
  const DecisionModuleParams p = random_params(cfg, 2);
  ad::Tape tape;
  const TokenLayout l = TokenLayout::vision_then_text(3, 0);
  EXPECT_THROW(project_qkv(tape.constant(Tensor::Zero(3, 4)), l, bind(tape, p, false), 0), NoTextError);
}

TEST(CrossAttentionBlock, SingleTextTokenAttendsWithWeightOne) {
  const DecisionModuleConfig cfg = small_config(4, 2, 1);
  DecisionModuleParams p = random_params(cfg, 5);
  auto& b = p.blocks[0];
  b.w_proj = Tensor::Identity(4, 4);
  b.ffn_w1.setZero();
  b.ffn_b1.setZero();
  b.ffn_w2.setZero();
  b.ffn_b2.setZero();
  b.ffn_norm_out_bias.setZero();
  SeededRng rng(6, 0);
  const Tensor h = sample_normal(4, 4, 1.0, rng);
  const TokenLayout l = TokenLayout::vision_then_text(3, 1);
  ad::Tape tape;
  const Tensor out = cross_attention_block(tape.constant(h), l, bind(tape, p, false), 0, cfg).value();
  const Tensor q = h.topRows(3) * b.wq;
  const Tensor v = h.bottomRows(1) * b.wv;
  const Tensor expected = q.rowwise() + v.row(0);
  EXPECT_LE((out - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(CrossAttentionBlock, MatchesStepByStepOracle) {
  const DecisionModuleConfig cfg = small_config(4, 2, 1);
  const DecisionModuleParams p = random_params(cfg, 9);
  SeededRng rng(10, 0);
  const Tensor h = sample_normal(4, 4, 1.0, rng);
  const TokenLayout l = TokenLayout::vision_then_text(2, 2);
  ad::Tape tape;
  const Tensor out = cross_attention_block(tape.constant(h), l, bind(tape, p, false), 0, cfg).value();
  const Tensor expected = block_oracle(h.topRows(2), h.bottomRows(2), p.blocks[0], cfg);
  EXPECT_LE((out - expected).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(DecisionModule, ZeroHeadGivesEvenOdds) {
  const DecisionModuleConfig cfg = small_config(8, 2, 2);
  DecisionModuleParams p = random_params(cfg, 11);
  p.w_out.setZero();
  p.b_out.setZero();
  SeededRng rng(12, 0);
  const TokenLayout l = TokenLayout::vision_then_text(5, 3);
  const KeepScores ks = decision_module_forward(sample_normal(8, 8, 1.0, rng), l, p, cfg);
  EXPECT_EQ(ks.gamma.rows(), 5);
  EXPECT_EQ(ks.gamma.cols(), 2);
  for (double pk : ks.keep_probability()) EXPECT_EQ(pk, 0.5);
}

TEST(DecisionModule, MatchesComposedOracle) {
  const DecisionModuleConfig cfg = small_config(8, 2, 2);
  const DecisionModuleParams p = random_params(cfg, 13, 0.3);
  SeededRng rng(14, 0);
  const Tensor h = sample_normal(7, 8, 1.0, rng);
  const TokenLayout l = TokenLayout::make(7, {0, 2, 3, 5}, {1, 4, 6});
  Tensor vis(4, 8);
  Tensor txt(3, 8);
  for (int i = 0; i < 4; ++i) vis.row(i) = h.row(l.vision[static_cast<std::size_t>(i)]);
  for (int i = 0; i < 3; ++i) txt.row(i) = h.row(l.text[static_cast<std::size_t>(i)]);
  const Tensor x1 = block_oracle(vis, txt, p.blocks[0], cfg);
  const Tensor x2 = block_oracle(x1, txt, p.blocks[1], cfg);
  const Tensor gamma = (x2 * p.w_out).rowwise() + p.b_out.row(0);
  const KeepScores ks = decision_module_forward(h, l, p, cfg);
  EXPECT_LE((ks.gamma - gamma).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(KeepScores, ProbabilitiesAreComplementary) {
  Tensor gamma(3, 2);
  gamma << 2, -1, 0, 0, -5, 3;
  const std::vector<double> p = KeepScores{gamma}.keep_probability();
  const Tensor soft = row_softmax(gamma);
  for (int i = 0; i < 3; ++i) {
    EXPECT_GE(p[static_cast<std::size_t>(i)], 0.0);
    EXPECT_LE(p[static_cast<std::size_t>(i)], 1.0);
    EXPECT_NEAR(p[static_cast<std::size_t>(i)], soft(i, 0), 1e-15);
  }
}

TEST(GumbelDecision, EvalModeIsArgmax) {
  Tensor gamma(2, 2);
  gamma << 10, -10, -10, 10;
  SeededRng rng(0, 0);
  const PruneDecision d = gumbel_decision(KeepScores{gamma}, 1.0, rng, DecisionMode::kEval);
  EXPECT_EQ(d.values, (std::vector<double>{1.0, 0.0}));
  EXPECT_EQ(rng.draws(), 0u);
}

TEST(GumbelDecision, SymmetricScoresKeepHalf) {
  const KeepScores ks{Tensor::Zero(100000, 2)};
  SeededRng a(31, 0);
  SeededRng b(31, 0);
  const PruneDecision da = gumbel_decision(ks, 1.0, a, DecisionMode::kStraightThrough);
  const PruneDecision db = gumbel_decision(ks, 1.0, b, DecisionMode::kStraightThrough);
  EXPECT_EQ(da, db);
  EXPECT_NO_THROW(da.validate_binary());
  EXPECT_NEAR(da.keep_fraction(), 0.5, 0.01);
}

TEST(GumbelDecision, StraightThroughForwardsHardAndBackpropagatesSoft) {
  ad::Tape tape;
  Tensor g(3, 2);
  g << 0.3, -0.2, -1.0, 0.5, 2.0, 1.0;
  ad::Var gamma = tape.parameter(g);
  SeededRng rng(8, 0);
  ad::Var d = gumbel_decision(gamma, 0.7, rng, DecisionMode::kStraightThrough);
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_TRUE(d.value()(0, i) == 0.0 || d.value()(0, i) == 1.0);
  tape.backward(ad::sum(d));
  EXPECT_GT(tape.grad(gamma).cwiseAbs().maxCoeff(), 0.0);
}

TEST(GumbelDecision, NonPositiveTemperatureThrows) {
  SeededRng rng(0, 0);
  EXPECT_THROW(gumbel_decision(KeepScores{Tensor::Zero(2, 2)}, 0.0, rng, DecisionMode::kSoft), Error);
}

}  // namespace
}  // namespace lvprune
