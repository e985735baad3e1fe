#include <gtest/gtest.h>

#include <numeric>

#include "lvprune/cost/cost_model.hpp"
#include "lvprune/io/config.hpp"
#include "lvprune/model/forward.hpp"
#include "lvprune/numerics/kernels.hpp"

namespace lvprune {
namespace {

const CostConfig& llava() {
  static const CostConfig cfg = *load_config(LVPRUNE_SOURCE_DIR "/configs/llava15_7b.json").cost;
  return cfg;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

TEST(DecoderLayerFlops, SingleTokenFormula) {
  const TransformerSpec spec{32, 4096, 32, 11008, FfnKind::kGated, 32000};
  const double expected = 2.0 * (4.0 * 4096 * 4096 + 2.0 * 4096 + 3.0 * 4096 * 11008);
  EXPECT_DOUBLE_EQ(decoder_layer_flops(1, spec), expected);
  EXPECT_NEAR(expected, 4.046e8, 0.01 * 4.046e8);
}

TEST(DecoderLayerFlops, PlainFfnUsesTwoMatrices) {
  const TransformerSpec spec{2, 8, 2, 32, FfnKind::kPlain, 10};
  EXPECT_DOUBLE_EQ(decoder_layer_flops(3, spec), 2.0 * (4.0 * 3 * 64 + 2.0 * 9 * 8 + 2.0 * 3 * 8 * 32));
}

TEST(DecoderLayerFlops, QuadraticInTokens) {
  const TransformerSpec& spec = llava().arch.decoder;
  for (long n : {1L, 10L, 606L}) EXPECT_GT(decoder_layer_flops(2 * n, spec), 2.0 * decoder_layer_flops(n, spec));
  EXPECT_THROW(decoder_layer_flops(0, spec), Error);
}

TEST(DecisionModuleFlops, HandCount) {
  // q=1, t=1, d=2, one block: Q 4 + K/V 8 + attention 4 + output 4 + FFN 16 MACs,
  // then the head 4 MACs. 40 MACs in all.
  EXPECT_DOUBLE_EQ(decision_module_flops(1, 1, DecisionModuleSpec{1, 1, 2}), 80.0);
}

TEST(DecisionModuleFlops, LinearInQueries) {
  const DecisionModuleSpec spec{2, 8, 4096};
  const double f0 = decision_module_flops(100, 30, spec);
  const double f1 = decision_module_flops(200, 30, spec);
  const double f2 = decision_module_flops(300, 30, spec);
  EXPECT_NEAR(f2 - f1, f1 - f0, 1e-6 * f0);
  EXPECT_THROW(decision_module_flops(0, 30, spec), Error);
}

TEST(DecisionModuleFlops, SurvivorQueriesAgainstFormula) {
  const DecisionModuleSpec spec{2, 8, 4096};
  const double d = 4096.0;
  double expected = 0.0;
  for (double q : {576.0, 288.0, 172.0}) {
    const double block = 6.0 * q * d * d + 2.0 * 30 * d * d + 2.0 * q * 30 * d;
    expected += 2.0 * (2.0 * block + 2.0 * q * d);
  }
  const double got = decision_module_flops(576, 30, spec) + decision_module_flops(288, 30, spec) +
                     decision_module_flops(172, 30, spec);
  EXPECT_NEAR(got, expected, 1e-9 * expected);
  EXPECT_NEAR(got / 1e12, 0.43, 0.01);
}

TEST(Pipeline, TotalsAreSumsOfStages) {
  const CostReport r = pipeline_flops(llava().arch, llava().input, PruneSchedule{{1, 8, 16}, {0.5, 0.3, 0.1}});
  EXPECT_EQ(r.decoder, sum(r.decoder_layers));
  EXPECT_EQ(r.modules, sum(r.decision_modules));
  EXPECT_EQ(r.total, r.vision_encoder + r.connector + r.decoder + r.modules);
  EXPECT_DOUBLE_EQ(r.reduction, (r.baseline - r.total) / r.baseline);
  EXPECT_EQ(r.decoder_layers.size(), 32u);
}

TEST(Pipeline, SegmentTokenCounts) {
  const CostReport r = pipeline_flops(llava().arch, llava().input, PruneSchedule{{1, 8, 16}, {0.5, 0.3, 0.1}});
  for (int l = 0; l < 32; ++l) {
    const int expected = l < 1 ? 606 : l < 8 ? 288 + 30 : l < 16 ? 172 + 30 : 57 + 30;
    EXPECT_EQ(r.layer_tokens[static_cast<std::size_t>(l)], expected) << "layer " << l;
  }
  EXPECT_EQ(r.module_queries, (std::vector<int>{576, 288, 172}));
}

TEST(Pipeline, BaselineHasNoModules) {
  const CostReport r = pipeline_flops(llava().arch, llava().input, std::nullopt);
  EXPECT_TRUE(r.decision_modules.empty());
  EXPECT_EQ(r.total, r.baseline);
  EXPECT_EQ(r.reduction, 0.0);
}

TEST(Pipeline, AllOnesRatiosAddExactlyTheOverhead) {
  const std::vector<int> layers = {1, 8, 16};
  const CostReport full = pipeline_flops(llava().arch, llava().input, PruneSchedule{layers, {0.5, 0.3, 0.1}},
                                         std::vector<double>{1.0, 1.0, 1.0});
  EXPECT_EQ(full.total, full.baseline + full.modules);
  EXPECT_EQ(decision_module_overhead(llava().arch, llava().input, layers), full.total - full.baseline);
}

TEST(Pipeline, RaisingAnyRatioNeverLowersCost) {
  const PruneSchedule sch{{1, 8, 16}, {0.5, 0.3, 0.1}};
  const double base = pipeline_flops(llava().arch, llava().input, sch).total;
  for (std::size_t s = 0; s < 3; ++s) {
    std::vector<double> r = sch.ratios;
    r[s] += 0.05;
    if (s > 0) r[s] = std::min(r[s], r[s - 1]);
    EXPECT_GE(pipeline_flops(llava().arch, llava().input, sch, r).total, base);
  }
}

TEST(Pipeline, BadRatiosRejected) {
  const PruneSchedule sch{{1, 8, 16}, {0.5, 0.3, 0.1}};
  EXPECT_THROW(pipeline_flops(llava().arch, llava().input, sch, std::vector<double>{0.5, 0.3}), Error);
  EXPECT_THROW(pipeline_flops(llava().arch, llava().input, sch, std::vector<double>{0.3, 0.5, 0.1}), Error);
  EXPECT_THROW(pipeline_flops(llava().arch, llava().input, PruneSchedule{{1, 40}, {0.5, 0.3}}), Error);
}

TEST(SteppedRatios, SubtractsTwoTenths) {
  EXPECT_EQ(stepped_ratios(0.5, 3), (std::vector<double>{0.5, 0.3, 0.1}));
  EXPECT_EQ(stepped_ratios(0.45, 3), (std::vector<double>{0.45, 0.25, 0.05}));
}

TEST(Sweep, FourPointsAndMonotone) {
  const Sweep s = reduction_sweep(llava().arch, llava().input, {1, 8, 16}, 0.45, 0.6, 0.05);
  ASSERT_EQ(s.points.size(), 4u);
  EXPECT_TRUE(s.skipped.empty());
  EXPECT_NEAR(s.points.front().rho, 0.45, 1e-12);
  EXPECT_NEAR(s.points.back().rho, 0.6, 1e-12);
  for (std::size_t i = 1; i < s.points.size(); ++i) {
    EXPECT_GT(s.points[i].report.total, s.points[i - 1].report.total);
  }
}

TEST(Sweep, SkipsInfeasiblePointsAndTopsOutAtOne) {
  const Sweep s = reduction_sweep(llava().arch, llava().input, {1, 8, 16}, 0.3, 1.0, 0.1);
  EXPECT_EQ(s.skipped.size(), 2u);
  ASSERT_FALSE(s.points.empty());
  EXPECT_NEAR(s.points.back().rho, 1.0, 1e-12);
  for (std::size_t i = 0; i + 1 < s.points.size(); ++i) {
    EXPECT_LT(s.points[i].report.total, s.points.back().report.total);
  }
  EXPECT_THROW(reduction_sweep(llava().arch, llava().input, {1, 8, 16}, 0.3, 1.0, 0.0), Error);
}

TEST(Specs, Validation) {
  ArchitectureSpec arch = llava().arch;
  arch.module.d = 1024;
  EXPECT_THROW(arch.validate(), Error);
  arch = llava().arch;
  arch.decoder.heads = 7;
  EXPECT_THROW(arch.validate(), Error);
  EXPECT_THROW((InputSpec{0, 30}.validate()), Error);
}

TEST(InstructionCount, AnalyticLayerMatchesKernelCount) {
  ToyMllmConfig cfg;
  const ToyMllm model = ToyMllm::init(cfg, DecisionModuleConfig{}, 1, 5);
  const ArchitectureSpec arch = toy_architecture(cfg, model.module_config);
  SeededRng rng(1, 0);
  ModelInput in;
  in.patches = sample_normal(cfg.vision_tokens, cfg.vision_dim, 1.0, rng);
  in.text_ids = {1, 2};
  ad::Tape tape;
  const BackboneVars bb = bind(tape, model.backbone, false);
  const Embedded e = embed_inputs(bb, cfg, in, tape);
  const long n = e.layout.total;
  std::uint64_t counted = 0;
  {
    FlopCounter counter;
    decoder_layer_forward(bb.layers[0], e.h, e.positions, std::nullopt, cfg);
    counted = counter.flops();
  }
  const double analytic = decoder_layer_flops(n, arch.decoder);
  EXPECT_NEAR(static_cast<double>(counted), analytic, 0.02 * analytic);

  const DecisionModuleVars mod = bind(tape, model.modules[0], false);
  {
    FlopCounter counter;
    decision_module_forward(e.h, e.layout, mod, model.module_config);
    counted = counter.flops();
  }
  const double module_analytic = decision_module_flops(cfg.vision_tokens, 2, arch.module);
  EXPECT_NEAR(static_cast<double>(counted), module_analytic, 0.02 * module_analytic);
}

TEST(ToyArchitecture, NoVisionEncoder) {
  const ArchitectureSpec arch = toy_architecture(ToyMllmConfig{}, DecisionModuleConfig{});
  EXPECT_EQ(arch.vision.layers, 0);
  const CostReport r = pipeline_flops(arch, InputSpec{16, 2}, std::nullopt);
  EXPECT_EQ(r.vision_encoder, 0.0);
  EXPECT_DOUBLE_EQ(r.connector, 2.0 * 16 * 16 * 64);
}

}  // namespace
}  // namespace lvprune
