#include <gtest/gtest.h>

#include <algorithm>

#include "lvprune/model/forward.hpp"
#include "lvprune/numerics/kernels.hpp"

namespace lvprune {
namespace {

ToyMllmConfig toy_config(PositionEncoding pe = PositionEncoding::kRotary) {
  ToyMllmConfig cfg;
  cfg.depth = 8;
  cfg.d_model = 32;
  cfg.heads = 4;
  cfg.ffn = 64;
  cfg.vocab = 16;
  cfg.max_positions = 32;
  cfg.vision_tokens = 16;
  cfg.vision_dim = 8;
  cfg.position_encoding = pe;
  return cfg;
}

ToyMllm make_model(PositionEncoding pe = PositionEncoding::kRotary, int modules = 3, double keep_bias = 0.0) {
  DecisionModuleConfig mc;
  mc.d_model = 32;
  mc.heads = 4;
  mc.initial_keep_bias = keep_bias;
  mc.init_std = 0.3;
  return ToyMllm::init(toy_config(pe), mc, modules, 21);
}

ModelInput make_input(const ToyMllmConfig& cfg, std::uint64_t seed, int text = 3, int text_before = 0) {
  SeededRng rng(seed, 1);
  ModelInput in;
  in.patches = sample_normal(cfg.vision_tokens, cfg.vision_dim, 1.0, rng);
  for (int t = 0; t < text; ++t) in.text_ids.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.vocab))));
  in.text_before = text_before;
  return in;
}

const PruneSchedule kSchedule{{1, 3, 5}, {0.5, 0.3, 0.1}};

TEST(EmbedInputs, LayoutVisionThenText) {
  ToyMllmConfig cfg = toy_config();
  cfg.vision_tokens = 2;
  const ToyMllm model = ToyMllm::init(cfg, DecisionModuleConfig{32, 2, 4}, 0, 1);
  ModelInput in;
  in.patches = Tensor::Ones(2, cfg.vision_dim);
  in.text_ids = {3, 5, 3};
  ad::Tape tape;
  const Embedded e = embed_inputs(bind(tape, model.backbone, false), cfg, in, tape);
  EXPECT_EQ(e.h.rows(), 5);
  EXPECT_EQ(e.h.cols(), cfg.d_model);
  EXPECT_EQ(e.layout.vision, (std::vector<int>{0, 1}));
  EXPECT_EQ(e.layout.text, (std::vector<int>{2, 3, 4}));
  EXPECT_EQ(e.positions, (std::vector<int>{0, 1, 2, 3, 4}));
  EXPECT_EQ(e.h.value().row(2), e.h.value().row(4));
  const Tensor connected = (in.patches * model.backbone.connector_w).rowwise() + model.backbone.connector_b.row(0);
  EXPECT_LE((e.h.value().topRows(2) - connected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(EmbedInputs, TextBeforeImage) {
  const ToyMllm model = make_model();
  ModelInput in = make_input(model.config, 2, 2, 1);
  ad::Tape tape;
  const Embedded e = embed_inputs(bind(tape, model.backbone, false), model.config, in, tape);
  EXPECT_EQ(e.layout.text, (std::vector<int>{0, 17}));
  EXPECT_EQ(e.layout.vision.front(), 1);
  EXPECT_EQ(e.layout.vision.back(), 16);
}

TEST(EmbedInputs, EmptyTextThrows) {
  const ToyMllm model = make_model();
  ModelInput in = make_input(model.config, 2, 0);
  ad::Tape tape;
  EXPECT_THROW(embed_inputs(bind(tape, model.backbone, false), model.config, in, tape), NoTextError);
}

TEST(DecoderLayer, AllOnesMaskMatchesUnmasked) {
  const ToyMllm model = make_model();
  const ModelInput in = make_input(model.config, 3);
  ad::Tape tape;
  const BackboneVars bb = bind(tape, model.backbone, false);
  const Embedded e = embed_inputs(bb, model.config, in, tape);
  const Tensor plain = decoder_layer_forward(bb.layers[0], e.h, e.positions, std::nullopt, model.config).value();
  ad::Var ones = tape.constant(Tensor::Ones(e.layout.total, e.layout.total));
  const Tensor masked = decoder_layer_forward(bb.layers[0], e.h, e.positions, ones, model.config).value();
  EXPECT_LE((plain - masked).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(DecoderLayer, PrunedTokenDoesNotInfluenceOthers) {
  const ToyMllm model = make_model();
  const ModelInput in = make_input(model.config, 4);
  ad::Tape tape;
  const BackboneVars bb = bind(tape, model.backbone, false);
  const Embedded e = embed_inputs(bb, model.config, in, tape);
  PruneDecision d = PruneDecision::all_kept(16);
  const int j = 5;
  d.values[j] = 0.0;
  ad::Var mask = tape.constant(build_attention_mask(d, e.layout));
  const Tensor base = decoder_layer_forward(bb.layers[2], e.h, e.positions, mask, model.config).value();
  Tensor h2 = e.h.value();
  h2.row(j).setConstant(37.0);
  const Tensor moved = decoder_layer_forward(bb.layers[2], tape.constant(h2), e.positions, mask, model.config).value();
  for (int i = 0; i < e.layout.total; ++i) {
    if (i == j) continue;
    EXPECT_EQ(base.row(i), moved.row(i)) << "row " << i;
  }
}

TEST(DecoderLayer, CausalRowsIgnoreLaterTokens) {
  const ToyMllm model = make_model();
  const ModelInput in = make_input(model.config, 5);
  ad::Tape tape;
  const BackboneVars bb = bind(tape, model.backbone, false);
  const Embedded e = embed_inputs(bb, model.config, in, tape);
  const Tensor base = decoder_layer_forward(bb.layers[0], e.h, e.positions, std::nullopt, model.config).value();
  Tensor h2 = e.h.value();
  h2.bottomRows(2).setConstant(-4.0);
  const Tensor moved = decoder_layer_forward(bb.layers[0], tape.constant(h2), e.positions, std::nullopt, model.config).value();
  const int n = e.layout.total;
  EXPECT_EQ(base.topRows(n - 2), moved.topRows(n - 2));
}

TEST(CausalMask, UsesOriginalPositions) {
  const std::vector<int> pos = {4, 1, 7};
  const Tensor m = causal_additive_mask(pos);
  EXPECT_EQ(m(0, 1), 0.0);
  EXPECT_EQ(m(1, 0), kCausalMaskValue);
  EXPECT_EQ(m(0, 2), kCausalMaskValue);
  EXPECT_EQ(m(2, 0), 0.0);
}

TEST(ForwardTrain, NoStagesEqualsPlain) {
  const ToyMllm model = make_model();
  const ModelInput in = make_input(model.config, 6);
  SeededRng rng(1, 0);
  const ForwardTrace t = forward_train(model, in, PruneSchedule{}, 1.0, rng);
  EXPECT_EQ(t.logits, forward_plain(model, in).logits);
  EXPECT_TRUE(t.decisions.empty());
}

TEST(ForwardTrain, ForcedAllOnesEqualsPlain) {
  const ToyMllm model = make_model();
  const ModelInput in = make_input(model.config, 7);
  const std::vector<PruneDecision> forced(3, PruneDecision::all_kept(16));
  SeededRng rng(1, 0);
  const ForwardTrace t = forward_train(model, in, kSchedule, 1.0, rng, DecisionMode::kStraightThrough, &forced);
  const Tensor plain = forward_plain(model, in).logits;
  EXPECT_EQ(t.logits.rows(), 19);
  EXPECT_LE((t.logits - plain).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ForwardTrain, KeepFractionsAreMeansOfMonotoneDecisions) {
  const ToyMllm model = make_model();
  const ModelInput in = make_input(model.config, 8);
  SeededRng rng(2, 0);
  const ForwardTrace t = forward_train(model, in, kSchedule, 1.0, rng);
  ASSERT_EQ(t.decisions.size(), 3u);
  for (std::size_t s = 0; s < 3; ++s) {
    EXPECT_NO_THROW(t.decisions[s].validate_binary());
    EXPECT_DOUBLE_EQ(t.keep_fractions[s], t.decisions[s].keep_fraction());
    EXPECT_GE(t.keep_fractions[s], 0.0);
    EXPECT_LE(t.keep_fractions[s], 1.0);
    if (s > 0) {
      for (std::size_t v = 0; v < 16; ++v) EXPECT_LE(t.decisions[s].values[v], t.decisions[s - 1].values[v]);
    }
  }
}

TEST(ForwardTrain, DeterministicGivenSeed) {
  const ToyMllm model = make_model();
  const ModelInput in = make_input(model.config, 9);
  SeededRng a(5, 0);
  SeededRng b(5, 0);
  const ForwardTrace ta = forward_train(model, in, kSchedule, 1.0, a);
  const ForwardTrace tb = forward_train(model, in, kSchedule, 1.0, b);
  EXPECT_EQ(ta.logits, tb.logits);
  EXPECT_EQ(ta.decisions, tb.decisions);
}

TEST(ForwardInfer, FullRatioEqualsPlain) {
  const ToyMllm model = make_model(PositionEncoding::kRotary, 1);
  const ModelInput in = make_input(model.config, 10);
  const ForwardTrace t = forward_infer(model, in, PruneSchedule{{2}, {1.0}});
  const Tensor plain = forward_plain(model, in).logits;
  ASSERT_EQ(t.logits.rows(), 3);
  EXPECT_LE((t.logits - plain.bottomRows(3)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(t.kept_indices[0].size(), 16u);
}

TEST(ForwardInfer, SurvivorCountsFollowFloorRule) {
  const ToyMllm model = make_model();
  const ModelInput in = make_input(model.config, 11);
  const ForwardTrace t = forward_infer(model, in, kSchedule, InferOptions{nullptr, nullptr, true});
  ASSERT_EQ(t.kept_indices.size(), 3u);
  EXPECT_EQ(t.kept_indices[0].size(), 8u);
  EXPECT_EQ(t.kept_indices[1].size(), 4u);
  EXPECT_EQ(t.kept_indices[2].size(), 1u);
  for (std::size_t s = 1; s < 3; ++s) {
    for (int v : t.kept_indices[s]) {
      EXPECT_TRUE(std::binary_search(t.kept_indices[s - 1].begin(), t.kept_indices[s - 1].end(), v));
    }
  }
  // Rows in force after layer l: pruning happens before layers 1, 3 and 5.
  const std::vector<int> expected = {19, 11, 11, 7, 7, 4, 4, 4};
  ASSERT_EQ(t.hidden.size(), 8u);
  for (std::size_t l = 0; l < 8; ++l) EXPECT_EQ(t.hidden[l].rows(), expected[l]) << "layer " << l;
  EXPECT_EQ(t.text_positions, (std::vector<int>{16, 17, 18}));
}

TEST(ForwardInfer, IncreasingRatiosRejected) {
  const ToyMllm model = make_model();
  const ModelInput in = make_input(model.config, 12);
  EXPECT_THROW(forward_infer(model, in, PruneSchedule{{1, 3, 5}, {0.3, 0.5, 0.1}}), ScheduleInfeasibleError);
}

TEST(ForwardInfer, RandomScoresAreSeeded) {
  const ToyMllm model = make_model();
  const ModelInput in = make_input(model.config, 13);
  SeededRng a(3, 3);
  SeededRng b(3, 3);
  const ForwardTrace ta = forward_infer(model, in, kSchedule, InferOptions{nullptr, &a, false});
  const ForwardTrace tb = forward_infer(model, in, kSchedule, InferOptions{nullptr, &b, false});
  EXPECT_EQ(ta.kept_indices, tb.kept_indices);
  EXPECT_EQ(ta.logits, tb.logits);
}

class Equivalence : public ::testing::TestWithParam<std::tuple<PositionEncoding, int>> {};

TEST_P(Equivalence, MaskedAndPrunedAgree) {
  const auto [pe, text_before] = GetParam();
  const ToyMllm model = make_model(pe);
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const ModelInput in = make_input(model.config, 100 + seed, 3, text_before);
    const EquivalenceReport r = verify_equivalence(model, in, kSchedule, seed);
    EXPECT_LT(r.max_abs(), 1e-9);
    EXPECT_EQ(r.per_layer.size(), 8u);
  }
}

INSTANTIATE_TEST_SUITE_P(Layouts, Equivalence,
                         ::testing::Combine(::testing::Values(PositionEncoding::kRotary, PositionEncoding::kLearned),
                                            ::testing::Values(0, 1, 3)));

TEST(Equivalence, AllKeptIsExact) {
  const ToyMllm model = make_model(PositionEncoding::kRotary, 1, 50.0);
  const ModelInput in = make_input(model.config, 14);
  const EquivalenceReport r = verify_equivalence(model, in, PruneSchedule{{2}, {0.5}}, 1);
  ASSERT_EQ(r.kept_indices[0].size(), 16u);
  EXPECT_LE(r.max_abs(), 1e-12);
}

TEST(ToyMllm, FingerprintTracksArchitecture) {
  const ToyMllm a = make_model();
  const ToyMllm b = make_model();
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  const ToyMllm c = make_model(PositionEncoding::kLearned);
  EXPECT_NE(a.fingerprint(), c.fingerprint());
  const ToyMllm d = make_model(PositionEncoding::kRotary, 2);
  EXPECT_NE(a.fingerprint(), d.fingerprint());
}

TEST(ToyMllmConfig, RejectsBadShapes) {
  ToyMllmConfig cfg = toy_config();
  cfg.heads = 5;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = toy_config();
  cfg.vision_tokens = 0;
  EXPECT_THROW(cfg.validate(), Error);
}

}  // namespace
}  // namespace lvprune
