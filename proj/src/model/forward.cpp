#include "lvprune/model/forward.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace lvprune {

Embedded embed_inputs(const BackboneVars& backbone, const ToyMllmConfig& cfg, const ModelInput& input,
                      ad::Tape& tape) {
  if (input.text_ids.empty()) throw NoTextError();
  const int v = static_cast<int>(input.patches.rows());
  if (v < 1) throw DimensionError("embed_inputs: at least one vision token required");
  if (input.patches.cols() != cfg.vision_dim) {
    throw DimensionError("embed_inputs: patches have width " + std::to_string(input.patches.cols()) +
                         ", expected " + std::to_string(cfg.vision_dim));
  }
  for (int id : input.text_ids) {
    if (id < 0 || id >= cfg.vocab) throw DimensionError("embed_inputs: text id out of vocabulary");
  }
  const int n = v + static_cast<int>(input.text_ids.size());
  if (n > cfg.max_positions) throw DimensionError("embed_inputs: sequence exceeds max_positions");

  const int before = input.text_before;
  const int text_count = static_cast<int>(input.text_ids.size());
  if (before < 0 || before > text_count) throw DimensionError("embed_inputs: text_before out of range");

  ad::Var vision = ad::add_row(ad::matmul(tape.constant(input.patches), backbone.connector_w),
                               backbone.connector_b);
  Embedded out;
  std::vector<int> vision_rows(static_cast<std::size_t>(v));
  std::iota(vision_rows.begin(), vision_rows.end(), before);
  std::vector<int> text_rows;
  for (int t = 0; t < text_count; ++t) text_rows.push_back(t < before ? t : t + v);
  std::vector<ad::Var> parts;
  const std::span<const int> ids(input.text_ids);
  if (before > 0) parts.push_back(ad::gather_rows(backbone.token_embedding, ids.first(static_cast<std::size_t>(before))));
  parts.push_back(vision);
  if (before < text_count) {
    parts.push_back(ad::gather_rows(backbone.token_embedding, ids.subspan(static_cast<std::size_t>(before))));
  }
  out.h = ad::concat_rows(parts);
  out.layout = TokenLayout::make(n, std::move(vision_rows), std::move(text_rows));
  out.positions.resize(static_cast<std::size_t>(n));
  std::iota(out.positions.begin(), out.positions.end(), 0);
  if (cfg.position_encoding == PositionEncoding::kLearned) {
    out.h = ad::add(out.h, ad::gather_rows(backbone.position_embedding, out.positions));
  }
  return out;
}

Tensor causal_additive_mask(std::span<const int> positions) {
  const auto n = static_cast<Eigen::Index>(positions.size());
  Tensor m = Tensor::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (positions[static_cast<std::size_t>(j)] > positions[static_cast<std::size_t>(i)]) {
        m(i, j) = kCausalMaskValue;
      }
    }
  }
  return m;
}

ad::Var decoder_layer_forward(const DecoderLayerVars& layer, ad::Var h, std::span<const int> positions,
                              std::optional<ad::Var> prune_mask, const ToyMllmConfig& cfg) {
  const int d = cfg.d_model;
  const Eigen::Index head_dim = cfg.head_dim();
  if (h.cols() != d || static_cast<Eigen::Index>(positions.size()) != h.rows()) {
    throw DimensionError("decoder_layer_forward: hidden/positions shape mismatch");
  }
  const Tensor causal = causal_additive_mask(positions);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  ad::Var x = ad::layer_norm(h, layer.norm1_gain, layer.norm1_bias, cfg.norm_eps);
  ad::Var qkv = ad::matmul(x, layer.w_qkv);
  ad::Var q = ad::slice_cols(qkv, 0, d);
  ad::Var k = ad::slice_cols(qkv, d, d);
  ad::Var v = ad::slice_cols(qkv, 2 * d, d);
  if (cfg.position_encoding == PositionEncoding::kRotary) {
    q = ad::rotary(q, positions, head_dim, cfg.rotary_base);
    k = ad::rotary(k, positions, head_dim, cfg.rotary_base);
  }
  std::vector<ad::Var> heads;
  heads.reserve(static_cast<std::size_t>(cfg.heads));
  for (int hd = 0; hd < cfg.heads; ++hd) {
    const Eigen::Index at = hd * head_dim;
    ad::Var scores = ad::scale(
        ad::matmul(ad::slice_cols(q, at, head_dim), ad::transpose(ad::slice_cols(k, at, head_dim))),
        inv_sqrt);
    scores = ad::add_constant(scores, causal);
    ad::Var attn = prune_mask ? ad::masked_row_softmax(scores, *prune_mask) : ad::row_softmax(scores);
    heads.push_back(ad::matmul(attn, ad::slice_cols(v, at, head_dim)));
  }
  ad::Var attn_out = cfg.heads == 1 ? heads.front() : ad::concat_cols(heads);
  h = ad::add(h, ad::matmul(attn_out, layer.w_o));

  ad::Var y = ad::layer_norm(h, layer.norm2_gain, layer.norm2_bias, cfg.norm_eps);
  y = ad::silu(ad::add_row(ad::matmul(y, layer.w1), layer.b1));
  y = ad::add_row(ad::matmul(y, layer.w2), layer.b2);
  return ad::add(h, y);
}

ad::Var output_logits(const BackboneVars& backbone, ad::Var h, const ToyMllmConfig& cfg) {
  ad::Var x = ad::layer_norm(h, backbone.final_norm_gain, backbone.final_norm_bias, cfg.norm_eps);
  return ad::add_row(ad::matmul(x, backbone.head_w), backbone.head_b);
}

namespace {

int stage_at(const PruneSchedule& schedule, int layer) {
  for (std::size_t s = 0; s < schedule.layers.size(); ++s) {
    if (schedule.layers[s] == layer) return static_cast<int>(s);
  }
  return -1;
}

}  // namespace

MaskedForward forward_masked(ad::Tape& tape, const BackboneVars& backbone,
                             std::span<const DecisionModuleVars> modules, const ToyMllmConfig& cfg,
                             const DecisionModuleConfig& module_cfg, const ModelInput& input,
                             const PruneSchedule& schedule, const MaskedForwardOptions& options,
                             SeededRng& rng) {
  schedule.validate(cfg.depth);
  if (modules.size() < schedule.stages() && options.forced_decisions == nullptr) {
    throw DimensionError("forward_masked: schedule has more stages than decision modules");
  }
  if (options.forced_decisions != nullptr && options.forced_decisions->size() < schedule.stages()) {
    throw DimensionError("forward_masked: too few forced decisions for the schedule");
  }
  Embedded emb = embed_inputs(backbone, cfg, input, tape);
  MaskedForward out;
  out.layout = emb.layout;
  out.positions = emb.positions;

  ad::Var h = emb.h;
  std::optional<ad::Var> mask;
  std::optional<ad::Var> cumulative;
  for (int layer = 0; layer < cfg.depth; ++layer) {
    const int s = stage_at(schedule, layer);
    if (s >= 0) {
      ad::Var decision;
      if (options.forced_decisions != nullptr) {
        const PruneDecision& forced = (*options.forced_decisions)[static_cast<std::size_t>(s)];
        if (static_cast<int>(forced.values.size()) != emb.layout.vision_count()) {
          throw DimensionError("forward_masked: forced decision length mismatch");
        }
        decision = tape.constant(row_vector(forced.values));
      } else {
        ad::Var gamma = decision_module_forward(h, emb.layout, modules[static_cast<std::size_t>(s)], module_cfg);
        out.gammas.push_back(gamma);
        decision = gumbel_decision(gamma, options.tau, rng, options.mode);
      }
      cumulative = cumulative ? ad::mul(*cumulative, decision) : decision;
      out.decisions.push_back(*cumulative);
      mask = ad::build_attention_mask(*cumulative, emb.layout);
    }
    h = decoder_layer_forward(backbone.layers[static_cast<std::size_t>(layer)], h, emb.positions, mask, cfg);
    if (options.keep_hidden) out.hidden.push_back(h);
  }
  out.logits = output_logits(backbone, h, cfg);
  return out;
}

ForwardTrace forward_train(const ToyMllm& model, const ModelInput& input, const PruneSchedule& schedule,
                           double tau, SeededRng& rng, DecisionMode mode,
                           const std::vector<PruneDecision>* forced_decisions, bool keep_hidden) {
  ad::Tape tape;
  BackboneVars backbone = bind(tape, model.backbone, false);
  std::vector<DecisionModuleVars> modules;
  for (const auto& m : model.modules) modules.push_back(bind(tape, m, false));
  MaskedForwardOptions options;
  options.tau = tau;
  options.mode = mode;
  options.forced_decisions = forced_decisions;
  options.keep_hidden = keep_hidden;
  MaskedForward fwd = forward_masked(tape, backbone, modules, model.config, model.module_config, input,
                                     schedule, options, rng);
  ForwardTrace trace;
  trace.logits = fwd.logits.value();
  for (const ad::Var& g : fwd.gammas) trace.keep_scores.push_back(KeepScores{g.value()});
  for (const ad::Var& d : fwd.decisions) {
    PruneDecision pd{to_vector(d.value())};
    trace.keep_fractions.push_back(pd.keep_fraction());
    trace.decisions.push_back(std::move(pd));
  }
  for (const ad::Var& h : fwd.hidden) {
    trace.hidden.push_back(h.value());
    trace.hidden_positions.push_back(fwd.positions);
  }
  for (int t : fwd.layout.text) trace.text_positions.push_back(fwd.positions[static_cast<std::size_t>(t)]);
  return trace;
}

ForwardTrace forward_infer(const ToyMllm& model, const ModelInput& input, const PruneSchedule& schedule,
                           const InferOptions& options) {
  const ToyMllmConfig& cfg = model.config;
  schedule.validate_inference(cfg.depth);
  if (options.forced_keep == nullptr && options.random_scores == nullptr &&
      model.modules.size() < schedule.stages()) {
    throw DimensionError("forward_infer: schedule has more stages than decision modules");
  }
  if (options.forced_keep != nullptr && options.forced_keep->size() < schedule.stages()) {
    throw DimensionError("forward_infer: too few forced keep-sets for the schedule");
  }
  ad::Tape tape;
  BackboneVars backbone = bind(tape, model.backbone, false);
  Embedded emb = embed_inputs(backbone, cfg, input, tape);
  const int vision_total = emb.layout.vision_count();
  const int text_count = emb.layout.text_count();

  ForwardTrace trace;
  ad::Var h = emb.h;
  TokenLayout layout = emb.layout;
  std::vector<int> positions = emb.positions;
  // Original vision index of each current vision row.
  std::vector<int> current_vision(static_cast<std::size_t>(vision_total));
  std::iota(current_vision.begin(), current_vision.end(), 0);
  PruneDecision surviving = PruneDecision::all_kept(vision_total);

  for (int layer = 0; layer < cfg.depth; ++layer) {
    const int s = stage_at(schedule, layer);
    if (s >= 0) {
      std::vector<int> kept;
      if (options.forced_keep != nullptr) {
        kept = (*options.forced_keep)[static_cast<std::size_t>(s)];
        for (int v : kept) {
          if (v < 0 || v >= vision_total || surviving.values[static_cast<std::size_t>(v)] == 0.0) {
            throw ScheduleInfeasibleError("forward_infer: forced keep-set contains a pruned token");
          }
        }
      } else {
        std::vector<double> score(static_cast<std::size_t>(vision_total), 0.0);
        if (options.random_scores != nullptr) {
          for (int v : current_vision) score[static_cast<std::size_t>(v)] = options.random_scores->uniform();
        } else {
          DecisionModuleVars mod = bind(tape, model.modules[static_cast<std::size_t>(s)], false);
          ad::Var gamma = decision_module_forward(h, layout, mod, model.module_config);
          KeepScores ks{gamma.value()};
          const std::vector<double> p = ks.keep_probability();
          for (std::size_t r = 0; r < current_vision.size(); ++r) score[static_cast<std::size_t>(current_vision[r])] = p[r];
          trace.keep_scores.push_back(std::move(ks));
        }
        kept = select_top_k(score, schedule.ratios[static_cast<std::size_t>(s)], surviving);
      }
      std::sort(kept.begin(), kept.end());

      // Map original vision indices to current vision slots, then gather.
      std::map<int, int> slot_of;
      for (std::size_t r = 0; r < current_vision.size(); ++r) slot_of[current_vision[r]] = static_cast<int>(r);
      std::vector<int> kept_slots;
      std::vector<int> rows;
      for (int v : kept) {
        kept_slots.push_back(slot_of.at(v));
        rows.push_back(layout.vision[static_cast<std::size_t>(kept_slots.back())]);
      }
      for (int t : layout.text) rows.push_back(t);
      positions = reindex_positions(positions, kept_slots, layout);
      h = ad::gather_rows(h, rows);
      layout = TokenLayout::vision_then_text(static_cast<int>(kept.size()), text_count);
      current_vision = kept;

      surviving = PruneDecision{std::vector<double>(static_cast<std::size_t>(vision_total), 0.0)};
      for (int v : kept) surviving.values[static_cast<std::size_t>(v)] = 1.0;
      trace.decisions.push_back(surviving);
      trace.keep_fractions.push_back(surviving.keep_fraction());
      trace.kept_indices.push_back(kept);
    }
    h = decoder_layer_forward(backbone.layers[static_cast<std::size_t>(layer)], h, positions, std::nullopt, cfg);
    if (options.keep_hidden) {
      trace.hidden.push_back(h.value());
      trace.hidden_positions.push_back(positions);
    }
  }
  ad::Var text_rows = ad::gather_rows(h, layout.text);
  trace.logits = output_logits(backbone, text_rows, cfg).value();
  for (int t : layout.text) trace.text_positions.push_back(positions[static_cast<std::size_t>(t)]);
  return trace;
}

ForwardTrace forward_plain(const ToyMllm& model, const ModelInput& input, bool keep_hidden) {
  SeededRng unused(0, 0);
  return forward_train(model, input, PruneSchedule{}, 1.0, unused, DecisionMode::kEval, nullptr, keep_hidden);
}

EquivalenceReport verify_equivalence(const ToyMllm& model, const ModelInput& input,
                                     const PruneSchedule& schedule, std::uint64_t seed, double tau) {
  SeededRng rng(seed, 7);
  const ForwardTrace masked = forward_train(model, input, schedule, tau, rng,
                                            DecisionMode::kStraightThrough, nullptr, true);
  std::vector<std::vector<int>> keep_sets;
  for (const PruneDecision& d : masked.decisions) {
    std::vector<int> kept;
    for (std::size_t v = 0; v < d.values.size(); ++v) {
      if (d.values[v] == 1.0) kept.push_back(static_cast<int>(v));
    }
    keep_sets.push_back(std::move(kept));
  }
  InferOptions options;
  options.forced_keep = &keep_sets;
  options.keep_hidden = true;
  const ForwardTrace pruned = forward_infer(model, input, schedule, options);

  EquivalenceReport report;
  report.kept_indices = keep_sets;
  for (std::size_t layer = 0; layer < pruned.hidden.size(); ++layer) {
    double worst = 0.0;
    const Tensor& hp = pruned.hidden[layer];
    const Tensor& hm = masked.hidden[layer];
    const std::vector<int>& pos = pruned.hidden_positions[layer];
    for (std::size_t r = 0; r < pos.size(); ++r) {
      // Masked rows are indexed by original position.
      worst = std::max(worst, (hp.row(static_cast<Eigen::Index>(r)) - hm.row(pos[r])).cwiseAbs().maxCoeff());
    }
    report.per_layer.push_back(worst);
    report.max_abs_hidden = std::max(report.max_abs_hidden, worst);
  }
  for (std::size_t r = 0; r < pruned.text_positions.size(); ++r) {
    const double diff = (pruned.logits.row(static_cast<Eigen::Index>(r)) -
                         masked.logits.row(pruned.text_positions[r]))
                            .cwiseAbs()
                            .maxCoeff();
    report.max_abs_logits = std::max(report.max_abs_logits, diff);
  }
  return report;
}

}  // namespace lvprune
