#include "lvprune/cli/checks.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lvprune/cost/cost_model.hpp"
#include "lvprune/io/config.hpp"
#include "lvprune/numerics/gradcheck.hpp"
#include "lvprune/numerics/kernels.hpp"
#include "lvprune/training/losses.hpp"

namespace lvprune {

namespace {

CheckResult bounded(std::string name, double value, double threshold, std::string detail = {}) {
  return CheckResult{std::move(name), value, threshold, value < threshold, std::move(detail)};
}

PruneDecision random_binary(int count, SeededRng& rng, bool at_least_one = true) {
  PruneDecision d;
  for (int i = 0; i < count; ++i) d.values.push_back(static_cast<double>(rng.below(2)));
  if (at_least_one && d.kept() == 0) d.values[rng.below(static_cast<std::uint64_t>(count))] = 1.0;
  return d;
}

TokenLayout random_layout(int vision, int text, SeededRng& rng) {
  const int total = vision + text;
  std::vector<int> order(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) order[static_cast<std::size_t>(i)] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<int> v(order.begin(), order.begin() + vision);
  std::vector<int> t(order.begin() + vision, order.end());
  std::sort(v.begin(), v.end());
  std::sort(t.begin(), t.end());
  return TokenLayout::make(total, std::move(v), std::move(t));
}

ModelInput random_input(const ToyMllmConfig& cfg, int text_tokens, SeededRng& rng) {
  ModelInput in;
  in.patches = sample_normal(cfg.vision_tokens, cfg.vision_dim, 1.0, rng);
  for (int t = 0; t < text_tokens; ++t) in.text_ids.push_back(static_cast<int>(rng.below(cfg.vocab)));
  in.text_before = static_cast<int>(rng.below(static_cast<std::uint64_t>(text_tokens)));
  return in;
}

}  // namespace

CheckResult check_mask_structure(std::uint64_t seed, int trials) {
  SeededRng rng(seed, 0x3a51);
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    const int vision = 1 + static_cast<int>(rng.below(12));
    const int text = 1 + static_cast<int>(rng.below(4));
    const TokenLayout layout = random_layout(vision, text, rng);
    const PruneDecision d = random_binary(vision, rng, false);
    const Tensor m = build_attention_mask(d, layout);
    std::vector<int> vision_index(static_cast<std::size_t>(layout.total), -1);
    for (int k = 0; k < vision; ++k) vision_index[static_cast<std::size_t>(layout.vision[static_cast<std::size_t>(k)])] = k;
    for (int i = 0; i < layout.total; ++i) {
      for (int j = 0; j < layout.total; ++j) {
        const int k = vision_index[static_cast<std::size_t>(j)];
        const double expected = (i == j || k < 0) ? 1.0 : d.values[static_cast<std::size_t>(k)];
        worst = std::max(worst, std::abs(m(i, j) - expected));
      }
    }
    ad::Tape tape;
    const Tensor via_tape = ad::build_attention_mask(tape.constant(row_vector(d.values)), layout).value();
    worst = std::max(worst, (via_tape - m).cwiseAbs().maxCoeff());
  }
  return bounded("mask_structure", worst, 1e-15, std::to_string(trials) + " random layouts");
}

CheckResult check_masked_softmax(std::uint64_t seed, int trials) {
  SeededRng rng(seed, 0x50f7);
  double row_error = 0.0;
  double pruned_mass = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    const int vision = 1 + static_cast<int>(rng.below(12));
    const int text = 1 + static_cast<int>(rng.below(4));
    const TokenLayout layout = random_layout(vision, text, rng);
    const PruneDecision d = random_binary(vision, rng, false);
    const Tensor m = build_attention_mask(d, layout);
    const Tensor scores = sample_normal(layout.total, layout.total, 3.0, rng);
    const Tensor p = masked_row_softmax(scores, m);
    row_error = std::max(row_error, (p.rowwise().sum().array() - 1.0).abs().maxCoeff());
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      for (Eigen::Index j = 0; j < p.cols(); ++j) {
        if (m(i, j) == 0.0) pruned_mass = std::max(pruned_mass, std::abs(p(i, j)));
      }
    }
  }
  std::ostringstream os;
  os << "row sum error " << row_error << ", pruned column mass " << pruned_mass;
  return bounded("masked_softmax_rows", std::max(row_error, pruned_mass), 1e-12, os.str());
}

CheckResult check_pruned_isolation(const ToyMllm& model, std::uint64_t seed, int trials) {
  SeededRng rng(seed, 0x150);
  const ToyMllmConfig& cfg = model.config;
  const PruneSchedule schedule{{0}, {0.5}};
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    const ModelInput input = random_input(cfg, 3, rng);
    const std::vector<PruneDecision> forced = {random_binary(cfg.vision_tokens, rng)};
    ModelInput perturbed = input;
    for (int v = 0; v < cfg.vision_tokens; ++v) {
      if (forced[0].values[static_cast<std::size_t>(v)] == 0.0) {
        perturbed.patches.row(v) += sample_normal(1, cfg.vision_dim, 5.0, rng);
      }
    }
    SeededRng unused(seed, 0);
    const ForwardTrace a = forward_train(model, input, schedule, 1.0, unused, DecisionMode::kEval, &forced, true);
    const ForwardTrace b =
        forward_train(model, perturbed, schedule, 1.0, unused, DecisionMode::kEval, &forced, true);
    const int rows = static_cast<int>(a.logits.rows());
    for (int r = 0; r < rows; ++r) {
      const int v = r - input.text_before;
      if (v >= 0 && v < cfg.vision_tokens && forced[0].values[static_cast<std::size_t>(v)] == 0.0) continue;
      for (std::size_t layer = 0; layer < a.hidden.size(); ++layer) {
        worst = std::max(worst, (a.hidden[layer].row(r) - b.hidden[layer].row(r)).cwiseAbs().maxCoeff());
      }
      worst = std::max(worst, (a.logits.row(r) - b.logits.row(r)).cwiseAbs().maxCoeff());
    }
  }
  return bounded("pruned_isolation", worst, 1e-12, "max change at surviving rows");
}

CheckResult check_monotone_pruning(std::uint64_t seed, int schedules) {
  SeededRng rng(seed, 0x307);
  int violations = 0;
  for (int n = 0; n < schedules; ++n) {
    const int vision = 4 + static_cast<int>(rng.below(61));
    const int stages = 1 + static_cast<int>(rng.below(4));
    std::vector<double> ratios;
    for (int s = 0; s < stages; ++s) ratios.push_back(0.05 + 0.95 * rng.uniform());
    std::sort(ratios.rbegin(), ratios.rend());
    ratios.erase(std::unique(ratios.begin(), ratios.end()), ratios.end());

    PruneDecision alive = PruneDecision::all_kept(vision);
    PruneDecision sampled = PruneDecision::all_kept(vision);
    for (double rho : ratios) {
      std::vector<double> prob(static_cast<std::size_t>(vision));
      for (double& p : prob) p = rng.uniform();
      const std::vector<int> kept = select_top_k(prob, rho, alive);
      PruneDecision next{std::vector<double>(static_cast<std::size_t>(vision), 0.0)};
      for (int k : kept) {
        if (alive.values[static_cast<std::size_t>(k)] != 1.0) ++violations;
        next.values[static_cast<std::size_t>(k)] = 1.0;
      }
      if (static_cast<int>(kept.size()) != keep_count(rho, vision)) ++violations;
      alive = next;

      const PruneDecision combined = combine_decisions(sampled, random_binary(vision, rng, false));
      for (int v = 0; v < vision; ++v) {
        if (combined.values[static_cast<std::size_t>(v)] > sampled.values[static_cast<std::size_t>(v)]) ++violations;
      }
      sampled = combined;
    }
  }
  CheckResult r{"monotone_pruning", static_cast<double>(violations), 0.0, violations == 0,
                std::to_string(schedules) + " random schedules"};
  return r;
}

CheckResult check_equivalence(const ToyMllm& model, const PruneSchedule& schedule, std::uint64_t seed,
                              int inputs) {
  const SeededRng root(seed, 0xe9);
  DecisionModuleConfig mcfg = model.module_config;
  // Unbiased heads so sampled decisions drop a good share of tokens.
  mcfg.initial_keep_bias = 0.0;
  double worst = 0.0;
  for (int i = 0; i < inputs; ++i) {
    SeededRng rng = root.fork(static_cast<std::uint64_t>(i));
    ToyMllm m = model;
    for (auto& module : m.modules) module = init_decision_module(mcfg, rng);
    const ModelInput input = random_input(m.config, 2 + static_cast<int>(rng.below(3)), rng);
    worst = std::max(worst, verify_equivalence(m, input, schedule, seed + static_cast<std::uint64_t>(i)).max_abs());
  }
  return bounded("masked_pruned_equivalence", worst, 1e-9, std::to_string(inputs) + " random inputs");
}

CheckResult check_gradients(std::uint64_t seed, double h) {
  ToyMllmConfig cfg;
  cfg.depth = 4;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.ffn = 32;
  cfg.vocab = 16;
  cfg.max_positions = 16;
  cfg.vision_tokens = 6;
  cfg.vision_dim = 8;
  DecisionModuleConfig mcfg;
  mcfg.d_model = 16;
  mcfg.heads = 4;
  mcfg.initial_keep_bias = 0.0;
  mcfg.init_std = 0.3;
  const PruneSchedule schedule{{1, 2}, {0.5, 0.3}};
  const ToyMllm model = ToyMllm::init(cfg, mcfg, 2, seed);
  SeededRng rng(seed, 0x9c);
  const ModelInput input = random_input(cfg, 2, rng);
  const std::vector<int> positions = {cfg.vision_tokens + 1};
  const std::vector<int> targets = {static_cast<int>(rng.below(cfg.vocab))};
  const LossConfig loss_cfg;

  std::vector<Tensor> params;
  for (const auto& m : model.modules) {
    DecisionModuleParams::visit(m, "", [&params](const std::string&, const Tensor& t) { params.push_back(t); });
  }
  const LossBuilder loss = [&](ad::Tape& tape, std::span<const ad::Var> leaves) {
    const BackboneVars backbone = bind(tape, model.backbone, false);
    std::vector<DecisionModuleVars> modules(model.modules.size());
    std::size_t next = 0;
    for (std::size_t k = 0; k < modules.size(); ++k) {
      modules[k].blocks.resize(model.modules[k].blocks.size());
      DecisionModuleVars::visit(modules[k], "", [&](const std::string&, ad::Var& v) { v = leaves[next++]; });
    }
    MaskedForwardOptions options;
    options.mode = DecisionMode::kSoft;
    SeededRng noise(seed, 0x51);
    const MaskedForward fwd =
        forward_masked(tape, backbone, modules, cfg, mcfg, input, schedule, options, noise);
    return total_loss(causal_lm_loss(fwd.logits, positions, targets),
                      ratio_loss(fwd.decisions, schedule.ratios, loss_cfg), loss_cfg);
  };
  const GradCheckReport report = finite_diff_check(loss, params, h);
  std::ostringstream os;
  os << report.coordinates << " coordinates, worst analytic " << report.worst_analytic << " numeric "
     << report.worst_numeric;
  return bounded("gradient_check", report.max_relative_error, 1e-4, os.str());
}

CheckResult check_gumbel(std::uint64_t seed) {
  SeededRng rng(seed, 0x9b);
  bool structural = true;
  for (int trial = 0; trial < 50; ++trial) {
    const KeepScores scores{sample_normal(8, 2, 2.0, rng)};
    const PruneDecision st = gumbel_decision(scores, 1.0, rng, DecisionMode::kStraightThrough);
    const PruneDecision ev = gumbel_decision(scores, 1.0, rng, DecisionMode::kEval);
    const PruneDecision soft = gumbel_decision(scores, 1.0, rng, DecisionMode::kSoft);
    for (std::size_t i = 0; i < st.values.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      structural = structural && (st.values[i] == 0.0 || st.values[i] == 1.0);
      structural = structural && ev.values[i] == (scores.gamma(row, 0) >= scores.gamma(row, 1) ? 1.0 : 0.0);
      structural = structural && soft.values[i] > 0.0 && soft.values[i] < 1.0;
    }
  }
  // Gumbel-max: P(keep) = softmax(gamma)[0].
  const int draws = 40000;
  Tensor gamma(draws, 2);
  gamma.col(0).setConstant(0.7);
  gamma.col(1).setConstant(-0.4);
  const KeepScores scores{gamma};
  const double expected = scores.keep_probability().front();
  const double observed = gumbel_decision(scores, 1.0, rng, DecisionMode::kStraightThrough).keep_fraction();
  const double deviation = std::abs(observed - expected);
  CheckResult r = bounded("gumbel_properties", deviation, 0.01);
  r.pass = r.pass && structural;
  std::ostringstream os;
  os << "keep frequency " << observed << " vs " << expected << (structural ? "" : "; structural check failed");
  r.detail = os.str();
  return r;
}

CheckResult check_cost_agreement(const ToyMllm& model) {
  const ToyMllmConfig& cfg = model.config;
  const ArchitectureSpec arch = toy_architecture(cfg, model.module_config);
  const int text = 2;
  const int n = cfg.vision_tokens + text;
  SeededRng rng(1, 0xc0);
  double worst = 0.0;
  std::ostringstream os;
  {
    ad::Tape tape;
    const BackboneVars backbone = bind(tape, model.backbone, false);
    const ad::Var h = tape.constant(sample_normal(n, cfg.d_model, 1.0, rng));
    std::vector<int> positions(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) positions[static_cast<std::size_t>(i)] = i;
    FlopCounter counter;
    decoder_layer_forward(backbone.layers.front(), h, positions, std::nullopt, cfg);
    const double analytic = decoder_layer_flops(n, arch.decoder);
    const double counted = static_cast<double>(counter.flops());
    worst = std::max(worst, std::abs(analytic - counted) / counted);
    os << "layer " << analytic << " vs " << counted;
  }
  if (!model.modules.empty()) {
    const Tensor h = sample_normal(n, cfg.d_model, 1.0, rng);
    const TokenLayout layout = TokenLayout::vision_then_text(cfg.vision_tokens, text);
    FlopCounter counter;
    decision_module_forward(h, layout, model.modules.front(), model.module_config);
    const double analytic = decision_module_flops(cfg.vision_tokens, text, arch.module);
    const double counted = static_cast<double>(counter.flops());
    worst = std::max(worst, std::abs(analytic - counted) / counted);
    os << ", module " << analytic << " vs " << counted;
  }
  return bounded("cost_instruction_count", worst, 0.02, os.str());
}

std::vector<CheckResult> run_verify_suite(const ToyMllm& model, const PruneSchedule& schedule,
                                          std::uint64_t seed) {
  return {check_mask_structure(seed),          check_masked_softmax(seed),
          check_pruned_isolation(model, seed), check_monotone_pruning(seed),
          check_equivalence(model, schedule, seed), check_gradients(seed),
          check_gumbel(seed),                  check_cost_agreement(model)};
}

}  // namespace lvprune
