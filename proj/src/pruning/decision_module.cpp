#include "lvprune/pruning/decision_module.hpp"

#include <cmath>

#include "lvprune/numerics/kernels.hpp"

namespace lvprune {

void DecisionModuleConfig::validate() const {
  if (d_model <= 0 || blocks <= 0 || heads <= 0) {
    throw ConfigError("decision module: d_model, blocks and heads must be positive");
  }
  if (d_model % heads != 0) {
    throw ConfigError("decision module: heads (" + std::to_string(heads) + ") must divide d_model (" +
                      std::to_string(d_model) + ")");
  }
}

DecisionModuleParams init_decision_module(const DecisionModuleConfig& cfg, SeededRng& rng) {
  cfg.validate();
  const int d = cfg.d_model;
  const double s = cfg.init_std;
  DecisionModuleParams p;
  for (int b = 0; b < cfg.blocks; ++b) {
    CrossAttentionBlockParams blk;
    blk.wq = sample_normal(d, d, s, rng);
    blk.wk = sample_normal(d, d, s, rng);
    blk.wv = sample_normal(d, d, s, rng);
    blk.w_proj = sample_normal(d, d, s, rng);
    blk.ffn_norm_in_gain = Tensor::Ones(1, d);
    blk.ffn_norm_in_bias = Tensor::Zero(1, d);
    blk.ffn_w1 = sample_normal(d, 2 * d, s, rng);
    blk.ffn_b1 = Tensor::Zero(1, 2 * d);
    blk.ffn_w2 = sample_normal(2 * d, d, s, rng);
    blk.ffn_b2 = Tensor::Zero(1, d);
    blk.ffn_norm_out_gain = Tensor::Ones(1, d);
    blk.ffn_norm_out_bias = Tensor::Zero(1, d);
    p.blocks.push_back(std::move(blk));
  }
  p.w_out = sample_normal(d, 2, s, rng);
  p.b_out = Tensor(1, 2);
  p.b_out << cfg.initial_keep_bias, -cfg.initial_keep_bias;
  return p;
}

DecisionModuleVars bind(ad::Tape& tape, const DecisionModuleParams& params, bool trainable) {
  auto leaf = [&](const Tensor& t) { return trainable ? tape.parameter_view(t) : tape.constant_view(t); };
  DecisionModuleVars v;
  for (const CrossAttentionBlockParams& b : params.blocks) {
    v.blocks.push_back({leaf(b.wq), leaf(b.wk), leaf(b.wv), leaf(b.w_proj), leaf(b.ffn_norm_in_gain),
                        leaf(b.ffn_norm_in_bias), leaf(b.ffn_w1), leaf(b.ffn_b1), leaf(b.ffn_w2),
                        leaf(b.ffn_b2), leaf(b.ffn_norm_out_gain), leaf(b.ffn_norm_out_bias)});
  }
  v.w_out = leaf(params.w_out);
  v.b_out = leaf(params.b_out);
  return v;
}

std::vector<double> KeepScores::keep_probability() const {
  std::vector<double> p(static_cast<std::size_t>(gamma.rows()));
  for (Eigen::Index i = 0; i < gamma.rows(); ++i) {
    // softmax over two entries: 1 / (1 + exp(drop - keep)).
    p[static_cast<std::size_t>(i)] = sigmoid(gamma(i, 0) - gamma(i, 1));
  }
  return p;
}

namespace {

ad::Var multi_head_attention(ad::Var q, ad::Var k, ad::Var v, int heads) {
  const Eigen::Index head_dim = q.cols() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<ad::Var> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index at = h * head_dim;
    ad::Var qh = ad::slice_cols(q, at, head_dim);
    ad::Var kh = ad::slice_cols(k, at, head_dim);
    ad::Var vh = ad::slice_cols(v, at, head_dim);
    ad::Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
    outs.push_back(ad::matmul(ad::row_softmax(scores), vh));
  }
  return heads == 1 ? outs.front() : ad::concat_cols(outs);
}

}  // namespace

QKV project_qkv(ad::Var h, const TokenLayout& layout, const DecisionModuleVars& params, int block) {
  if (layout.text.empty()) throw NoTextError();
  if (h.rows() != layout.total) {
    throw DimensionError("project_qkv: hidden state has " + std::to_string(h.rows()) +
                         " rows, layout " + std::to_string(layout.total));
  }
  const auto& b = params.blocks.at(static_cast<std::size_t>(block));
  ad::Var hv = ad::gather_rows(h, layout.vision);
  ad::Var ht = ad::gather_rows(h, layout.text);
  return {ad::matmul(hv, b.wq), ad::matmul(ht, b.wk), ad::matmul(ht, b.wv)};
}

ad::Var cross_attention_block(ad::Var queries, ad::Var text, const CrossAttentionBlockT<ad::Var>& b,
                              const DecisionModuleConfig& cfg) {
  if (text.rows() == 0) throw NoTextError();
  ad::Var q = ad::matmul(queries, b.wq);
  ad::Var k = ad::matmul(text, b.wk);
  ad::Var v = ad::matmul(text, b.wv);
  ad::Var o = ad::add(ad::matmul(multi_head_attention(q, k, v, cfg.heads), b.w_proj), q);
  ad::Var f = ad::layer_norm(o, b.ffn_norm_in_gain, b.ffn_norm_in_bias, cfg.norm_eps);
  f = ad::silu(ad::add_row(ad::matmul(f, b.ffn_w1), b.ffn_b1));
  f = ad::add_row(ad::matmul(f, b.ffn_w2), b.ffn_b2);
  f = ad::layer_norm(f, b.ffn_norm_out_gain, b.ffn_norm_out_bias, cfg.norm_eps);
  return ad::add(o, f);
}

ad::Var cross_attention_block(ad::Var h, const TokenLayout& layout, const DecisionModuleVars& params,
                              int block, const DecisionModuleConfig& cfg) {
  if (layout.text.empty()) throw NoTextError();
  return cross_attention_block(ad::gather_rows(h, layout.vision), ad::gather_rows(h, layout.text),
                               params.blocks.at(static_cast<std::size_t>(block)), cfg);
}

ad::Var decision_module_forward(ad::Var h, const TokenLayout& layout, const DecisionModuleVars& params,
                                const DecisionModuleConfig& cfg) {
  if (layout.text.empty()) throw NoTextError();
  if (h.rows() != layout.total) {
    throw DimensionError("decision_module_forward: hidden rows do not match layout");
  }
  ad::Var text = ad::gather_rows(h, layout.text);
  ad::Var x = ad::gather_rows(h, layout.vision);
  for (const auto& b : params.blocks) x = cross_attention_block(x, text, b, cfg);
  return ad::add_row(ad::matmul(x, params.w_out), params.b_out);
}

KeepScores decision_module_forward(const Tensor& h, const TokenLayout& layout,
                                   const DecisionModuleParams& params, const DecisionModuleConfig& cfg) {
  ad::Tape tape;
  ad::Var gamma = decision_module_forward(tape.constant(h), layout, bind(tape, params, false), cfg);
  return KeepScores{gamma.value()};
}

ad::Var gumbel_decision(ad::Var gamma, double tau, SeededRng& rng, DecisionMode mode) {
  if (!(tau > 0.0)) throw Error("gumbel_decision: temperature must be positive");
  if (gamma.cols() != 2) throw DimensionError("gumbel_decision: gamma must have two columns");
  ad::Tape& tape = *gamma.tape();
  const Eigen::Index n = gamma.rows();
  if (mode == DecisionMode::kEval) {
    Tensor hard(1, n);
    for (Eigen::Index i = 0; i < n; ++i) hard(0, i) = gamma.value()(i, 0) >= gamma.value()(i, 1) ? 1.0 : 0.0;
    return tape.constant(std::move(hard));
  }
  ad::Var noisy = ad::add_constant(gamma, sample_gumbel(n, 2, rng));
  ad::Var soft = ad::row_softmax(ad::scale(noisy, 1.0 / tau));
  ad::Var keep_soft = ad::transpose(ad::slice_cols(soft, 0, 1));
  if (mode == DecisionMode::kSoft) return keep_soft;
  Tensor hard(1, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    hard(0, i) = soft.value()(i, 0) >= soft.value()(i, 1) ? 1.0 : 0.0;
  }
  return ad::straight_through(keep_soft, std::move(hard));
}

PruneDecision gumbel_decision(const KeepScores& scores, double tau, SeededRng& rng, DecisionMode mode) {
  ad::Tape tape;
  ad::Var d = gumbel_decision(tape.constant(scores.gamma), tau, rng, mode);
  return PruneDecision{to_vector(d.value())};
}

}  // namespace lvprune
