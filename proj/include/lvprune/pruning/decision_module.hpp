#pragma once

#include <string>
#include <vector>

#include "lvprune/numerics/autograd.hpp"
#include "lvprune/numerics/rng.hpp"
#include "lvprune/pruning/layout.hpp"

namespace lvprune {

struct DecisionModuleConfig {
  int d_model = 64;
  int blocks = 2;
  int heads = 8;
  double norm_eps = 1e-5;
  // Initial bias of the keep/drop head, so untrained modules start near
  // keeping everything.
  double initial_keep_bias = 2.0;
  double init_std = 0.02;

  void validate() const;
  int head_dim() const { return d_model / heads; }
  bool operator==(const DecisionModuleConfig&) const = default;
};

// One cross-attention block: vision queries attend to text keys/values,
// O = softmax(Q K^T / sqrt(d_head)) V W_proj + Q, followed by an FFN
// [LayerNorm, Linear(d, 2d), SiLU, Linear(2d, d), LayerNorm] with residual.
template <typename T>
struct CrossAttentionBlockT {
  T wq, wk, wv, w_proj;
  T ffn_norm_in_gain, ffn_norm_in_bias;
  T ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  T ffn_norm_out_gain, ffn_norm_out_bias;

  template <typename Self, typename F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    f(prefix + "wq", self.wq);
    f(prefix + "wk", self.wk);
    f(prefix + "wv", self.wv);
    f(prefix + "w_proj", self.w_proj);
    f(prefix + "ffn_norm_in_gain", self.ffn_norm_in_gain);
    f(prefix + "ffn_norm_in_bias", self.ffn_norm_in_bias);
    f(prefix + "ffn_w1", self.ffn_w1);
    f(prefix + "ffn_b1", self.ffn_b1);
    f(prefix + "ffn_w2", self.ffn_w2);
    f(prefix + "ffn_b2", self.ffn_b2);
    f(prefix + "ffn_norm_out_gain", self.ffn_norm_out_gain);
    f(prefix + "ffn_norm_out_bias", self.ffn_norm_out_bias);
  }
};

template <typename T>
struct DecisionModuleT {
  std::vector<CrossAttentionBlockT<T>> blocks;
  // Scoring head: column 0 scores keep, column 1 scores drop.
  T w_out, b_out;

  template <typename Self, typename F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    for (std::size_t b = 0; b < self.blocks.size(); ++b) {
      CrossAttentionBlockT<T>::visit(self.blocks[b], prefix + "blocks." + std::to_string(b) + ".", f);
    }
    f(prefix + "w_out", self.w_out);
    f(prefix + "b_out", self.b_out);
  }
};

using CrossAttentionBlockParams = CrossAttentionBlockT<Tensor>;
using DecisionModuleParams = DecisionModuleT<Tensor>;
using DecisionModuleVars = DecisionModuleT<ad::Var>;

DecisionModuleParams init_decision_module(const DecisionModuleConfig& cfg, SeededRng& rng);

// Binds every tensor as a tape leaf; trainable leaves receive gradients.
DecisionModuleVars bind(ad::Tape& tape, const DecisionModuleParams& params, bool trainable);

// Keep/drop scores gamma (|I_V| x 2) of one decision module.
struct KeepScores {
  Tensor gamma;

  // softmax(gamma) column 0.
  std::vector<double> keep_probability() const;
};

struct QKV {
  ad::Var q, k, v;
};

// Q = H[I_V] W_q, K = H[I_T] W_k, V = H[I_T] W_v in layout order.
QKV project_qkv(ad::Var h, const TokenLayout& layout, const DecisionModuleVars& params, int block);

// One block applied to explicit query rows (|I_V| x d) and text rows (|I_T| x d).
ad::Var cross_attention_block(ad::Var queries, ad::Var text, const CrossAttentionBlockT<ad::Var>& block,
                              const DecisionModuleConfig& cfg);

// Block `block` applied to the vision rows of h.
ad::Var cross_attention_block(ad::Var h, const TokenLayout& layout, const DecisionModuleVars& params,
                              int block, const DecisionModuleConfig& cfg);

// Chains all blocks (keys/values always from the text rows of h) and applies
// the scoring head to the last FFN output. Returns gamma (|I_V| x 2).
ad::Var decision_module_forward(ad::Var h, const TokenLayout& layout, const DecisionModuleVars& params,
                                const DecisionModuleConfig& cfg);

KeepScores decision_module_forward(const Tensor& h, const TokenLayout& layout,
                                   const DecisionModuleParams& params, const DecisionModuleConfig& cfg);

enum class DecisionMode {
  // Hard one-hot forward, soft Gumbel-softmax gradient.
  kStraightThrough,
  // Soft Gumbel-softmax relaxation in both directions; used for gradient checks.
  kSoft,
  // Noiseless row argmax of gamma.
  kEval,
};

// Keep decision (1 x |I_V|) from gamma. Noise is drawn from `rng` only in
// the straight-through and soft modes.
ad::Var gumbel_decision(ad::Var gamma, double tau, SeededRng& rng, DecisionMode mode);

PruneDecision gumbel_decision(const KeepScores& scores, double tau, SeededRng& rng, DecisionMode mode);

}  // namespace lvprune
