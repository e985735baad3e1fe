#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lvprune/numerics/autograd.hpp"
#include "lvprune/numerics/rng.hpp"
#include "lvprune/pruning/decision_module.hpp"

namespace lvprune {

enum class PositionEncoding { kRotary, kLearned };

struct ToyMllmConfig {
  int depth = 8;
  int d_model = 64;
  int heads = 4;
  int ffn = 256;
  int vocab = 64;
  int max_positions = 128;
  int vision_tokens = 16;
  // Width of the raw patch vectors fed to the linear connector.
  int vision_dim = 16;
  PositionEncoding position_encoding = PositionEncoding::kRotary;
  double rotary_base = 10000.0;
  double norm_eps = 1e-5;
  double init_std = 0.08;

  void validate() const;
  int head_dim() const { return d_model / heads; }
  bool operator==(const ToyMllmConfig&) const = default;
};

// Pre-norm decoder layer: h += Attn(LN1(h)) W_o; h += FFN(LN2(h)).
template <typename T>
struct DecoderLayerT {
  T norm1_gain, norm1_bias;
  T w_qkv, w_o;
  T norm2_gain, norm2_bias;
  T w1, b1, w2, b2;

  template <typename Self, typename F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    f(prefix + "norm1_gain", self.norm1_gain);
    f(prefix + "norm1_bias", self.norm1_bias);
    f(prefix + "w_qkv", self.w_qkv);
    f(prefix + "w_o", self.w_o);
    f(prefix + "norm2_gain", self.norm2_gain);
    f(prefix + "norm2_bias", self.norm2_bias);
    f(prefix + "w1", self.w1);
    f(prefix + "b1", self.b1);
    f(prefix + "w2", self.w2);
    f(prefix + "b2", self.b2);
  }
};

template <typename T>
struct BackboneT {
  T connector_w, connector_b;
  T token_embedding;
  // Empty (0 x 0) unless position_encoding is kLearned.
  T position_embedding;
  std::vector<DecoderLayerT<T>> layers;
  T final_norm_gain, final_norm_bias;
  T head_w, head_b;

  template <typename Self, typename F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    f(prefix + "connector_w", self.connector_w);
    f(prefix + "connector_b", self.connector_b);
    f(prefix + "token_embedding", self.token_embedding);
    f(prefix + "position_embedding", self.position_embedding);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      DecoderLayerT<T>::visit(self.layers[l], prefix + "layers." + std::to_string(l) + ".", f);
    }
    f(prefix + "final_norm_gain", self.final_norm_gain);
    f(prefix + "final_norm_bias", self.final_norm_bias);
    f(prefix + "head_w", self.head_w);
    f(prefix + "head_b", self.head_b);
  }
};

using BackboneParams = BackboneT<Tensor>;
using BackboneVars = BackboneT<ad::Var>;
using DecoderLayerVars = DecoderLayerT<ad::Var>;

BackboneParams init_backbone(const ToyMllmConfig& cfg, SeededRng& rng);
BackboneVars bind(ad::Tape& tape, const BackboneParams& params, bool trainable);

// The frozen backbone plus one decision module per schedule stage.
struct ToyMllm {
  ToyMllmConfig config;
  DecisionModuleConfig module_config;
  BackboneParams backbone;
  std::vector<DecisionModuleParams> modules;

  static ToyMllm init(const ToyMllmConfig& cfg, DecisionModuleConfig module_cfg, int module_count,
                      std::uint64_t seed);

  // Visits every tensor with a stable dotted name ("backbone.layers.0.w_qkv",
  // "modules.1.blocks.0.wq", ...).
  template <typename F>
  void visit(F&& f) {
    BackboneParams::visit(backbone, "backbone.", f);
    for (std::size_t m = 0; m < modules.size(); ++m) {
      DecisionModuleParams::visit(modules[m], "modules." + std::to_string(m) + ".", f);
    }
  }
  template <typename F>
  void visit(F&& f) const {
    BackboneParams::visit(backbone, "backbone.", f);
    for (std::size_t m = 0; m < modules.size(); ++m) {
      DecisionModuleParams::visit(modules[m], "modules." + std::to_string(m) + ".", f);
    }
  }

  // FNV-1a hash of every architecture field and parameter shape.
  std::uint64_t fingerprint() const;
};

}  // namespace lvprune
