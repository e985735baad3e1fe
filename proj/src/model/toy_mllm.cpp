#include "lvprune/model/toy_mllm.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace lvprune {

void ToyMllmConfig::validate() const {
  if (depth < 1 || d_model < 1 || heads < 1 || ffn < 1 || vocab < 1 || max_positions < 1 ||
      vision_dim < 1) {
    throw ConfigError("model: all dimensions must be positive");
  }
  if (vision_tokens < 1) throw ConfigError("model: vision_tokens must be at least 1");
  if (d_model % heads != 0) throw ConfigError("model: heads must divide d_model");
  if (position_encoding == PositionEncoding::kRotary && head_dim() % 2 != 0) {
    throw ConfigError("model: rotary encoding needs an even head dimension");
  }
  if (!(norm_eps > 0.0)) throw ConfigError("model: norm_eps must be positive");
}

BackboneParams init_backbone(const ToyMllmConfig& cfg, SeededRng& rng) {
  cfg.validate();
  const int d = cfg.d_model;
  const double s = cfg.init_std;
  // Residual-branch outputs are scaled down with depth.
  const double out_s = s / std::sqrt(2.0 * cfg.depth);
  BackboneParams p;
  p.connector_w = sample_normal(cfg.vision_dim, d, 1.0 / std::sqrt(static_cast<double>(cfg.vision_dim)), rng);
  p.connector_b = Tensor::Zero(1, d);
  p.token_embedding = sample_normal(cfg.vocab, d, 1.0, rng);
  if (cfg.position_encoding == PositionEncoding::kLearned) {
    p.position_embedding = sample_normal(cfg.max_positions, d, 0.1, rng);
  } else {
    p.position_embedding = Tensor(0, 0);
  }
  for (int l = 0; l < cfg.depth; ++l) {
    DecoderLayerT<Tensor> layer;
    layer.norm1_gain = Tensor::Ones(1, d);
    layer.norm1_bias = Tensor::Zero(1, d);
    layer.w_qkv = sample_normal(d, 3 * d, s, rng);
    layer.w_o = sample_normal(d, d, out_s, rng);
    layer.norm2_gain = Tensor::Ones(1, d);
    layer.norm2_bias = Tensor::Zero(1, d);
    layer.w1 = sample_normal(d, cfg.ffn, s, rng);
    layer.b1 = Tensor::Zero(1, cfg.ffn);
    layer.w2 = sample_normal(cfg.ffn, d, out_s, rng);
    layer.b2 = Tensor::Zero(1, d);
    p.layers.push_back(std::move(layer));
  }
  p.final_norm_gain = Tensor::Ones(1, d);
  p.final_norm_bias = Tensor::Zero(1, d);
  p.head_w = sample_normal(d, cfg.vocab, s, rng);
  p.head_b = Tensor::Zero(1, cfg.vocab);
  return p;
}

BackboneVars bind(ad::Tape& tape, const BackboneParams& params, bool trainable) {
  auto leaf = [&](const Tensor& t) { return trainable ? tape.parameter_view(t) : tape.constant_view(t); };
  BackboneVars v;
  v.connector_w = leaf(params.connector_w);
  v.connector_b = leaf(params.connector_b);
  v.token_embedding = leaf(params.token_embedding);
  v.position_embedding = leaf(params.position_embedding);
  for (const auto& l : params.layers) {
    v.layers.push_back({leaf(l.norm1_gain), leaf(l.norm1_bias), leaf(l.w_qkv), leaf(l.w_o),
                        leaf(l.norm2_gain), leaf(l.norm2_bias), leaf(l.w1), leaf(l.b1), leaf(l.w2),
                        leaf(l.b2)});
  }
  v.final_norm_gain = leaf(params.final_norm_gain);
  v.final_norm_bias = leaf(params.final_norm_bias);
  v.head_w = leaf(params.head_w);
  v.head_b = leaf(params.head_b);
  return v;
}

ToyMllm ToyMllm::init(const ToyMllmConfig& cfg, DecisionModuleConfig module_cfg, int module_count,
                      std::uint64_t seed) {
  cfg.validate();
  module_cfg.d_model = cfg.d_model;
  module_cfg.validate();
  ToyMllm model;
  model.config = cfg;
  model.module_config = module_cfg;
  SeededRng backbone_rng(seed, 1);
  model.backbone = init_backbone(cfg, backbone_rng);
  for (int m = 0; m < module_count; ++m) {
    SeededRng module_rng(seed, 100 + static_cast<std::uint64_t>(m));
    model.modules.push_back(init_decision_module(module_cfg, module_rng));
  }
  return model;
}

std::uint64_t ToyMllm::fingerprint() const {
  std::ostringstream os;
  os << "toy-mllm/v1 depth=" << config.depth << " d=" << config.d_model << " heads=" << config.heads
     << " ffn=" << config.ffn << " vocab=" << config.vocab << " maxpos=" << config.max_positions
     << " V=" << config.vision_tokens << " din=" << config.vision_dim
     << " pe=" << static_cast<int>(config.position_encoding) << " base=" << config.rotary_base
     << " eps=" << config.norm_eps << " mblocks=" << module_config.blocks
     << " mheads=" << module_config.heads << " meps=" << module_config.norm_eps;
  visit([&os](const std::string& name, const Tensor& t) {
    os << ' ' << name << '=' << t.rows() << 'x' << t.cols();
  });
  const std::string s = os.str();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace lvprune
