#include "lvprune/cost/cost_model.hpp"

#include <cmath>

namespace lvprune {

namespace {

void require_positive(int v, const std::string& field) {
  if (v <= 0) throw ConfigError(field + " must be positive (got " + std::to_string(v) + ")");
}

}  // namespace

void TransformerSpec::validate(const std::string& section) const {
  require_positive(layers, section + ".layers");
  require_positive(d, section + ".d");
  require_positive(heads, section + ".heads");
  require_positive(ffn, section + ".ffn");
  if (d % heads != 0) throw ConfigError(section + ".heads must divide " + section + ".d");
}

void VisionEncoderSpec::validate() const {
  if (layers < 0) throw ConfigError("cost.vision.layers must be nonnegative");
  if (layers == 0) {
    // No encoder: raw patches of width d go straight into the connector.
    require_positive(d, "cost.vision.d");
    return;
  }
  as_transformer().validate("cost.vision");
  require_positive(tokens, "cost.vision.tokens");
}

void ConnectorSpec::validate() const {
  if (widths.size() < 2) throw ConfigError("cost.connector.widths needs at least two entries");
  for (int w : widths) require_positive(w, "cost.connector.widths[]");
}

void DecisionModuleSpec::validate() const {
  require_positive(blocks, "cost.module.blocks");
  require_positive(heads, "cost.module.heads");
  require_positive(d, "cost.module.d");
}

void ArchitectureSpec::validate() const {
  decoder.validate("cost.decoder");
  vision.validate();
  connector.validate();
  module.validate();
  if (module.d != decoder.d) throw ConfigError("cost.module.d must equal cost.decoder.d");
  if (connector.widths.front() != vision.d) {
    throw ConfigError("cost.connector.widths must start at cost.vision.d");
  }
  if (connector.widths.back() != decoder.d) {
    throw ConfigError("cost.connector.widths must end at cost.decoder.d");
  }
}

void InputSpec::validate() const {
  require_positive(vision_tokens, "cost.input.vision_tokens");
  require_positive(text_tokens, "cost.input.text_tokens");
}

double decoder_layer_flops(long n, const TransformerSpec& spec) {
  if (n < 1) throw DimensionError("decoder_layer_flops: token count must be at least 1");
  const double nn = static_cast<double>(n);
  const double d = spec.d;
  const double f = spec.ffn;
  const double ffn_mats = spec.ffn_kind == FfnKind::kGated ? 3.0 : 2.0;
  const double macs = 4.0 * nn * d * d + 2.0 * nn * nn * d + ffn_mats * nn * d * f;
  return 2.0 * macs;
}

double decision_module_flops(long q, long t, const DecisionModuleSpec& spec) {
  if (q < 1 || t < 1) throw DimensionError("decision_module_flops: q and t must be at least 1");
  const double qq = static_cast<double>(q);
  const double tt = static_cast<double>(t);
  const double d = spec.d;
  const double per_block = qq * d * d          // Q projection
                           + 2.0 * tt * d * d  // K, V projections
                           + 2.0 * qq * tt * d // scores and weighted values
                           + qq * d * d        // output projection
                           + 2.0 * qq * d * (2.0 * d);
  const double macs = spec.blocks * per_block + qq * d * 2.0;
  return 2.0 * macs;
}

double connector_flops(long tokens, const ConnectorSpec& spec) {
  double macs = 0.0;
  for (std::size_t i = 0; i + 1 < spec.widths.size(); ++i) {
    macs += static_cast<double>(tokens) * spec.widths[i] * spec.widths[i + 1];
  }
  return 2.0 * macs;
}

namespace {

CostReport stages(const ArchitectureSpec& arch, const InputSpec& input, const std::vector<int>& layers,
                  const std::vector<double>& ratios) {
  CostReport r;
  if (arch.vision.layers > 0)
    r.vision_encoder = arch.vision.layers * decoder_layer_flops(arch.vision.tokens, arch.vision.as_transformer());
  r.connector = connector_flops(input.vision_tokens, arch.connector);
  int alive = input.vision_tokens;
  std::size_t next = 0;
  for (int layer = 0; layer < arch.decoder.layers; ++layer) {
    if (next < layers.size() && layers[next] == layer) {
      r.module_queries.push_back(alive);
      r.decision_modules.push_back(decision_module_flops(alive, input.text_tokens, arch.module));
      alive = keep_count(ratios[next], input.vision_tokens);
      ++next;
    }
    const int n = alive + input.text_tokens;
    r.layer_tokens.push_back(n);
    r.decoder_layers.push_back(decoder_layer_flops(n, arch.decoder));
  }
  for (double f : r.decoder_layers) r.decoder += f;
  for (double f : r.decision_modules) r.modules += f;
  r.total = r.vision_encoder + r.connector + r.decoder + r.modules;
  return r;
}

void validate_layers(const std::vector<int>& layers, int depth) {
  for (std::size_t s = 0; s < layers.size(); ++s) {
    if (layers[s] < 0 || layers[s] >= depth) {
      throw ScheduleInfeasibleError("cost: layer index " + std::to_string(layers[s]) + " outside [0, " +
                                    std::to_string(depth) + ")");
    }
    if (s > 0 && layers[s] <= layers[s - 1]) {
      throw ScheduleInfeasibleError("cost: layer indices must be strictly increasing");
    }
  }
}

void validate_inference_ratios(const std::vector<double>& ratios, std::size_t stages) {
  if (ratios.size() != stages) {
    throw ScheduleInfeasibleError("cost: " + std::to_string(ratios.size()) + " inference ratios for " +
                                  std::to_string(stages) + " stages");
  }
  for (std::size_t s = 0; s < ratios.size(); ++s) {
    if (!(ratios[s] > 0.0 && ratios[s] <= 1.0)) {
      throw ScheduleInfeasibleError("cost: inference ratio " + std::to_string(ratios[s]) + " outside (0, 1]");
    }
    if (s > 0 && ratios[s] > ratios[s - 1]) {
      throw ScheduleInfeasibleError("cost: inference ratios must be nonincreasing");
    }
  }
}

}  // namespace

CostReport pipeline_flops(const ArchitectureSpec& arch, const InputSpec& input,
                          const std::optional<PruneSchedule>& schedule,
                          const std::optional<std::vector<double>>& ratios) {
  arch.validate();
  input.validate();
  const std::vector<int> none;
  if (!schedule) {
    if (ratios && !ratios->empty()) throw ScheduleInfeasibleError("cost: inference ratios given without a schedule");
    CostReport r = stages(arch, input, none, {});
    r.baseline = r.total;
    return r;
  }
  if (ratios) {
    validate_layers(schedule->layers, arch.decoder.layers);
    validate_inference_ratios(*ratios, schedule->stages());
  } else {
    schedule->validate(arch.decoder.layers);
  }
  CostReport r = stages(arch, input, schedule->layers, ratios ? *ratios : schedule->ratios);
  r.baseline = stages(arch, input, none, {}).total;
  r.reduction = (r.baseline - r.total) / r.baseline;
  return r;
}

double decision_module_overhead(const ArchitectureSpec& arch, const InputSpec& input,
                                const std::vector<int>& layers) {
  PruneSchedule schedule{layers, std::vector<double>(layers.size(), 1.0)};
  const CostReport full = pipeline_flops(arch, input, schedule, schedule.ratios);
  return full.total - full.baseline;
}

std::vector<double> stepped_ratios(double rho, std::size_t stages) {
  std::vector<double> r;
  // Rounded to 12 decimals so 0.6 - 0.2 prints as 0.4.
  for (std::size_t s = 0; s < stages; ++s) r.push_back(std::round((rho - 0.2 * static_cast<double>(s)) * 1e12) / 1e12);
  return r;
}

Sweep reduction_sweep(const ArchitectureSpec& arch, const InputSpec& input, const std::vector<int>& layers,
                      double lo, double hi, double step) {
  if (!(step > 0.0)) throw ConfigError("sweep: step must be positive");
  if (hi < lo) throw ConfigError("sweep: upper bound below lower bound");
  const long count = static_cast<long>(std::floor((hi - lo) / step + 1e-9)) + 1;
  Sweep out;
  for (long i = 0; i < count; ++i) {
    const double rho = std::round((lo + static_cast<double>(i) * step) * 1e12) / 1e12;
    std::vector<double> ratios = stepped_ratios(rho, layers.size());
    if (ratios.empty() || ratios.back() <= 0.0 || ratios.front() > 1.0) {
      out.skipped.push_back(rho);
      continue;
    }
    out.points.push_back({rho, pipeline_flops(arch, input, PruneSchedule{layers, ratios})});
  }
  return out;
}

}  // namespace lvprune
