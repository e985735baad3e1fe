#include "lvprune/io/config.hpp"

#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

namespace lvprune {

using json = nlohmann::ordered_json;

namespace {

const json& empty_object() {
  static const json e = json::object();
  return e;
}

// Reads one JSON object, remembering which keys were consumed so anything
// left over can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }
  ~Section() = default;

  bool has(const std::string& key) const { return j_.contains(key); }

  Section child(const std::string& key) {
    seen_.insert(key);
    return Section(j_.contains(key) ? j_.at(key) : empty_object(), field(key));
  }

  void get(const std::string& key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(field(key) + " must be an integer");
      const auto x = v->get<std::int64_t>();
      if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
        throw ConfigError(field(key) + " is out of range");
      }
      out = static_cast<int>(x);
    }
  }
  void get(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(field(key) + " must be a nonnegative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(field(key) + " must be a number");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(field(key) + " must be a string");
      out = v->get<std::string>();
    }
  }
  template <typename T>
  void get(const std::string& key, std::vector<T>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(field(key) + " must be an array");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        const json& e = (*v)[i];
        if constexpr (std::is_integral_v<T>) {
          if (!e.is_number_integer()) throw ConfigError(field(key) + "[" + std::to_string(i) + "] must be an integer");
        } else {
          if (!e.is_number()) throw ConfigError(field(key) + "[" + std::to_string(i) + "] must be a number");
        }
        out.push_back(e.get<T>());
      }
    }
  }
  template <typename E>
  void get_enum(const std::string& key, E& out, std::initializer_list<std::pair<const char*, E>> names) {
    std::string s;
    get(key, s);
    if (!has(key)) return;
    for (const auto& [name, value] : names) {
      if (s == name) {
        out = value;
        return;
      }
    }
    std::string allowed;
    for (const auto& [name, value] : names) allowed += std::string(allowed.empty() ? "" : ", ") + name;
    throw ConfigError(field(key) + " must be one of: " + allowed);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError("unknown key " + field(key));
    }
  }

 private:
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  const json* find(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

constexpr std::initializer_list<std::pair<const char*, UpdateRule>> kRules = {{"sgd", UpdateRule::kSgd},
                                                                              {"adam", UpdateRule::kAdam}};
constexpr std::initializer_list<std::pair<const char*, FfnKind>> kFfnKinds = {{"gated", FfnKind::kGated},
                                                                              {"plain", FfnKind::kPlain}};

template <typename E>
const char* enum_name(E v, std::initializer_list<std::pair<const char*, E>> names) {
  for (const auto& [name, value] : names) {
    if (value == v) return name;
  }
  return "?";
}

void read_optimizer(Section s, OptimizerConfig& o) {
  s.get_enum("rule", o.rule, kRules);
  s.get("peak_lr", o.peak_lr);
  s.get("warmup_ratio", o.warmup_ratio);
  s.get("total_steps", o.total_steps);
  s.get("max_grad_norm", o.max_grad_norm);
  s.get("weight_decay", o.weight_decay);
  s.get("batch_size", o.batch_size);
  s.get("adam_beta1", o.adam_beta1);
  s.get("adam_beta2", o.adam_beta2);
  s.get("adam_eps", o.adam_eps);
  s.finish();
}

json write_optimizer(const OptimizerConfig& o) {
  return {{"rule", enum_name(o.rule, kRules)},
          {"peak_lr", o.peak_lr},
          {"warmup_ratio", o.warmup_ratio},
          {"total_steps", o.total_steps},
          {"max_grad_norm", o.max_grad_norm},
          {"weight_decay", o.weight_decay},
          {"batch_size", o.batch_size},
          {"adam_beta1", o.adam_beta1},
          {"adam_beta2", o.adam_beta2},
          {"adam_eps", o.adam_eps}};
}

void read_transformer(Section s, TransformerSpec& t) {
  s.get("layers", t.layers);
  s.get("d", t.d);
  s.get("heads", t.heads);
  s.get("ffn", t.ffn);
  s.get_enum("ffn_kind", t.ffn_kind, kFfnKinds);
  s.get("vocab", t.vocab);
  s.finish();
}

CostConfig read_cost(Section s) {
  CostConfig c;
  read_transformer(s.child("decoder"), c.arch.decoder);
  {
    Section v = s.child("vision");
    v.get("layers", c.arch.vision.layers);
    v.get("d", c.arch.vision.d);
    v.get("heads", c.arch.vision.heads);
    v.get("ffn", c.arch.vision.ffn);
    v.get_enum("ffn_kind", c.arch.vision.ffn_kind, kFfnKinds);
    v.get("tokens", c.arch.vision.tokens);
    v.finish();
  }
  {
    Section v = s.child("connector");
    v.get("widths", c.arch.connector.widths);
    v.finish();
  }
  {
    Section v = s.child("module");
    v.get("blocks", c.arch.module.blocks);
    v.get("heads", c.arch.module.heads);
    v.get("d", c.arch.module.d);
    v.finish();
  }
  {
    Section v = s.child("input");
    v.get("vision_tokens", c.input.vision_tokens);
    v.get("text_tokens", c.input.text_tokens);
    v.finish();
  }
  s.get("layers", c.layers);
  s.get("rho", c.rho);
  s.finish();
  return c;
}

json write_cost(const CostConfig& c) {
  const ArchitectureSpec& a = c.arch;
  return {{"decoder",
           {{"layers", a.decoder.layers},
            {"d", a.decoder.d},
            {"heads", a.decoder.heads},
            {"ffn", a.decoder.ffn},
            {"ffn_kind", enum_name(a.decoder.ffn_kind, kFfnKinds)},
            {"vocab", a.decoder.vocab}}},
          {"vision",
           {{"layers", a.vision.layers},
            {"d", a.vision.d},
            {"heads", a.vision.heads},
            {"ffn", a.vision.ffn},
            {"ffn_kind", enum_name(a.vision.ffn_kind, kFfnKinds)},
            {"tokens", a.vision.tokens}}},
          {"connector", {{"widths", a.connector.widths}}},
          {"module", {{"blocks", a.module.blocks}, {"heads", a.module.heads}, {"d", a.module.d}}},
          {"input", {{"vision_tokens", c.input.vision_tokens}, {"text_tokens", c.input.text_tokens}}},
          {"layers", c.layers},
          {"rho", c.rho}};
}

}  // namespace

PruneSchedule ScheduleConfig::inference() const {
  return PruneSchedule{train.layers, inference_ratios.empty() ? train.ratios : inference_ratios};
}

std::vector<SyntheticSample> DataConfig::train_set() const { return make_synthetic_dataset(task, seed); }

std::vector<SyntheticSample> DataConfig::eval_set() const {
  SyntheticSpec spec = task;
  spec.samples = eval_samples;
  return make_synthetic_dataset(spec, splitmix64(seed));
}

namespace {

void validate_sections(const RunConfig& c) {
  const auto& [seed, model, module, schedule, loss, pretrain, optimizer, trainer, data, cost, output] = c;
  (void)seed;
  (void)output;
  model.validate();
  if (module.d_model != model.d_model) throw ConfigError("module.d_model must equal model.d_model");
  module.validate();
  schedule.train.validate(model.depth);
  if (!schedule.inference_ratios.empty()) {
    if (schedule.inference_ratios.size() != schedule.train.stages()) {
      throw ConfigError("schedule.inference_ratios must have one entry per stage");
    }
    schedule.inference().validate_inference(model.depth);
  }
  if (!(schedule.tau > 0.0)) throw ConfigError("schedule.tau must be positive");
  loss.validate();
  pretrain.optimizer.validate();
  optimizer.validate();
  if (trainer.micro_batch < 0) throw ConfigError("trainer.micro_batch must be nonnegative");
  if (trainer.threads < 1) throw ConfigError("trainer.threads must be at least 1");
  data.task.validate();
  if (data.eval_samples < 1) throw ConfigError("data.eval_samples must be positive");
  if (data.task.vision_tokens != model.vision_tokens) {
    throw ConfigError("data.vision_tokens must equal model.vision_tokens");
  }
  if (data.task.patch_dim != model.vision_dim) throw ConfigError("data.patch_dim must equal model.vision_dim");
  if (model.vocab < data.task.min_vocab()) {
    throw ConfigError("model.vocab must be at least " + std::to_string(data.task.min_vocab()) +
                      " for the synthetic task");
  }
  if (model.max_positions < model.vision_tokens + SyntheticSpec::kTextTokens) {
    throw ConfigError("model.max_positions is too small for the synthetic sequences");
  }
  if (cost) {
    cost->arch.validate();
    cost->input.validate();
    PruneSchedule{cost->layers, stepped_ratios(cost->rho, cost->layers.size())}.validate_inference(
        cost->arch.decoder.layers);
  }
}

}  // namespace

void RunConfig::validate() const {
  try {
    validate_sections(*this);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Section root(j, "");
  root.get("seed", c.seed);
  {
    Section s = root.child("model");
    s.get("depth", c.model.depth);
    s.get("d_model", c.model.d_model);
    s.get("heads", c.model.heads);
    s.get("ffn", c.model.ffn);
    s.get("vocab", c.model.vocab);
    s.get("max_positions", c.model.max_positions);
    s.get("vision_tokens", c.model.vision_tokens);
    s.get("vision_dim", c.model.vision_dim);
    s.get_enum("position_encoding", c.model.position_encoding,
               {{"rotary", PositionEncoding::kRotary}, {"learned", PositionEncoding::kLearned}});
    s.get("rotary_base", c.model.rotary_base);
    s.get("norm_eps", c.model.norm_eps);
    s.get("init_std", c.model.init_std);
    s.finish();
  }
  c.module.d_model = c.model.d_model;
  {
    Section s = root.child("module");
    s.get("blocks", c.module.blocks);
    s.get("heads", c.module.heads);
    s.get("norm_eps", c.module.norm_eps);
    s.get("initial_keep_bias", c.module.initial_keep_bias);
    s.get("init_std", c.module.init_std);
    s.finish();
  }
  c.schedule.train = PruneSchedule{{1, 3, 5}, {0.5, 0.3, 0.1}};
  {
    Section s = root.child("schedule");
    s.get("layers", c.schedule.train.layers);
    s.get("ratios", c.schedule.train.ratios);
    s.get("inference_ratios", c.schedule.inference_ratios);
    s.get("tau", c.schedule.tau);
    s.finish();
  }
  {
    Section s = root.child("loss");
    s.get("lambda_causal", c.loss.lambda_causal);
    s.get("lambda_ratio", c.loss.lambda_ratio);
    s.get_enum("ratio_kind", c.loss.ratio_kind, {{"mse", RatioLossKind::kMse}, {"huber", RatioLossKind::kHuber}});
    s.get("huber_beta", c.loss.huber_beta);
    s.finish();
  }
  {
    Section s = root.child("pretrain");
    s.get("from_checkpoint", c.pretrain.from_checkpoint);
    Section o = s.child("optimizer");
    read_optimizer(std::move(o), c.pretrain.optimizer);
    s.finish();
  }
  read_optimizer(root.child("optimizer"), c.optimizer);
  {
    Section s = root.child("trainer");
    s.get("micro_batch", c.trainer.micro_batch);
    s.get("threads", c.trainer.threads);
    s.finish();
  }
  {
    Section s = root.child("data");
    SyntheticSpec& t = c.data.task;
    s.get("vision_tokens", t.vision_tokens);
    s.get("patch_dim", t.patch_dim);
    s.get("classes", t.classes);
    s.get("informative", t.informative);
    s.get("groups", t.groups);
    s.get("train_samples", t.samples);
    s.get("eval_samples", c.data.eval_samples);
    s.get("noise_std", t.noise_std);
    s.get("seed", c.data.seed);
    s.finish();
  }
  if (root.has("cost")) c.cost = read_cost(root.child("cost"));
  {
    Section s = root.child("output");
    s.get("checkpoint", c.output.checkpoint);
    s.get("metrics", c.output.metrics);
    s.get("report", c.output.report);
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["model"] = {{"depth", c.model.depth},
                {"d_model", c.model.d_model},
                {"heads", c.model.heads},
                {"ffn", c.model.ffn},
                {"vocab", c.model.vocab},
                {"max_positions", c.model.max_positions},
                {"vision_tokens", c.model.vision_tokens},
                {"vision_dim", c.model.vision_dim},
                {"position_encoding",
                 c.model.position_encoding == PositionEncoding::kRotary ? "rotary" : "learned"},
                {"rotary_base", c.model.rotary_base},
                {"norm_eps", c.model.norm_eps},
                {"init_std", c.model.init_std}};
  j["module"] = {{"blocks", c.module.blocks},
                 {"heads", c.module.heads},
                 {"norm_eps", c.module.norm_eps},
                 {"initial_keep_bias", c.module.initial_keep_bias},
                 {"init_std", c.module.init_std}};
  j["schedule"] = {{"layers", c.schedule.train.layers},
                   {"ratios", c.schedule.train.ratios},
                   {"inference_ratios", c.schedule.inference_ratios},
                   {"tau", c.schedule.tau}};
  j["loss"] = {{"lambda_causal", c.loss.lambda_causal},
               {"lambda_ratio", c.loss.lambda_ratio},
               {"ratio_kind", c.loss.ratio_kind == RatioLossKind::kMse ? "mse" : "huber"},
               {"huber_beta", c.loss.huber_beta}};
  j["pretrain"] = {{"from_checkpoint", c.pretrain.from_checkpoint},
                   {"optimizer", write_optimizer(c.pretrain.optimizer)}};
  j["optimizer"] = write_optimizer(c.optimizer);
  j["trainer"] = {{"micro_batch", c.trainer.micro_batch}, {"threads", c.trainer.threads}};
  const SyntheticSpec& t = c.data.task;
  j["data"] = {{"vision_tokens", t.vision_tokens},
               {"patch_dim", t.patch_dim},
               {"classes", t.classes},
               {"informative", t.informative},
               {"groups", t.groups},
               {"train_samples", t.samples},
               {"eval_samples", c.data.eval_samples},
               {"noise_std", t.noise_std},
               {"seed", c.data.seed}};
  if (c.cost) j["cost"] = write_cost(*c.cost);
  j["output"] = {{"checkpoint", c.output.checkpoint}, {"metrics", c.output.metrics}, {"report", c.output.report}};
  return j.dump(2) + "\n";
}

ArchitectureSpec toy_architecture(const ToyMllmConfig& model, const DecisionModuleConfig& module) {
  ArchitectureSpec a;
  a.decoder = TransformerSpec{model.depth, model.d_model, model.heads, model.ffn, FfnKind::kPlain, model.vocab};
  a.vision.layers = 0;
  a.vision.d = model.vision_dim;
  a.connector.widths = {model.vision_dim, model.d_model};
  a.module = DecisionModuleSpec{module.blocks, module.heads, model.d_model};
  return a;
}

}  // namespace lvprune
