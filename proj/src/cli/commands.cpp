#include "lvprune/cli/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

#include <json.hpp>

#include "lvprune/cli/checks.hpp"
#include "lvprune/io/checkpoint.hpp"
#include "lvprune/io/metrics.hpp"

namespace lvprune {

using json = nlohmann::ordered_json;

namespace {

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string join(const std::vector<double>& v, int digits) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : ",") + fixed(x, digits);
  return s;
}

// Plain left-aligned text table.
class Table {
 public:
  explicit Table(std::vector<std::string> header) { rows_.push_back(std::move(header)); }
  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }
  void print(std::ostream& out) const {
    std::vector<std::size_t> width;
    for (const auto& row : rows_) {
      width.resize(std::max(width.size(), row.size()), 0);
      for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
    }
    for (std::size_t r = 0; r < rows_.size(); ++r) {
      for (std::size_t c = 0; c < rows_[r].size(); ++c) {
        if (c + 1 < rows_[r].size()) {
          out << std::left << std::setw(static_cast<int>(width[c]) + 2) << rows_[r][c];
        } else {
          out << rows_[r][c];
        }
      }
      out << '\n';
      if (r == 0) {
        std::size_t total = 0;
        for (std::size_t w : width) total += w + 2;
        out << std::string(total - 2, '-') << '\n';
      }
    }
  }

 private:
  std::vector<std::vector<std::string>> rows_;
};

std::unique_ptr<std::ofstream> open_output(const std::string& path) {
  if (path.empty()) return nullptr;
  auto f = std::make_unique<std::ofstream>(path, std::ios::trunc);
  if (!*f) throw ConfigError("cannot open output file " + path);
  return f;
}

void write_report(const std::string& path, const json& report) {
  if (auto f = open_output(path)) *f << report.dump(2) << '\n';
}

// Discards records when no metrics path is configured.
class Metrics {
 public:
  Metrics(const std::string& path, const std::string& command)
      : file_(open_output(path)), writer_(file_ ? static_cast<std::ostream&>(*file_) : null_, command) {}
  void write(std::uint64_t step, const std::string& metric, double value) {
    if (file_) writer_.write(step, metric, value);
  }

 private:
  std::unique_ptr<std::ofstream> file_;
  std::ostringstream null_;
  MetricsWriter writer_;
};

json cost_json(const CostReport& r) {
  return {{"vision_encoder", r.vision_encoder},
          {"connector", r.connector},
          {"decoder", r.decoder},
          {"modules", r.modules},
          {"total", r.total},
          {"total_tflops", r.total / 1e12},
          {"baseline", r.baseline},
          {"reduction", r.reduction},
          {"layer_tokens", r.layer_tokens},
          {"decoder_layers", r.decoder_layers},
          {"module_queries", r.module_queries},
          {"decision_modules", r.decision_modules}};
}

void print_breakdown(const CostReport& r, std::ostream& out) {
  Table t({"segment", "tokens", "TFLOPs"});
  t.add({"vision encoder", "", fixed(r.vision_encoder / 1e12, 4)});
  t.add({"connector", "", fixed(r.connector / 1e12, 4)});
  std::size_t module = 0;
  std::size_t start = 0;
  for (std::size_t l = 0; l <= r.layer_tokens.size(); ++l) {
    const bool boundary = l == r.layer_tokens.size() || r.layer_tokens[l] != r.layer_tokens[start];
    if (!boundary) continue;
    double sum = 0.0;
    for (std::size_t k = start; k < l; ++k) sum += r.decoder_layers[k];
    const std::string span = l - start == 1 ? std::to_string(start) : std::to_string(start) + "-" + std::to_string(l - 1);
    t.add({"decoder layers " + span, std::to_string(r.layer_tokens[start]), fixed(sum / 1e12, 4)});
    if (l < r.layer_tokens.size() && module < r.decision_modules.size()) {
      t.add({"decision module " + std::to_string(module), std::to_string(r.module_queries[module]),
             fixed(r.decision_modules[module] / 1e12, 4)});
      ++module;
    }
    start = l;
  }
  t.add({"total", "", fixed(r.total / 1e12, 4)});
  t.print(out);
}

CostConfig require_cost(const RunConfig& cfg) {
  if (!cfg.cost) throw ConfigError("cost: section missing from config");
  return *cfg.cost;
}

std::tuple<double, double, double> parse_sweep(const std::string& text) {
  std::vector<double> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ':')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ConfigError("--sweep: expected lo:hi:step, got " + text);
    parts.push_back(v);
  }
  if (parts.size() != 3) throw ConfigError("--sweep: expected lo:hi:step, got " + text);
  return {parts[0], parts[1], parts[2]};
}

ToyMllm build_model(const RunConfig& cfg) {
  return ToyMllm::init(cfg.model, cfg.module, static_cast<int>(cfg.schedule.train.stages()), cfg.seed);
}

const char* mode_name(EvalMode m) {
  switch (m) {
    case EvalMode::kMasked:
      return "masked";
    case EvalMode::kPruned:
      return "pruned";
    case EvalMode::kRandom:
      return "random";
  }
  return "?";
}

}  // namespace

std::vector<double> parse_ratio_list(const std::string& text, std::size_t stages) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ConfigError("--rho: not a number: '" + item + "'");
    out.push_back(v);
  }
  if (out.size() == 1) out.assign(stages, out.front());
  if (out.size() != stages) {
    throw ConfigError("--rho: " + std::to_string(out.size()) + " ratios for " + std::to_string(stages) + " stages");
  }
  return out;
}

EvalMode parse_eval_mode(const std::string& name) {
  if (name == "masked") return EvalMode::kMasked;
  if (name == "pruned") return EvalMode::kPruned;
  if (name == "random") return EvalMode::kRandom;
  throw ConfigError("--mode must be masked, pruned or random (got " + name + ")");
}

int cmd_flops(const RunConfig& cfg, const FlopsOptions& options, std::ostream& out) {
  const CostConfig cost = require_cost(cfg);
  Metrics metrics(cfg.output.metrics, "flops");
  json report;
  report["command"] = "flops";
  const double overhead = decision_module_overhead(cost.arch, cost.input, cost.layers);

  if (options.sweep) {
    const auto [lo, hi, step] = parse_sweep(*options.sweep);
    const Sweep sweep = reduction_sweep(cost.arch, cost.input, cost.layers, lo, hi, step);
    json rows = json::array();
    Table t({"rho", "ratios", "TFLOPs", "reduction"});
    for (std::size_t i = 0; i < sweep.points.size(); ++i) {
      const SweepPoint& p = sweep.points[i];
      const std::vector<double> ratios = stepped_ratios(p.rho, cost.layers.size());
      json row = cost_json(p.report);
      row["rho"] = p.rho;
      row["ratios"] = ratios;
      rows.push_back(row);
      t.add({fixed(p.rho, 3), join(ratios, 2), fixed(p.report.total / 1e12, 3),
             fixed(100.0 * p.report.reduction, 1) + "%"});
      metrics.write(i, "total_tflops", p.report.total / 1e12);
      metrics.write(i, "reduction", p.report.reduction);
    }
    report["sweep"] = rows;
    report["skipped"] = sweep.skipped;
    report["module_overhead"] = overhead;
    if (options.json) {
      out << report.dump(2) << '\n';
    } else {
      t.print(out);
      for (double rho : sweep.skipped) out << "skipped rho " << fixed(rho, 3) << " (a stage ratio leaves (0, 1])\n";
    }
  } else if (options.baseline) {
    const CostReport r = pipeline_flops(cost.arch, cost.input, std::nullopt);
    report["baseline"] = cost_json(r);
    metrics.write(0, "total_tflops", r.total / 1e12);
    if (options.json) {
      out << report.dump(2) << '\n';
    } else {
      out << "baseline (" << cost.input.vision_tokens << " vision + " << cost.input.text_tokens
          << " text tokens)\n";
      print_breakdown(r, out);
    }
  } else {
    const double rho = options.rho.value_or(cost.rho);
    const std::vector<double> ratios = stepped_ratios(rho, cost.layers.size());
    const CostReport r = pipeline_flops(cost.arch, cost.input, PruneSchedule{cost.layers, ratios}, ratios);
    report["rho"] = rho;
    report["ratios"] = ratios;
    report["pruned"] = cost_json(r);
    report["module_overhead"] = overhead;
    metrics.write(0, "total_tflops", r.total / 1e12);
    metrics.write(0, "reduction", r.reduction);
    metrics.write(0, "module_overhead_tflops", overhead / 1e12);
    if (options.json) {
      out << report.dump(2) << '\n';
    } else {
      out << "ratios " << join(ratios, 2) << " after layers";
      for (int l : cost.layers) out << ' ' << l;
      out << '\n';
      print_breakdown(r, out);
      out << "baseline " << fixed(r.baseline / 1e12, 4) << " TFLOPs, reduction " << fixed(100.0 * r.reduction, 1)
          << "%, decision-module overhead " << fixed(overhead / 1e12, 4) << " TFLOPs\n";
    }
  }
  write_report(cfg.output.report, report);
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  ToyMllm model = build_model(cfg);
  const std::vector<SyntheticSample> train = cfg.data.train_set();
  Metrics metrics(cfg.output.metrics, "train");
  TrainerOptions options;
  options.tau = cfg.schedule.tau;
  options.micro_batch = cfg.trainer.micro_batch;
  options.threads = cfg.trainer.threads;

  if (!cfg.pretrain.from_checkpoint.empty()) {
    ToyMllm loaded = model;
    load_checkpoint(cfg.pretrain.from_checkpoint, loaded);
    model.backbone = loaded.backbone;
    out << "backbone loaded from " << cfg.pretrain.from_checkpoint << '\n';
  } else {
    out << "phase A: pretraining the backbone on " << train.size() << " samples\n";
    options.on_epoch = [&](const EpochMetrics& m) {
      metrics.write(m.step, "pretrain.causal_loss", m.causal_loss);
      metrics.write(m.step, "pretrain.accuracy", m.accuracy);
      metrics.write(m.step, "pretrain.grad_norm", m.grad_norm);
      out << "  epoch " << m.epoch << " step " << m.step << " loss " << fixed(m.causal_loss, 4) << " acc "
          << fixed(m.accuracy, 3) << '\n';
    };
    pretrain_backbone(model, train, cfg.pretrain.optimizer, cfg.seed, options);
  }

  out << "phase B: training " << model.modules.size() << " decision modules (targets "
      << join(cfg.schedule.train.ratios, 2) << ")\n";
  std::vector<double> final_keep;
  options.on_epoch = [&](const EpochMetrics& m) {
    metrics.write(m.step, "train.causal_loss", m.causal_loss);
    metrics.write(m.step, "train.ratio_loss", m.ratio_loss);
    metrics.write(m.step, "train.total_loss", m.total_loss);
    metrics.write(m.step, "train.accuracy", m.accuracy);
    metrics.write(m.step, "train.grad_norm", m.grad_norm);
    metrics.write(m.step, "train.lr", m.lr);
    for (std::size_t s = 0; s < m.keep_fractions.size(); ++s) {
      metrics.write(m.step, "train.keep_fraction." + std::to_string(s), m.keep_fractions[s]);
    }
    out << "  epoch " << m.epoch << " step " << m.step << " causal " << fixed(m.causal_loss, 4) << " ratio "
        << fixed(m.ratio_loss, 5) << " keep " << join(m.keep_fractions, 3) << '\n';
    final_keep = m.keep_fractions;
  };
  train_decision_modules(model, train, cfg.schedule.train, cfg.loss, cfg.optimizer, cfg.seed, options);

  Table t({"stage", "layer", "target", "realized"});
  for (std::size_t s = 0; s < cfg.schedule.train.stages(); ++s) {
    t.add({std::to_string(s), std::to_string(cfg.schedule.train.layers[s]), fixed(cfg.schedule.train.ratios[s], 3),
           s < final_keep.size() ? fixed(final_keep[s], 3) : "-"});
  }
  t.print(out);
  if (!cfg.output.checkpoint.empty()) {
    save_checkpoint(cfg.output.checkpoint, model, SeededRng(cfg.seed, 0));
    out << "checkpoint written to " << cfg.output.checkpoint << '\n';
  }
  json report;
  report["command"] = "train";
  report["targets"] = cfg.schedule.train.ratios;
  report["keep_fractions"] = final_keep;
  report["backbone_checksum"] = backbone_checksum(model);
  write_report(cfg.output.report, report);
  return kExitOk;
}

int cmd_verify(const RunConfig& cfg, const VerifyOptions& options, std::ostream& out) {
  ToyMllm model = build_model(cfg);
  const std::string path = options.checkpoint.empty() ? cfg.output.checkpoint : options.checkpoint;
  if (!options.checkpoint.empty()) {
    load_checkpoint(path, model);
  } else if (!path.empty() && std::ifstream(path).good()) {
    load_checkpoint(path, model);
  }
  const std::vector<CheckResult> results = run_verify_suite(model, cfg.schedule.train, cfg.seed);
  Metrics metrics(cfg.output.metrics, "verify");
  json report;
  report["command"] = "verify";
  json checks = json::array();
  Table t({"check", "value", "bound", "result", "detail"});
  bool all = true;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const CheckResult& r = results[i];
    all = all && r.pass;
    std::ostringstream value;
    value << std::setprecision(3) << r.value;
    std::ostringstream bound;
    bound << std::setprecision(3) << r.threshold;
    t.add({r.name, value.str(), bound.str(), r.pass ? "pass" : "FAIL", r.detail});
    checks.push_back({{"name", r.name}, {"value", r.value}, {"threshold", r.threshold}, {"pass", r.pass},
                      {"detail", r.detail}});
    metrics.write(i, "verify." + r.name, r.value);
    metrics.write(i, "verify." + r.name + ".pass", r.pass ? 1.0 : 0.0);
  }
  report["checks"] = checks;
  report["pass"] = all;
  t.print(out);
  out << (all ? "all checks passed" : "some checks FAILED") << '\n';
  write_report(cfg.output.report, report);
  return all ? kExitOk : kExitCheckFailed;
}

int cmd_eval(const RunConfig& cfg, const EvalOptions& options, std::ostream& out) {
  ToyMllm model = build_model(cfg);
  const std::string path = options.checkpoint.empty() ? cfg.output.checkpoint : options.checkpoint;
  if (path.empty()) throw ConfigError("eval: no checkpoint given (--checkpoint or output.checkpoint)");
  load_checkpoint(path, model);
  const std::vector<SyntheticSample> data = cfg.data.eval_set();
  const PruneSchedule& train_schedule = cfg.schedule.train;
  std::vector<EvalMode> modes = options.modes;
  if (modes.empty()) modes = {EvalMode::kPruned, EvalMode::kRandom};
  std::vector<std::vector<double>> settings = options.ratios;
  if (settings.empty()) settings.push_back(cfg.schedule.inference().ratios);

  const ArchitectureSpec arch = toy_architecture(cfg.model, cfg.module);
  const InputSpec input{cfg.model.vision_tokens, SyntheticSpec::kTextTokens};
  const CostReport baseline = pipeline_flops(arch, input, std::nullopt);
  Metrics metrics(cfg.output.metrics, "eval");
  json report;
  report["command"] = "eval";
  report["samples"] = data.size();
  const double plain = evaluate_accuracy(model, data, std::nullopt, EvalMode::kPruned);
  report["no_pruning"] = {{"accuracy", plain}, {"tflops", baseline.total / 1e12}};
  metrics.write(0, "eval.no_pruning.accuracy", plain);

  std::vector<std::string> header = {"ratios"};
  for (EvalMode m : modes) header.push_back(std::string(m == EvalMode::kPruned ? "learned" : mode_name(m)) + " acc");
  header.insert(header.end(), {"TFLOPs", "reduction"});
  Table t(header);
  {
    std::vector<std::string> row = {"none"};
    for (std::size_t k = 0; k < modes.size(); ++k) row.push_back(fixed(plain, 3));
    row.insert(row.end(), {fixed(baseline.total / 1e12, 6), "0.0%"});
    t.add(row);
  }
  json rows = json::array();
  for (std::size_t i = 0; i < settings.size(); ++i) {
    const PruneSchedule schedule{train_schedule.layers, settings[i]};
    schedule.validate_inference(cfg.model.depth);
    const CostReport cost = pipeline_flops(arch, input, schedule, settings[i]);
    json row;
    row["ratios"] = settings[i];
    row["tflops"] = cost.total / 1e12;
    row["reduction"] = cost.reduction;
    std::vector<std::string> cells = {join(settings[i], 2)};
    for (EvalMode m : modes) {
      // Masked decisions come from argmax, not top-k, so they follow the
      // training schedule whatever the inference ratios are.
      const double acc =
          evaluate_accuracy(model, data, m == EvalMode::kMasked ? train_schedule : schedule, m, cfg.seed);
      row[mode_name(m)] = acc;
      cells.push_back(fixed(acc, 3));
      metrics.write(i + 1, std::string("eval.") + mode_name(m) + ".accuracy", acc);
    }
    cells.insert(cells.end(), {fixed(cost.total / 1e12, 6), fixed(100.0 * cost.reduction, 1) + "%"});
    t.add(cells);
    rows.push_back(row);
  }
  report["settings"] = rows;
  if (options.json) {
    out << report.dump(2) << '\n';
  } else {
    out << data.size() << " evaluation samples\n";
    t.print(out);
  }
  write_report(cfg.output.report, report);
  return kExitOk;
}

}  // namespace lvprune
