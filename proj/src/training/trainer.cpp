#include "lvprune/training/trainer.hpp"

#include <cmath>
#include <cstring>
#include <numeric>
#include <thread>

namespace lvprune {

namespace {

struct SampleStats {
  double causal = 0.0;
  double ratio = 0.0;
  std::vector<double> fractions;
  bool correct = false;
};

// Summed gradients and per-sample statistics of one micro-batch.
struct ChunkResult {
  std::vector<Tensor> grads;
  std::vector<SampleStats> stats;
};

int argmax_row(const Tensor& logits, Eigen::Index row) {
  Eigen::Index best = 0;
  logits.row(row).maxCoeff(&best);
  return static_cast<int>(best);
}

// All samples of a chunk share one tape and one set of parameter leaves, so
// parameter gradients accumulate in place across samples.
ChunkResult pretrain_chunk(const ToyMllm& model, std::span<const SyntheticSample* const> samples) {
  ad::Tape tape;
  BackboneVars backbone = bind(tape, model.backbone, true);
  SeededRng unused(0, 0);
  ChunkResult out;
  ad::Var sum_loss;
  for (const SyntheticSample* sample : samples) {
    MaskedForward fwd = forward_masked(tape, backbone, {}, model.config, model.module_config, sample->input,
                                       PruneSchedule{}, MaskedForwardOptions{}, unused);
    const int row = sample->answer_row();
    const int rows[] = {row};
    const int targets[] = {sample->target};
    ad::Var loss = causal_lm_loss(fwd.logits, rows, targets);
    sum_loss = sum_loss.valid() ? ad::add(sum_loss, loss) : loss;
    SampleStats st;
    st.causal = loss.scalar();
    st.correct = argmax_row(fwd.logits.value(), row) == sample->target;
    out.stats.push_back(std::move(st));
  }
  tape.backward(sum_loss);
  BackboneVars::visit(backbone, "", [&](const std::string&, const ad::Var& v) {
    out.grads.push_back(tape.take_grad(v));
  });
  return out;
}

ChunkResult module_chunk(const ToyMllm& model, std::span<const SyntheticSample* const> samples,
                         std::span<SeededRng> rngs, const PruneSchedule& schedule, const LossConfig& loss_cfg,
                         double tau) {
  ad::Tape tape;
  BackboneVars backbone = bind(tape, model.backbone, false);
  std::vector<DecisionModuleVars> modules;
  for (const auto& m : model.modules) modules.push_back(bind(tape, m, true));
  MaskedForwardOptions options;
  options.tau = tau;
  ChunkResult out;
  ad::Var sum_loss;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SyntheticSample& sample = *samples[i];
    MaskedForward fwd = forward_masked(tape, backbone, modules, model.config, model.module_config, sample.input,
                                       schedule, options, rngs[i]);
    const int row = sample.answer_row();
    const int rows[] = {row};
    const int targets[] = {sample.target};
    ad::Var causal = causal_lm_loss(fwd.logits, rows, targets);
    ad::Var ratio = ratio_loss(fwd.decisions, schedule.ratios, loss_cfg);
    ad::Var total = total_loss(causal, ratio, loss_cfg);
    sum_loss = sum_loss.valid() ? ad::add(sum_loss, total) : total;
    SampleStats st;
    st.causal = causal.scalar();
    st.ratio = ratio.scalar();
    for (const ad::Var& d : fwd.decisions) st.fractions.push_back(d.value().mean());
    st.correct = argmax_row(fwd.logits.value(), row) == sample.target;
    out.stats.push_back(std::move(st));
  }
  tape.backward(sum_loss);
  for (auto& m : modules) {
    DecisionModuleVars::visit(m, "", [&](const std::string&, const ad::Var& v) { out.grads.push_back(tape.take_grad(v)); });
  }
  return out;
}

// Runs `fn(i)` for i in [0, n) on up to `threads` workers; each index writes
// only its own slot.
template <typename F>
void parallel_for(std::size_t n, int threads, F&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct EpochAccumulator {
  double causal = 0.0, ratio = 0.0, total = 0.0, correct = 0.0, grad_norm = 0.0, lr = 0.0;
  std::vector<double> fractions;
  std::size_t samples = 0, steps = 0;

  EpochMetrics finish(int epoch, std::size_t step) const {
    EpochMetrics m;
    m.epoch = epoch;
    m.step = step;
    const double n = static_cast<double>(std::max<std::size_t>(samples, 1));
    m.causal_loss = causal / n;
    m.ratio_loss = ratio / n;
    m.total_loss = total / n;
    m.accuracy = correct / n;
    for (double f : fractions) m.keep_fractions.push_back(f / n);
    m.grad_norm = grad_norm / static_cast<double>(std::max<std::size_t>(steps, 1));
    m.lr = lr;
    return m;
  }
};

// Shared loop: epoch-wise shuffling, batching, reduction, clipping, update.
template <typename ChunkFn>
std::vector<EpochMetrics> run_loop(std::vector<Tensor*> params, const std::vector<SyntheticSample>& data,
                                   const OptimizerConfig& opt, const LossConfig* loss_cfg, std::uint64_t seed,
                                   const TrainerOptions& options, ChunkFn&& chunk_fn) {
  opt.validate();
  if (data.empty()) throw DegenerateLossError("training: empty dataset");
  const std::size_t batch = std::min(opt.batch_size, data.size());
  const std::size_t steps_per_epoch = (data.size() + batch - 1) / batch;
  const SeededRng root(seed, 0x7a1);
  Optimizer optimizer(opt);
  std::vector<EpochMetrics> history;

  std::vector<std::size_t> order(data.size());
  EpochAccumulator acc;
  int epoch = 0;
  for (std::size_t step = 0; step < opt.total_steps; ++step) {
    const std::size_t in_epoch = step % steps_per_epoch;
    if (in_epoch == 0) {
      std::iota(order.begin(), order.end(), 0);
      SeededRng shuffle_rng = root.fork(static_cast<std::uint64_t>(epoch));
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }
    const std::size_t begin = in_epoch * batch;
    const std::size_t count = std::min(batch, data.size() - begin);

    const std::size_t chunk = options.micro_batch > 0 ? static_cast<std::size_t>(options.micro_batch) : count;
    const std::size_t chunks = (count + chunk - 1) / chunk;
    std::vector<ChunkResult> results(chunks);
    parallel_for(chunks, options.threads, [&](std::size_t c) {
      const std::size_t lo = c * chunk;
      const std::size_t hi = std::min(count, lo + chunk);
      std::vector<const SyntheticSample*> samples;
      std::vector<SeededRng> rngs;
      for (std::size_t i = lo; i < hi; ++i) {
        samples.push_back(&data[order[begin + i]]);
        rngs.push_back(root.fork(0x100000000ull + step).fork(i));
      }
      results[c] = chunk_fn(samples, rngs);
    });

    std::vector<Tensor> grads = std::move(results[0].grads);
    for (std::size_t c = 1; c < chunks; ++c) {
      for (std::size_t p = 0; p < grads.size(); ++p) {
        if (grads[p].size() != 0) grads[p] += results[c].grads[p];
      }
    }
    const double inv = 1.0 / static_cast<double>(count);
    for (Tensor& g : grads) g *= inv;

    double step_total = 0.0;
    for (const ChunkResult& c : results) {
      for (const SampleStats& r : c.stats) {
        if (acc.fractions.empty()) acc.fractions.assign(r.fractions.size(), 0.0);
        const double t = loss_cfg != nullptr ? total_loss(r.causal, r.ratio, *loss_cfg) : r.causal;
        step_total += t;
        acc.causal += r.causal;
        acc.ratio += r.ratio;
        acc.total += t;
        acc.correct += r.correct ? 1.0 : 0.0;
        for (std::size_t s = 0; s < r.fractions.size(); ++s) acc.fractions[s] += r.fractions[s];
      }
    }
    acc.samples += count;
    if (!std::isfinite(step_total)) throw DivergenceError(step, "non-finite loss");
    for (const Tensor& g : grads) {
      if (!all_finite(g)) throw DivergenceError(step, "non-finite gradient");
    }

    const double lr = lr_at(step, opt);
    acc.grad_norm += clip_grad_norm(grads, opt.max_grad_norm);
    acc.lr = lr;
    ++acc.steps;
    optimizer.step(params, grads, lr);

    if (in_epoch + 1 == steps_per_epoch || step + 1 == opt.total_steps) {
      history.push_back(acc.finish(epoch, step + 1));
      if (options.on_epoch) options.on_epoch(history.back());
      acc = EpochAccumulator{};
      ++epoch;
    }
  }
  return history;
}

}  // namespace

std::vector<EpochMetrics> pretrain_backbone(ToyMllm& model, const std::vector<SyntheticSample>& data,
                                            const OptimizerConfig& opt, std::uint64_t seed,
                                            const TrainerOptions& options) {
  std::vector<Tensor*> params;
  BackboneParams::visit(model.backbone, "", [&](const std::string&, Tensor& t) { params.push_back(&t); });
  return run_loop(std::move(params), data, opt, nullptr, seed, options,
                  [&](std::span<const SyntheticSample* const> s, std::span<SeededRng>) {
                    return pretrain_chunk(model, s);
                  });
}

std::vector<EpochMetrics> train_decision_modules(ToyMllm& model, const std::vector<SyntheticSample>& data,
                                                 const PruneSchedule& schedule, const LossConfig& loss,
                                                 const OptimizerConfig& opt, std::uint64_t seed,
                                                 const TrainerOptions& options) {
  schedule.validate(model.config.depth);
  loss.validate();
  if (model.modules.size() != schedule.stages()) {
    throw DimensionError("train_decision_modules: " + std::to_string(model.modules.size()) +
                         " modules for " + std::to_string(schedule.stages()) + " stages");
  }
  std::vector<Tensor*> params;
  for (auto& m : model.modules) {
    DecisionModuleParams::visit(m, "", [&](const std::string&, Tensor& t) { params.push_back(&t); });
  }
  return run_loop(std::move(params), data, opt, &loss, seed, options,
                  [&](std::span<const SyntheticSample* const> s, std::span<SeededRng> rngs) {
                    return module_chunk(model, s, rngs, schedule, loss, options.tau);
                  });
}

double evaluate_accuracy(const ToyMllm& model, const std::vector<SyntheticSample>& data,
                         const std::optional<PruneSchedule>& schedule, EvalMode mode, std::uint64_t seed) {
  if (data.empty()) return 0.0;
  const SeededRng root(seed, 0xe7a1);
  std::size_t correct = 0;
  for (std::size_t n = 0; n < data.size(); ++n) {
    const SyntheticSample& s = data[n];
    int predicted = -1;
    if (!schedule) {
      const ForwardTrace t = forward_plain(model, s.input);
      predicted = argmax_row(t.logits, s.answer_row());
    } else if (mode == EvalMode::kMasked) {
      SeededRng unused(0, 0);
      const ForwardTrace t = forward_train(model, s.input, *schedule, 1.0, unused, DecisionMode::kEval);
      predicted = argmax_row(t.logits, s.answer_row());
    } else {
      SeededRng rng = root.fork(n);
      InferOptions options;
      if (mode == EvalMode::kRandom) options.random_scores = &rng;
      const ForwardTrace t = forward_infer(model, s.input, *schedule, options);
      predicted = argmax_row(t.logits, t.logits.rows() - 1);
    }
    if (predicted == s.target) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::uint64_t backbone_checksum(const ToyMllm& model) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  BackboneParams::visit(model.backbone, "", [&](const std::string& name, const Tensor& t) {
    for (char c : name) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ull;
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(t.size()) * sizeof(double); ++i) {
      h = (h ^ bytes[i]) * 0x100000001b3ull;
    }
  });
  return h;
}

}  // namespace lvprune
