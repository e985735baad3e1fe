#include <iostream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <CLI11.hpp>

#include "lvprune/cli/commands.hpp"

namespace {

void tune_allocator() {
#if defined(__GLIBC__)
  // The tape allocates and frees many mid-sized buffers per step; keeping
  // them off mmap and out of trim roughly halves training time.
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 128 << 20);
#endif
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Learned vision-token pruning for a toy multi-modal transformer"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run configuration")->required();
    cmd->add_option("--seed", seed, "Override every seed in the config");
  };

  lvprune::FlopsOptions flops;
  CLI::App* flops_cmd = app.add_subcommand("flops", "Analytic FLOPs of the configured architecture");
  common(flops_cmd);
  flops_cmd->add_option("--rho", flops.rho, "First-stage keep ratio (later stages step down by 0.2)");
  flops_cmd->add_option("--sweep", flops.sweep, "Sweep rho over lo:hi:step");
  flops_cmd->add_flag("--baseline", flops.baseline, "Report the unpruned model");
  flops_cmd->add_flag("--json", flops.json, "Print the JSON report");

  CLI::App* train_cmd = app.add_subcommand("train", "Pretrain the backbone, then train decision modules");
  common(train_cmd);

  lvprune::VerifyOptions verify;
  CLI::App* verify_cmd = app.add_subcommand("verify", "Run the invariant checks");
  common(verify_cmd);
  verify_cmd->add_option("--checkpoint", verify.checkpoint, "Checkpoint to check (default: output.checkpoint)");

  lvprune::EvalOptions eval;
  std::vector<std::string> modes;
  std::vector<std::string> rhos;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Accuracy of learned vs random pruning");
  common(eval_cmd);
  eval_cmd->add_option("--mode", modes, "masked, pruned or random (repeatable)");
  eval_cmd->add_option("--rho", rhos, "Inference ratios, e.g. 0.5,0.3,0.1 (repeatable)");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint to evaluate (default: output.checkpoint)");
  eval_cmd->add_flag("--json", eval.json, "Print the JSON report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? lvprune::kExitOk : lvprune::kExitInvalidInput;
  }

  try {
    lvprune::RunConfig cfg = lvprune::load_config(config_path);
    if (seed) {
      cfg.seed = *seed;
      cfg.data.seed = *seed;
    }
    if (*flops_cmd) return lvprune::cmd_flops(cfg, flops, std::cout);
    if (*train_cmd) return lvprune::cmd_train(cfg, std::cout);
    if (*verify_cmd) return lvprune::cmd_verify(cfg, verify, std::cout);
    for (const std::string& m : modes) eval.modes.push_back(lvprune::parse_eval_mode(m));
    for (const std::string& r : rhos) {
      eval.ratios.push_back(lvprune::parse_ratio_list(r, cfg.schedule.train.stages()));
    }
    return lvprune::cmd_eval(cfg, eval, std::cout);
  } catch (const lvprune::DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return lvprune::kExitCheckFailed;
  } catch (const lvprune::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return lvprune::kExitInvalidInput;
  }
}
