#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "lvprune/io/config.hpp"
#include "lvprune/training/trainer.hpp"

namespace lvprune {

enum ExitCode : int { kExitOk = 0, kExitCheckFailed = 1, kExitInvalidInput = 2 };

struct FlopsOptions {
  std::optional<double> rho;
  // "lo:hi:step"
  std::optional<std::string> sweep;
  bool baseline = false;
  // Print the JSON report instead of the table.
  bool json = false;
};

struct EvalOptions {
  std::vector<EvalMode> modes;
  // One list per setting; a single value applies to every stage.
  std::vector<std::vector<double>> ratios;
  std::string checkpoint;
  bool json = false;
};

struct VerifyOptions {
  std::string checkpoint;
};

// Each command prints a table (or JSON) to `out`, writes the report and
// metrics files named in cfg.output, and returns an exit code. Invalid input
// is reported by throwing lvprune::Error.
int cmd_flops(const RunConfig& cfg, const FlopsOptions& options, std::ostream& out);
int cmd_train(const RunConfig& cfg, std::ostream& out);
int cmd_verify(const RunConfig& cfg, const VerifyOptions& options, std::ostream& out);
int cmd_eval(const RunConfig& cfg, const EvalOptions& options, std::ostream& out);

// "0.5,0.3,0.1" -> {0.5, 0.3, 0.1}; a single value is repeated `stages` times.
std::vector<double> parse_ratio_list(const std::string& text, std::size_t stages);

EvalMode parse_eval_mode(const std::string& name);

}  // namespace lvprune
