#pragma once

#include <cstdint>
#include <ostream>
#include <string>

namespace lvprune {

// One JSON object per line with the fields command, step, metric, value.
class MetricsWriter {
 public:
  MetricsWriter(std::ostream& out, std::string command) : out_(out), command_(std::move(command)) {}

  void write(std::uint64_t step, const std::string& metric, double value);

 private:
  std::ostream& out_;
  std::string command_;
};

}  // namespace lvprune
