#include "lvprune/io/metrics.hpp"

#include <json.hpp>

namespace lvprune {

void MetricsWriter::write(std::uint64_t step, const std::string& metric, double value) {
  nlohmann::ordered_json j;
  j["command"] = command_;
  j["step"] = step;
  j["metric"] = metric;
  j["value"] = value;
  out_ << j.dump() << '\n';
}

}  // namespace lvprune
