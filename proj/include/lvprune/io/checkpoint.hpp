#pragma once

#include <cstdint>
#include <string>

#include "lvprune/model/toy_mllm.hpp"

namespace lvprune {

// Binary layout, all integers and reals little-endian:
//   "LVPR" | u32 version | u64 fingerprint | u64 rng seed | u64 rng stream |
//   u64 rng draws | u32 tensor count |
//   per tensor: u32 name length | name | u64 rows | u64 cols | f64 values (row-major)
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  std::uint32_t version = 0;
  std::uint64_t fingerprint = 0;
  std::uint64_t rng_seed = 0;
  std::uint64_t rng_stream = 0;
  std::uint64_t rng_draws = 0;
};

void save_checkpoint(const std::string& path, const ToyMllm& model, const SeededRng& rng);

CheckpointHeader read_checkpoint_header(const std::string& path);

// Fills `model` (already built with the expected architecture) from the
// file. The fingerprint is compared before any tensor is read. Returns the
// stored random stream, advanced to its saved position.
SeededRng load_checkpoint(const std::string& path, ToyMllm& model);

}  // namespace lvprune
