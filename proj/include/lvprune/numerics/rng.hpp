#pragma once

#include <cstdint>
#include <random>

#include "lvprune/numerics/tensor.hpp"

namespace lvprune {

std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Deterministic random stream keyed by (seed, stream). Only the raw 64-bit
// output of std::mt19937_64 is used; every derived distribution is computed
// here so draws are identical across standard libraries and platforms.
class SeededRng {
 public:
  SeededRng(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::uint64_t draws() const noexcept { return draws_; }

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Standard normal via Box-Muller.
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  // Derive an independent child stream, e.g. one per sample.
  SeededRng fork(std::uint64_t child) const;

  // Advance past `n` draws; used when restoring a checkpointed stream.
  void discard(std::uint64_t n);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t draws_ = 0;
  std::mt19937_64 engine_;
};

inline constexpr double kGumbelClamp = 1e-10;

// i.i.d. standard Gumbel draws -log(-log(u)), u clamped to [1e-10, 1 - 1e-10].
Tensor sample_gumbel(Eigen::Index rows, Eigen::Index cols, SeededRng& rng);

Tensor sample_normal(Eigen::Index rows, Eigen::Index cols, double stddev, SeededRng& rng);

}  // namespace lvprune
