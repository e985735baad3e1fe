#include "lvprune/numerics/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace lvprune {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

SeededRng::SeededRng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), engine_(splitmix64(seed ^ splitmix64(stream + 0x5851f42d4c957f2dull))) {}

std::uint64_t SeededRng::next_u64() {
  ++draws_;
  return engine_();
}

double SeededRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

// No cached second variate: the stream state is fully described by the
// draw count, which is what checkpoints record.
double SeededRng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  return r * std::cos(theta);
}

std::uint64_t SeededRng::below(std::uint64_t n) {
  if (n == 0) throw Error("SeededRng::below: empty range");
  // Rejection sampling keeps the result unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

SeededRng SeededRng::fork(std::uint64_t child) const {
  return SeededRng(splitmix64(seed_ ^ 0xa0761d6478bd642full), splitmix64(stream_) ^ splitmix64(child));
}

void SeededRng::discard(std::uint64_t n) {
  engine_.discard(n);
  draws_ += n;
}

Tensor sample_gumbel(Eigen::Index rows, Eigen::Index cols, SeededRng& rng) {
  Tensor out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    const double u = std::clamp(rng.uniform(), kGumbelClamp, 1.0 - kGumbelClamp);
    out.data()[i] = -std::log(-std::log(u));
  }
  return out;
}

Tensor sample_normal(Eigen::Index rows, Eigen::Index cols, double stddev, SeededRng& rng) {
  Tensor out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = stddev * rng.normal();
  return out;
}

}  // namespace lvprune
