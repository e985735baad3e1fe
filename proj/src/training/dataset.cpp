#include "lvprune/training/dataset.hpp"

#include <algorithm>
#include <numeric>

namespace lvprune {

void SyntheticSpec::validate() const {
  if (vision_tokens < 2) throw ConfigError("data: vision_tokens must be at least 2");
  if (classes < 2) throw ConfigError("data: classes must be at least 2");
  if (groups < 1) throw ConfigError("data: groups must be positive");
  if (informative < 1 || informative >= vision_tokens) {
    throw ConfigError("data: informative must be in [1, vision_tokens)");
  }
  if (groups * informative > vision_tokens) throw ConfigError("data: groups * informative exceeds vision_tokens");
  if (patch_dim < groups + classes) throw ConfigError("data: patch_dim must hold the group and class one-hots");
  if (samples < 1) throw ConfigError("data: samples must be positive");
  if (noise_std < 0.0) throw ConfigError("data: noise_std must be nonnegative");
}

int synthetic_label(const SyntheticSpec& spec, const std::vector<int>& informative,
                    const std::vector<int>& patch_class) {
  if (informative.empty()) throw DimensionError("synthetic_label: no informative patches");
  const int c = patch_class[static_cast<std::size_t>(informative.front())];
  for (int idx : informative) {
    if (patch_class[static_cast<std::size_t>(idx)] != c) throw DimensionError("synthetic_label: group classes differ");
  }
  if (c < 0 || c >= spec.classes) throw DimensionError("synthetic_label: class out of range");
  return c;
}

std::vector<SyntheticSample> make_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<std::size_t>(spec.samples));
  const SeededRng root(seed, 0x5e7);
  const auto V = static_cast<std::size_t>(spec.vision_tokens);
  for (int n = 0; n < spec.samples; ++n) {
    SeededRng rng = root.fork(static_cast<std::uint64_t>(n));
    SyntheticSample s;
    std::vector<int> order(V);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = V; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    s.patch_group.assign(V, -1);
    for (int g = 0; g < spec.groups; ++g) {
      for (int k = 0; k < spec.informative; ++k) {
        s.patch_group[static_cast<std::size_t>(order[static_cast<std::size_t>(g * spec.informative + k)])] = g;
      }
    }
    std::vector<int> group_class(static_cast<std::size_t>(spec.groups));
    for (int& c : group_class) c = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.classes)));
    s.patch_class.assign(V, -1);
    for (std::size_t v = 0; v < V; ++v) {
      if (s.patch_group[v] >= 0) s.patch_class[v] = group_class[static_cast<std::size_t>(s.patch_group[v])];
    }
    s.group = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.groups)));
    for (std::size_t v = 0; v < V; ++v) {
      if (s.patch_group[v] == s.group) s.informative.push_back(static_cast<int>(v));
    }

    Tensor patches = sample_normal(spec.vision_tokens, spec.patch_dim, spec.noise_std, rng);
    for (std::size_t v = 0; v < V; ++v) {
      const auto row = static_cast<Eigen::Index>(v);
      if (s.patch_group[v] < 0) continue;
      patches(row, s.patch_group[v]) += 1.0;
      patches(row, spec.groups + s.patch_class[v]) += 1.0;
    }
    s.input.patches = std::move(patches);
    s.input.text_ids = {spec.prompt_token(s.group), spec.query_token()};
    s.input.text_before = 1;
    s.target = synthetic_label(spec, s.informative, s.patch_class);
    out.push_back(std::move(s));
  }
  return out;
}

int decode_label(const SyntheticSpec& spec, const ModelInput& input) {
  const int group = input.text_ids.at(0) - spec.prompt_token(0);
  // Votes over the prompted group's patches; they all carry the same class.
  Eigen::VectorXd votes = Eigen::VectorXd::Zero(spec.classes);
  for (Eigen::Index v = 0; v < input.patches.rows(); ++v) {
    const auto block = input.patches.row(v).head(spec.groups);
    Eigen::Index g = 0;
    if (block.maxCoeff(&g) < 0.5 || g != group) continue;
    Eigen::Index c = 0;
    input.patches.row(v).segment(spec.groups, spec.classes).maxCoeff(&c);
    votes(c) += 1.0;
  }
  Eigen::Index best = 0;
  if (votes.maxCoeff(&best) == 0.0) throw DimensionError("decode_label: prompted group has no patches");
  return static_cast<int>(best);
}

}  // namespace lvprune
