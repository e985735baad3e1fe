#pragma once

#include <cstdint>
#include <vector>

#include "lvprune/model/forward.hpp"

namespace lvprune {

// Synthetic multi-modal lookup task. Patches come in `groups` disjoint groups
// of `informative` patches each, plus ungrouped filler. A grouped patch is
//   [group one-hot (groups) | class one-hot (classes) | zero padding] + noise
// and every patch of a group shows the group's class. Filler patches are pure
// noise. The sequence is [prompt, image, query]: the prompt names one group,
// whose patches are the informative ones for that sample, and the target is
// that group's class, predicted at the query.
//
// The prompt precedes the image, so it cannot look at the patches, and the
// query only learns which group was asked for through attention. Reading the
// answer therefore takes at least two layers.
struct SyntheticSpec {
  int vision_tokens = 16;
  int patch_dim = 16;
  int classes = 2;
  int informative = 3;
  int groups = 5;
  int samples = 4096;
  double noise_std = 0.05;

  void validate() const;
  // Token ids: answers 0..answers()-1, then one prompt per group, then the
  // query token.
  int answers() const { return classes; }
  int prompt_token(int group) const { return answers() + group; }
  int query_token() const { return answers() + groups; }
  int min_vocab() const { return query_token() + 1; }
  static constexpr int kTextTokens = 2;
  bool operator==(const SyntheticSpec&) const = default;
};

struct SyntheticSample {
  ModelInput input;
  int target = 0;
  int group = 0;
  std::vector<int> informative;
  // Per patch: group index and class, -1 for filler.
  std::vector<int> patch_group, patch_class;

  // Row of the answer position (the last text token).
  int answer_row() const { return static_cast<int>(input.patches.rows() + input.text_ids.size()) - 1; }
};

std::vector<SyntheticSample> make_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed);

// The labelling rule applied to known informative indices and patch classes.
int synthetic_label(const SyntheticSpec& spec, const std::vector<int>& informative,
                    const std::vector<int>& patch_class);

// Recovers the label from the prompt and the patch vectors alone (argmax
// decoding of the group and class blocks).
int decode_label(const SyntheticSpec& spec, const ModelInput& input);

}  // namespace lvprune
