#include "lvprune/pruning/layout.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace lvprune {

TokenLayout TokenLayout::make(int total, std::vector<int> vision, std::vector<int> text) {
  if (total < 0) throw DimensionError("TokenLayout: negative length");
  std::vector<int> seen(static_cast<std::size_t>(total), 0);
  auto mark = [&](const std::vector<int>& idx, const char* what) {
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (idx[k] < 0 || idx[k] >= total) {
        throw DimensionError(std::string("TokenLayout: ") + what + " index out of range");
      }
      if (k > 0 && idx[k] <= idx[k - 1]) {
        throw DimensionError(std::string("TokenLayout: ") + what + " indices not strictly increasing");
      }
      if (seen[static_cast<std::size_t>(idx[k])]++ != 0) {
        throw DimensionError("TokenLayout: vision and text indices overlap");
      }
    }
  };
  mark(vision, "vision");
  mark(text, "text");
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw DimensionError("TokenLayout: vision and text indices do not cover the sequence");
  }
  return TokenLayout{total, std::move(vision), std::move(text)};
}

TokenLayout TokenLayout::vision_then_text(int vision_count, int text_count) {
  TokenLayout layout;
  layout.total = vision_count + text_count;
  layout.vision.resize(static_cast<std::size_t>(vision_count));
  layout.text.resize(static_cast<std::size_t>(text_count));
  std::iota(layout.vision.begin(), layout.vision.end(), 0);
  std::iota(layout.text.begin(), layout.text.end(), vision_count);
  return layout;
}

PruneDecision PruneDecision::all_kept(int vision_count) {
  return PruneDecision{std::vector<double>(static_cast<std::size_t>(vision_count), 1.0)};
}

void PruneDecision::validate_binary() const {
  for (double v : values) {
    if (v != 0.0 && v != 1.0) throw Error("PruneDecision: entries must be exactly 0 or 1");
  }
}

int PruneDecision::kept() const {
  return static_cast<int>(std::count(values.begin(), values.end(), 1.0));
}

double PruneDecision::keep_fraction() const {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

namespace {

void check_schedule(const PruneSchedule& sc, int depth, bool strict) {
  if (sc.layers.size() != sc.ratios.size()) {
    throw ScheduleInfeasibleError("schedule: " + std::to_string(sc.layers.size()) + " layers but " +
                                  std::to_string(sc.ratios.size()) + " ratios");
  }
  for (std::size_t s = 0; s < sc.layers.size(); ++s) {
    if (sc.layers[s] < 0 || sc.layers[s] >= depth) {
      throw ScheduleInfeasibleError("schedule: layer index " + std::to_string(sc.layers[s]) +
                                    " outside [0, " + std::to_string(depth) + ")");
    }
    if (!(sc.ratios[s] > 0.0 && sc.ratios[s] <= 1.0)) {
      throw ScheduleInfeasibleError("schedule: ratio " + std::to_string(sc.ratios[s]) + " outside (0, 1]");
    }
    if (s > 0 && sc.layers[s] <= sc.layers[s - 1]) {
      throw ScheduleInfeasibleError("schedule: layer indices must be strictly increasing");
    }
    if (s > 0 && strict && sc.ratios[s] >= sc.ratios[s - 1]) {
      throw ScheduleInfeasibleError("schedule: ratios must be strictly decreasing");
    }
    if (s > 0 && sc.ratios[s] > sc.ratios[s - 1]) {
      throw ScheduleInfeasibleError("schedule: inference ratios must be nonincreasing");
    }
  }
}

}  // namespace

void PruneSchedule::validate(int depth) const { check_schedule(*this, depth, true); }

void PruneSchedule::validate_inference(int depth) const { check_schedule(*this, depth, false); }

int keep_count(double rho, int vision_count) {
  if (!(rho > 0.0 && rho <= 1.0)) {
    throw ScheduleInfeasibleError("keep ratio " + std::to_string(rho) + " outside (0, 1]");
  }
  const int k = static_cast<int>(std::floor(rho * vision_count + 1e-9));
  return std::max(1, k);
}

PruneDecision combine_decisions(const PruneDecision& prev, const PruneDecision& next) {
  if (prev.values.size() != next.values.size()) {
    throw DimensionError("combine_decisions: lengths " + std::to_string(prev.values.size()) +
                         " and " + std::to_string(next.values.size()));
  }
  PruneDecision out;
  out.values.resize(prev.values.size());
  for (std::size_t i = 0; i < prev.values.size(); ++i) out.values[i] = prev.values[i] * next.values[i];
  return out;
}

Tensor build_attention_mask(const PruneDecision& d, const TokenLayout& layout) {
  if (static_cast<int>(d.values.size()) != layout.vision_count()) {
    throw DimensionError("build_attention_mask: decision length " + std::to_string(d.values.size()) +
                         " for " + std::to_string(layout.vision_count()) + " vision tokens");
  }
  Tensor m = Tensor::Ones(layout.total, layout.total);
  for (std::size_t v = 0; v < layout.vision.size(); ++v) {
    const int col = layout.vision[v];
    for (int i = 0; i < layout.total; ++i) {
      if (i != col) m(i, col) = d.values[v];
    }
  }
  return m;
}

namespace ad {

Var build_attention_mask(Var decision, const TokenLayout& layout) {
  if (decision.rows() != 1 || decision.cols() != layout.vision_count()) {
    throw DimensionError("build_attention_mask: decision must be 1x" +
                         std::to_string(layout.vision_count()));
  }
  Tensor m = Tensor::Ones(layout.total, layout.total);
  const Tensor& d = decision.value();
  for (std::size_t v = 0; v < layout.vision.size(); ++v) {
    const int col = layout.vision[v];
    for (int i = 0; i < layout.total; ++i) {
      if (i != col) m(i, col) = d(0, static_cast<Eigen::Index>(v));
    }
  }
  Tape& t = *decision.tape();
  return t.record(std::move(m), {decision}, [decision, vision = layout.vision](Tape& t, const Tensor& g) {
    Tensor dd = Tensor::Zero(1, static_cast<Eigen::Index>(vision.size()));
    for (std::size_t v = 0; v < vision.size(); ++v) {
      const int col = vision[v];
      dd(0, static_cast<Eigen::Index>(v)) = g.col(col).sum() - g(col, col);
    }
    t.accumulate(decision, dd);
  });
}

}  // namespace ad

std::vector<int> select_top_k(std::span<const double> keep_probability, double rho_hat,
                              const PruneDecision& surviving) {
  const int count = static_cast<int>(keep_probability.size());
  if (static_cast<int>(surviving.values.size()) != count) {
    throw DimensionError("select_top_k: survivor mask length mismatch");
  }
  const int k = keep_count(rho_hat, count);
  std::vector<int> candidates;
  for (int i = 0; i < count; ++i) {
    if (surviving.values[static_cast<std::size_t>(i)] != 0.0) candidates.push_back(i);
  }
  if (k > static_cast<int>(candidates.size())) {
    throw ScheduleInfeasibleError("select_top_k: keeping " + std::to_string(k) + " tokens but only " +
                                  std::to_string(candidates.size()) + " survive");
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) {
    return keep_probability[static_cast<std::size_t>(a)] > keep_probability[static_cast<std::size_t>(b)];
  });
  candidates.resize(static_cast<std::size_t>(k));
  return candidates;
}

std::vector<int> reindex_positions(std::span<const int> positions, std::span<const int> kept_vision,
                                   const TokenLayout& layout) {
  if (static_cast<int>(positions.size()) != layout.total) {
    throw DimensionError("reindex_positions: position list length differs from layout");
  }
  std::vector<int> kept(kept_vision.begin(), kept_vision.end());
  std::sort(kept.begin(), kept.end());
  std::vector<int> out;
  out.reserve(kept.size() + layout.text.size());
  for (int v : kept) {
    if (v < 0 || v >= layout.vision_count()) {
      throw DimensionError("reindex_positions: vision index " + std::to_string(v) + " out of range");
    }
    out.push_back(positions[static_cast<std::size_t>(layout.vision[static_cast<std::size_t>(v)])]);
  }
  for (int t : layout.text) out.push_back(positions[static_cast<std::size_t>(t)]);
  return out;
}

}  // namespace lvprune
