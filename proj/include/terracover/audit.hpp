#pragma once

#include <string>
#include <vector>

#include "terracover/trainer.hpp"

namespace terra {

// One validation sample ranked by classification loss. Indices are in the
// dataset's level-local label space.
struct SuspectRecord {
  std::string patch_id;
  double loss = 0.0;
  std::vector<int> predicted;             // classes at/above the threshold
  std::vector<double> probabilities;      // per predicted class, same order
  std::vector<int> stored_truth;          // manifest labels
  int top_class = -1;                     // highest-probability class overall
  double top_probability = 0.0;
};

// Per-sample training loss over the split, sorted by descending loss (ties
// by ascending patch_id). Mirrors the paper's high-loss mislabel scan.
std::vector<SuspectRecord> rank_by_loss(Network<float>& net, const Manifest& manifest,
                                        const Taxonomy& taxonomy, Split split,
                                        int level, double threshold = 0.5);

// The top ceil(fraction * N) ranked ids.
std::vector<std::string> flag_suspects(const std::vector<SuspectRecord>& ranked,
                                       double top_fraction);

}  // namespace terra
