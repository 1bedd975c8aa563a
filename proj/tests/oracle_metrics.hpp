#pragma once

// Brute-force reference implementations of the multi-label and segmentation
// metrics, written over boolean membership matrices rather than index sets.
// Test-only; must stay independent of src/metrics.cpp.

#include <cmath>
#include <cstdint>
#include <vector>

namespace terra::oracle {

// sample x label membership matrix
using BoolMatrix = std::vector<std::vector<bool>>;

inline double cardinality(const BoolMatrix& truth) {
  double total = 0;
  for (const auto& row : truth) {
    for (bool b : row) {
      if (b) total += 1;
    }
  }
  return total / static_cast<double>(truth.size());
}

inline double density(const BoolMatrix& truth) {
  return cardinality(truth) / static_cast<double>(truth.front().size());
}

struct Breakdown {
  double exact, partial, incorrect;
};

inline Breakdown breakdown(const BoolMatrix& truth, const BoolMatrix& pred) {
  const std::size_t n = truth.size();
  const std::size_t k = truth.front().size();
  std::size_t exact = 0, partial = 0, incorrect = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bool all_equal = true;
    bool any_shared = false;
    for (std::size_t c = 0; c < k; ++c) {
      if (truth[i][c] != pred[i][c]) all_equal = false;
      if (truth[i][c] && pred[i][c]) any_shared = true;
    }
    if (all_equal) {
      ++exact;
    } else if (any_shared) {
      ++partial;
    } else {
      ++incorrect;
    }
  }
  return {static_cast<double>(exact) / n, static_cast<double>(partial) / n,
          static_cast<double>(incorrect) / n};
}

struct Prf {
  double precision, recall, f1;
};

inline Prf prf_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
  Prf out{0, 0, 0};
  if (tp + fp > 0) out.precision = static_cast<double>(tp) / (tp + fp);
  if (tp + fn > 0) out.recall = static_cast<double>(tp) / (tp + fn);
  if (out.precision + out.recall > 0) {
    out.f1 = 2 * out.precision * out.recall / (out.precision + out.recall);
  }
  return out;
}

inline std::vector<Prf> per_class(const BoolMatrix& truth, const BoolMatrix& pred) {
  const std::size_t n = truth.size();
  const std::size_t k = truth.front().size();
  std::vector<Prf> out;
  for (std::size_t c = 0; c < k; ++c) {
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (truth[i][c] && pred[i][c]) ++tp;
      if (!truth[i][c] && pred[i][c]) ++fp;
      if (truth[i][c] && !pred[i][c]) ++fn;
    }
    out.push_back(prf_from_counts(tp, fp, fn));
  }
  return out;
}

inline double f1_sample_averaged(const BoolMatrix& truth, const BoolMatrix& pred) {
  const std::size_t n = truth.size();
  const std::size_t k = truth.front().size();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t c = 0; c < k; ++c) {
      if (truth[i][c] && pred[i][c]) ++tp;
      if (!truth[i][c] && pred[i][c]) ++fp;
      if (truth[i][c] && !pred[i][c]) ++fn;
    }
    total += prf_from_counts(tp, fp, fn).f1;
  }
  return total / static_cast<double>(n);
}

inline double f1_micro(const BoolMatrix& truth, const BoolMatrix& pred) {
  const std::size_t n = truth.size();
  const std::size_t k = truth.front().size();
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      if (truth[i][c] && pred[i][c]) ++tp;
      if (!truth[i][c] && pred[i][c]) ++fp;
      if (truth[i][c] && !pred[i][c]) ++fn;
    }
  }
  return prf_from_counts(tp, fp, fn).f1;
}

inline double f1_macro(const BoolMatrix& truth, const BoolMatrix& pred) {
  const auto classes = per_class(truth, pred);
  double total = 0;
  for (const Prf& prf : classes) total += prf.f1;
  return total / static_cast<double>(classes.size());
}

}  // namespace terra::oracle
