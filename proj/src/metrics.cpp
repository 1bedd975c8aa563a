#include "terracover/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace terra {

namespace {

void check_batch(const MultiLabelBatch& batch) {
  if (batch.truth.empty()) throw DataError("empty batch");
  if (batch.truth.size() != batch.predicted.size()) {
    throw DataError("truth/prediction count mismatch");
  }
  if (batch.num_labels < 1) throw DataError("label universe must be nonempty");
}

std::size_t intersection_size(const std::set<int>& a, const std::set<int>& b) {
  std::size_t n = 0;
  for (int v : a) n += b.count(v);
  return n;
}

double f1_from_counts(double tp, double fp, double fn) {
  const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
}

void check_shapes(const MaskGrid& truth, const MaskGrid& predicted) {
  if (truth.height != predicted.height || truth.width != predicted.width) {
    throw DataError("mask shape mismatch");
  }
}

}  // namespace

double cardinality(const MultiLabelBatch& batch) {
  check_batch(batch);
  double total = 0.0;
  for (const LabelSet& y : batch.truth) total += static_cast<double>(y.indices.size());
  return total / static_cast<double>(batch.size());
}

double density(const MultiLabelBatch& batch) {
  return cardinality(batch) / static_cast<double>(batch.num_labels);
}

MatchBreakdown exact_match_ratio(const MultiLabelBatch& batch) {
  check_batch(batch);
  std::int64_t exact = 0, incorrect = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& y = batch.truth[i].indices;
    const auto& z = batch.predicted[i].indices;
    if (y == z) {
      ++exact;
    } else if (intersection_size(y, z) == 0) {
      ++incorrect;
    }
  }
  const double n = static_cast<double>(batch.size());
  MatchBreakdown out;
  out.exact = exact / n;
  out.incorrect = incorrect / n;
  // Defined so that (exact + incorrect) + partial == 1.0 in floating point.
  out.partial = 1.0 - (out.exact + out.incorrect);
  return out;
}

std::vector<ClassPRF> per_class_prf(const MultiLabelBatch& batch) {
  check_batch(batch);
  std::vector<std::int64_t> tp(batch.num_labels, 0), fp(batch.num_labels, 0),
      fn(batch.num_labels, 0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& y = batch.truth[i].indices;
    const auto& z = batch.predicted[i].indices;
    for (int c : z) {
      if (y.count(c))
        ++tp[c];
      else
        ++fp[c];
    }
    for (int c : y) {
      if (!z.count(c)) ++fn[c];
    }
  }

  std::vector<ClassPRF> out(batch.num_labels);
  for (int c = 0; c < batch.num_labels; ++c) {
    ClassPRF& prf = out[c];
    prf.support = tp[c] + fn[c];
    prf.precision = tp[c] + fp[c] > 0
                        ? static_cast<double>(tp[c]) / (tp[c] + fp[c])
                        : 0.0;
    prf.recall = tp[c] + fn[c] > 0
                     ? static_cast<double>(tp[c]) / (tp[c] + fn[c])
                     : 0.0;
    prf.f1 = prf.precision + prf.recall > 0
                 ? 2.0 * prf.precision * prf.recall / (prf.precision + prf.recall)
                 : 0.0;
  }
  return out;
}

double overall_f1(const MultiLabelBatch& batch, F1Mode mode) {
  check_batch(batch);
  switch (mode) {
    case F1Mode::kSampleAveraged: {
      double total = 0.0;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& y = batch.truth[i].indices;
        const auto& z = batch.predicted[i].indices;
        const double inter = static_cast<double>(intersection_size(y, z));
        const double denom = static_cast<double>(y.size() + z.size());
        total += denom > 0 ? 2.0 * inter / denom : 0.0;
      }
      return total / static_cast<double>(batch.size());
    }
    case F1Mode::kMicro: {
      std::int64_t tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& y = batch.truth[i].indices;
        const auto& z = batch.predicted[i].indices;
        const std::int64_t inter =
            static_cast<std::int64_t>(intersection_size(y, z));
        tp += inter;
        fp += static_cast<std::int64_t>(z.size()) - inter;
        fn += static_cast<std::int64_t>(y.size()) - inter;
      }
      return f1_from_counts(static_cast<double>(tp), static_cast<double>(fp),
                            static_cast<double>(fn));
    }
    case F1Mode::kMacro: {
      const auto per_class = per_class_prf(batch);
      double total = 0.0;
      for (const ClassPRF& prf : per_class) total += prf.f1;
      return total / static_cast<double>(per_class.size());
    }
  }
  throw DataError("unknown F1 mode");
}

double pixel_accuracy(const MaskGrid& truth, const MaskGrid& predicted) {
  check_shapes(truth, predicted);
  std::int64_t valid = 0, correct = 0;
  for (std::size_t i = 0; i < truth.values.size(); ++i) {
    if (truth.values[i] == kNodata || predicted.values[i] == kNodata) continue;
    ++valid;
    if (truth.values[i] == predicted.values[i]) ++correct;
  }
  if (valid == 0) throw DataError("all pixels are nodata");
  return static_cast<double>(correct) / static_cast<double>(valid);
}

std::vector<ClassIoU> jaccard_per_class(const MaskGrid& truth,
                                        const MaskGrid& predicted,
                                        int num_classes) {
  check_shapes(truth, predicted);
  std::vector<std::int64_t> tp(num_classes, 0), fp(num_classes, 0),
      fn(num_classes, 0);
  for (std::size_t i = 0; i < truth.values.size(); ++i) {
    const std::uint8_t t = truth.values[i];
    const std::uint8_t p = predicted.values[i];
    if (t == kNodata || p == kNodata) continue;
    if (t == p) {
      ++tp[t];
    } else {
      ++fn[t];
      ++fp[p];
    }
  }

  std::vector<ClassIoU> out(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    const std::int64_t denom = tp[c] + fn[c] + fp[c];
    out[c].present = denom > 0;
    out[c].iou = denom > 0 ? static_cast<double>(tp[c]) / denom : 0.0;
  }
  return out;
}

double mean_iou(std::span<const ClassIoU> per_class) {
  double total = 0.0;
  std::int64_t present = 0;
  for (const ClassIoU& c : per_class) {
    if (!c.present) continue;
    total += c.iou;
    ++present;
  }
  if (present == 0) throw DataError("no class present in either mask");
  return total / static_cast<double>(present);
}

void ConfusionMatrix::add(const MaskGrid& truth, const MaskGrid& predicted) {
  check_shapes(truth, predicted);
  for (std::size_t i = 0; i < truth.values.size(); ++i) {
    const std::uint8_t t = truth.values[i];
    const std::uint8_t p = predicted.values[i];
    if (t == kNodata || p == kNodata) continue;
    if (t >= counts_.rows() || p >= counts_.cols()) {
      throw DataError("mask value outside confusion matrix");
    }
    ++counts_(t, p);
  }
}

Eigen::MatrixXd ConfusionMatrix::row_normalized() const {
  Eigen::MatrixXd normalized = counts_.cast<double>();
  for (Eigen::Index r = 0; r < normalized.rows(); ++r) {
    const double row_total = normalized.row(r).sum();
    if (row_total > 0) normalized.row(r) /= row_total;
  }
  return normalized;
}

ConfusionMatrix confusion(const MaskGrid& truth, const MaskGrid& predicted,
                          int num_classes) {
  ConfusionMatrix matrix(num_classes);
  matrix.add(truth, predicted);
  return matrix;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw DataError("pearson: length mismatch");
  if (xs.size() < 2) throw DataError("pearson: need at least 2 points");
  const double n = static_cast<double>(xs.size());

  double mean_x = 0.0, mean_y = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mean_x += xs[i];
    mean_y += ys[i];
  }
  mean_x /= n;
  mean_y /= n;

  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mean_x;
    const double dy = ys[i] - mean_y;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw DataError("pearson: undefined for a constant sequence");
  }
  return sxy / std::sqrt(sxx * syy);
}

ClassReport make_class_report(const MultiLabelBatch& batch) {
  ClassReport report;
  report.per_class = per_class_prf(batch);
  report.match = exact_match_ratio(batch);
  report.f1_sample_averaged = overall_f1(batch, F1Mode::kSampleAveraged);
  report.f1_micro = overall_f1(batch, F1Mode::kMicro);
  report.f1_macro = overall_f1(batch, F1Mode::kMacro);
  report.num_samples = static_cast<std::int64_t>(batch.size());
  report.num_labels = batch.num_labels;
  return report;
}

}  // namespace terra
