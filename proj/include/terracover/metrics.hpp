#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

#include "terracover/raster.hpp"
#include "terracover/taxonomy.hpp"

namespace terra {

// N (truth, prediction) label-set pairs at one level with a fixed label
// universe of size num_labels.
struct MultiLabelBatch {
  std::vector<LabelSet> truth;      // Y_i
  std::vector<LabelSet> predicted;  // Z_i
  int num_labels = 0;               // |L|

  std::size_t size() const { return truth.size(); }
};

// Mean number of labels per sample.
double cardinality(const MultiLabelBatch& batch);

// Cardinality divided by the size of the label universe.
double density(const MultiLabelBatch& batch);

// Fractions of samples with fully correct, partially correct, and fully
// incorrect predicted label sets. The three sum to 1.
struct MatchBreakdown {
  double exact = 0.0;      // Z_i == Y_i
  double partial = 0.0;    // overlap but not equal
  double incorrect = 0.0;  // Z_i disjoint from Y_i
};
MatchBreakdown exact_match_ratio(const MultiLabelBatch& batch);

struct ClassPRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;  // #samples carrying the class in truth
};
// Per-class precision/recall/F1 over the label universe, 0/0 -> 0.
std::vector<ClassPRF> per_class_prf(const MultiLabelBatch& batch);

enum class F1Mode { kSampleAveraged, kMicro, kMacro };
double overall_f1(const MultiLabelBatch& batch, F1Mode mode);

// Correct non-nodata pixels / all non-nodata pixels.
double pixel_accuracy(const MaskGrid& truth, const MaskGrid& predicted);

// Per-class intersection over union on pixels. A class absent from both
// truth and prediction is reported absent and excluded from means.
struct ClassIoU {
  double iou = 0.0;
  bool present = false;
};
std::vector<ClassIoU> jaccard_per_class(const MaskGrid& truth,
                                        const MaskGrid& predicted,
                                        int num_classes);
double mean_iou(std::span<const ClassIoU> per_class);

// Pixel-count confusion matrix: rows = true class, columns = predicted
// class, nodata excluded.
class ConfusionMatrix {
public:
  explicit ConfusionMatrix(int num_classes)
      : counts_(Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(
            num_classes, num_classes)) {}

  void add(const MaskGrid& truth, const MaskGrid& predicted);

  int num_classes() const { return static_cast<int>(counts_.rows()); }
  std::int64_t count(int true_class, int predicted_class) const {
    return counts_(true_class, predicted_class);
  }
  std::int64_t total() const { return counts_.sum(); }
  std::int64_t diagonal_total() const { return counts_.diagonal().sum(); }

  // Rows sum to 1 where the row has any pixels; all-zero rows stay zero.
  Eigen::MatrixXd row_normalized() const;

  const Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>& counts() const {
    return counts_;
  }

private:
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts_;
};

ConfusionMatrix confusion(const MaskGrid& truth, const MaskGrid& predicted,
                          int num_classes);

// Pearson product-moment correlation. Errors on constant sequences.
double pearson(std::span<const double> xs, std::span<const double> ys);

// Everything Tables 3-5 report for one evaluation.
struct ClassReport {
  std::vector<ClassPRF> per_class;
  MatchBreakdown match;
  double f1_sample_averaged = 0.0;
  double f1_micro = 0.0;
  double f1_macro = 0.0;
  std::int64_t num_samples = 0;
  int num_labels = 0;
};
ClassReport make_class_report(const MultiLabelBatch& batch);

}  // namespace terra
