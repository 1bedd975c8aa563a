#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "terracover/audit.hpp"
#include "terracover/metrics.hpp"
#include "terracover/trainer.hpp"

namespace terra {

// One report table, emitted as CSV (machine) and aligned markdown (human).
struct Table {
  std::string title;
  std::vector<std::string> headers;
  std::vector<std::vector<std::string>> rows;
};

std::string format_double(double value, int digits = 3);

void write_csv(const std::filesystem::path& path, const Table& table);
std::string to_markdown(const Table& table);
void write_markdown(const std::filesystem::path& path, const Table& table);

// Reads a CSV written by write_csv back into a Table (for `report` bundling).
Table read_csv(const std::filesystem::path& path);

// Dataset cardinality/density per level.
struct LevelStats {
  int level = 0;
  double cardinality = 0.0;
  double density = 0.0;
};
Table stats_table(const std::vector<LevelStats>& stats);

// MR / Partial / Incorrect / F1 summary row(s).
Table match_table(const std::vector<std::pair<std::string, ClassReport>>& rows);

// Per-class precision / recall / F1 / support.
Table class_report_table(const ClassReport& report,
                         const std::vector<std::string>& class_names);

// Row-normalized confusion matrix.
Table confusion_table(const ConfusionMatrix& matrix,
                      const std::vector<std::string>& class_labels);

// Per-class IoU plus pixel accuracy.
Table segmentation_table(const SegmentEval& eval,
                         const std::vector<std::string>& class_names);

Table suspect_table(const std::vector<SuspectRecord>& ranked,
                    const std::vector<std::string>& class_names);

// Concatenates every *.csv under `dir` into one markdown document.
void bundle_reports(const std::filesystem::path& dir,
                    const std::filesystem::path& out_path);

}  // namespace terra
