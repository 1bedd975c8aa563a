#include "terracover/report.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace fs = std::filesystem;

namespace terra {

namespace {

std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string join_ints(const std::vector<int>& values) {
  std::string out;
  for (int v : values) {
    if (!out.empty()) out += ';';
    out += std::to_string(v);
  }
  return out;
}

}  // namespace

std::string format_double(double value, int digits) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << value;
  return out.str();
}

void write_csv(const fs::path& path, const Table& table) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  if (!table.title.empty()) out << "# " << table.title << '\n';
  for (std::size_t i = 0; i < table.headers.size(); ++i) {
    if (i) out << ',';
    out << csv_quote(table.headers[i]);
  }
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      out << csv_quote(row[i]);
    }
    out << '\n';
  }
}

std::string to_markdown(const Table& table) {
  std::vector<std::size_t> widths(table.headers.size());
  for (std::size_t i = 0; i < table.headers.size(); ++i) {
    widths[i] = table.headers[i].size();
  }
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size() && i < widths.size(); ++i) {
      widths[i] = std::max(widths[i], row[i].size());
    }
  }

  std::ostringstream out;
  if (!table.title.empty()) out << "## " << table.title << "\n\n";
  const auto emit_row = [&](const std::vector<std::string>& cells) {
    out << '|';
    for (std::size_t i = 0; i < widths.size(); ++i) {
      const std::string& cell = i < cells.size() ? cells[i] : "";
      out << ' ' << cell << std::string(widths[i] - cell.size(), ' ') << " |";
    }
    out << '\n';
  };
  emit_row(table.headers);
  out << '|';
  for (std::size_t w : widths) out << std::string(w + 2, '-') << '|';
  out << '\n';
  for (const auto& row : table.rows) emit_row(row);
  return out.str();
}

void write_markdown(const fs::path& path, const Table& table) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_markdown(table);
}

Table read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  Table table;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (table.title.empty()) {
        table.title = line.substr(line.find_first_not_of("# "));
      }
      continue;
    }

    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      const char c = i < line.size() ? line[i] : ',';
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else if (c == '"') {
          quoted = false;
        } else {
          field += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        fields.push_back(field);
        field.clear();
      } else {
        field += c;
      }
    }

    if (!header_seen) {
      table.headers = fields;
      header_seen = true;
    } else {
      table.rows.push_back(fields);
    }
  }
  return table;
}

Table stats_table(const std::vector<LevelStats>& stats) {
  Table table;
  table.title = "Cardinality and density";
  table.headers = {"Classification level", "Cardinality", "Density"};
  for (const LevelStats& row : stats) {
    table.rows.push_back({"Level " + std::to_string(row.level),
                          format_double(row.cardinality, 2),
                          format_double(row.density, 3)});
  }
  return table;
}

Table match_table(const std::vector<std::pair<std::string, ClassReport>>& rows) {
  Table table;
  table.title = "Classification results";
  table.headers = {"Dataset", "MR", "Partial", "Incorrect",
                   "F1 (sample)", "F1 (micro)", "F1 (macro)"};
  for (const auto& [name, report] : rows) {
    table.rows.push_back({name, format_double(report.match.exact * 100, 1) + "%",
                          format_double(report.match.partial * 100, 1) + "%",
                          format_double(report.match.incorrect * 100, 1) + "%",
                          format_double(report.f1_sample_averaged, 3),
                          format_double(report.f1_micro, 3),
                          format_double(report.f1_macro, 3)});
  }
  return table;
}

Table class_report_table(const ClassReport& report,
                         const std::vector<std::string>& class_names) {
  Table table;
  table.title = "Per-class results";
  table.headers = {"Class", "Precision", "Recall", "F1", "Images"};
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    const ClassPRF& prf = report.per_class[c];
    table.rows.push_back({c < class_names.size() ? class_names[c]
                                                 : "class " + std::to_string(c),
                          format_double(prf.precision, 2), format_double(prf.recall, 2),
                          format_double(prf.f1, 2), std::to_string(prf.support)});
  }
  return table;
}

Table confusion_table(const ConfusionMatrix& matrix,
                      const std::vector<std::string>& class_labels) {
  // Rows indicate true labels, columns model predictions.
  Table table;
  table.title = "Confusion matrix (row-normalized)";
  table.headers = {"Labels"};
  for (int c = 0; c < matrix.num_classes(); ++c) {
    table.headers.push_back(c < static_cast<int>(class_labels.size())
                                ? class_labels[static_cast<std::size_t>(c)]
                                : std::to_string(c));
  }
  const Eigen::MatrixXd normalized = matrix.row_normalized();
  for (int r = 0; r < matrix.num_classes(); ++r) {
    std::vector<std::string> row;
    row.push_back(r < static_cast<int>(class_labels.size())
                      ? class_labels[static_cast<std::size_t>(r)]
                      : std::to_string(r));
    for (int c = 0; c < matrix.num_classes(); ++c) {
      row.push_back(format_double(normalized(r, c), 2));
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

Table segmentation_table(const SegmentEval& eval,
                         const std::vector<std::string>& class_names) {
  Table table;
  table.title = "Segmentation results (pixel accuracy " +
                format_double(eval.pixel_acc * 100, 1) + "%)";
  table.headers = {"Class", "IoU", "Present"};
  for (std::size_t c = 0; c < eval.iou.size(); ++c) {
    table.rows.push_back({c < class_names.size() ? class_names[c]
                                                 : "class " + std::to_string(c),
                          eval.iou[c].present ? format_double(eval.iou[c].iou, 3) : "-",
                          eval.iou[c].present ? "yes" : "no"});
  }
  return table;
}

Table suspect_table(const std::vector<SuspectRecord>& ranked,
                    const std::vector<std::string>& class_names) {
  const auto name_of = [&](int c) {
    return c >= 0 && c < static_cast<int>(class_names.size())
               ? class_names[static_cast<std::size_t>(c)]
               : "class " + std::to_string(c);
  };

  Table table;
  table.title = "Label-noise suspects by loss";
  table.headers = {"rank",          "patch_id",      "loss",
                   "predicted",     "probabilities", "stored_truth",
                   "top_predicted", "top_probability"};
  int rank = 1;
  for (const SuspectRecord& record : ranked) {
    std::string probs;
    for (double p : record.probabilities) {
      if (!probs.empty()) probs += ';';
      probs += format_double(p, 3);
    }
    table.rows.push_back({std::to_string(rank++), record.patch_id,
                          format_double(record.loss, 4), join_ints(record.predicted),
                          probs, join_ints(record.stored_truth),
                          name_of(record.top_class),
                          format_double(record.top_probability, 2)});
  }
  return table;
}

void bundle_reports(const fs::path& dir, const fs::path& out_path) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no CSV reports under " + dir.string());

  std::ofstream out(out_path);
  if (!out) throw DataError("cannot write " + out_path.string());
  out << "# Report bundle\n\n";
  for (const fs::path& file : files) {
    Table table = read_csv(file);
    if (table.title.empty()) table.title = file.stem().string();
    out << to_markdown(table) << '\n';
  }
}

}  // namespace terra
