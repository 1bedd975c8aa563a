#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "terracover/dataset.hpp"
#include "terracover/metrics.hpp"
#include "terracover/network.hpp"

namespace terra {

enum class Task { kClassify, kSegment };

struct TrainConfig {
  Task task = Task::kClassify;
  int level = 3;
  // Two-stage schedule: stage 1 trains only the unfrozen tail (classifier
  // head, or U-Net decoder), stage 2 fine-tunes everything. Classification
  // defaults to 10 + 5 epochs, segmentation to 5 + 5.
  int stage1_epochs = 10;
  int stage2_epochs = 5;
  int batch_size = 8;
  double learning_rate = 0.05;   // stage 1
  double stage2_lr_scale = 0.1;  // stage 2 rate = learning_rate * scale
  double momentum = 0.9;
  std::uint64_t seed = 42;
  bool augmentation = true;
  double threshold = 0.5;  // multi-label decision threshold
  bool verbose = true;     // epoch lines on stderr
  EncoderSpec encoder;
  std::filesystem::path checkpoint_path;  // best-val weights; empty = skip
  std::filesystem::path run_dir;          // log.csv + run.json; empty = skip

  void validate() const;
};

struct EpochRow {
  int epoch = 0;  // 1-based, continuous across stages
  int stage = 1;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double metric = 0.0;  // sample-F1 (classify) or pixel accuracy (segment)
  double seconds = 0.0;
  std::vector<double> per_class_iou;  // segmentation only
};

struct TrainLog {
  std::vector<EpochRow> rows;
  double best_metric = 0.0;
  int best_epoch = 0;
};

struct ClassifyEval {
  ClassReport report;
  double mean_loss = 0.0;
  LabelSpace space;
};

struct SegmentEval {
  ConfusionMatrix confusion{1};
  double pixel_acc = 0.0;
  std::vector<ClassIoU> iou;
  double mean_iou_present = 0.0;
  double mean_loss = 0.0;
  LabelSpace space;
};

// Stage 1 trains the head with the body frozen, stage 2 fine-tunes all
// layers; SGD with momentum, best-val checkpoint selection.
std::pair<Network<float>, TrainLog> train_classifier(const TrainConfig& config,
                                                     const Manifest& manifest,
                                                     const Taxonomy& taxonomy);

// Stage 1 trains the decoder with the encoder frozen. When
// `encoder_checkpoint` is given, encoder weights are loaded from it by name
// before training (classifier -> segmenter transfer).
std::pair<Network<float>, TrainLog> train_segmenter(
    const TrainConfig& config, const Manifest& manifest, const Taxonomy& taxonomy,
    const std::optional<std::filesystem::path>& encoder_checkpoint = std::nullopt);

// Thresholded sigmoid predictions -> the full multi-label metric suite.
ClassifyEval evaluate_classifier(Network<float>& net, const Manifest& manifest,
                                 const Taxonomy& taxonomy, Split split, int level,
                                 double threshold = 0.5);

// Per-pixel argmax (ties to the lowest class index) -> accuracy, IoU,
// confusion.
SegmentEval evaluate_segmenter(Network<float>& net, const Manifest& manifest,
                               const Taxonomy& taxonomy, Split split, int level);

// Reconstructs the builder arguments of a saved network from its parameter
// shapes, so eval verbs need nothing beyond the checkpoint.
struct InferredArchitecture {
  EncoderSpec encoder;
  int num_classes = 0;
  HeadKind head = HeadKind::kClassification;
};
InferredArchitecture infer_architecture(
    const std::map<std::string, CheckpointRecord>& records);

Network<float> load_network(const std::filesystem::path& checkpoint_path);

// Writes `log.csv` and `run.json` (config echo, seed, build version, final
// metrics) into config.run_dir.
void write_run_artifacts(const TrainConfig& config, const TrainLog& log,
                         const std::string& final_metrics_json);

}  // namespace terra
