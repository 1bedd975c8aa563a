#include "terracover/trainer.hpp"

#include <chrono>
#include <fstream>
#include <functional>
#include <iostream>

#include "json.hpp"
#include "terracover/losses.hpp"
#include "terracover/rng.hpp"

#ifndef TERRACOVER_GIT_DESCRIBE
#define TERRACOVER_GIT_DESCRIBE "unknown"
#endif

namespace terra {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// One preloaded sample: normalized image, level-local mask, and the
// level-local multi-hot classification target.
struct LoadedSample {
  std::string patch_id;
  ImageGrid image;
  MaskGrid mask;               // values remapped into the level's label space
  std::vector<int> labels;     // local class indices from the manifest
};

std::vector<LoadedSample> preload(const Manifest& manifest, const LabelSpace& space,
                                  const std::vector<std::size_t>& indices,
                                  int level) {
  std::vector<LoadedSample> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    const Sample& sample = manifest.samples[i];
    LoadedSample loaded;
    loaded.patch_id = sample.patch_id;
    loaded.image = load_image(sample.image_path);
    MaskGrid raw = load_mask(sample.mask_path, manifest.legend.size());
    loaded.mask = raw;
    for (auto& v : loaded.mask.values) {
      if (v != kNodata) {
        v = static_cast<std::uint8_t>(space.mask_remap[static_cast<std::size_t>(v)]);
      }
    }
    for (int global : manifest.labels_at(i, level).indices) {
      const int local = space.local_of_global(global);
      if (local < 0) {
        throw DataError("sample " + sample.patch_id + " carries a class outside " +
                        "the dataset legend at level " + std::to_string(level));
      }
      loaded.labels.push_back(local);
    }
    out.push_back(std::move(loaded));
  }
  return out;
}

// Intensities are centered to [-1, 1]; without normalization layers the
// optimizer is noticeably slower on uncentered inputs.
void fill_image(Tensor<float>& input, Eigen::Index b, const ImageGrid& image) {
  const Eigen::Index h = input.dim(2), w = input.dim(3);
  for (Eigen::Index c = 0; c < 3; ++c) {
    for (Eigen::Index y = 0; y < h; ++y) {
      for (Eigen::Index x = 0; x < w; ++x) {
        input(b, c, y, x) =
            static_cast<float>(image.at(static_cast<int>(y), static_cast<int>(x),
                                        static_cast<int>(c))) /
                127.5f -
            1.0f;
      }
    }
  }
}

// SGD with momentum over the trainable parameters. Velocities start at zero
// each stage.
class SgdMomentum {
public:
  SgdMomentum(double learning_rate, double momentum)
      : lr_(static_cast<float>(learning_rate)),
        momentum_(static_cast<float>(momentum)) {}

  void step(Network<float>& net) {
    const auto params = net.parameters();
    if (velocity_.size() != params.size()) {
      velocity_.assign(params.size(), {});
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      Param<float>* param = params[i];
      if (!param->trainable) continue;
      auto& v = velocity_[i];
      if (v.size() != param->value.size()) {
        v = Eigen::ArrayXf::Zero(param->value.size());
      }
      v = momentum_ * v - lr_ * param->value.grad();
      param->value.values() += v;
    }
  }

private:
  float lr_;
  float momentum_;
  std::vector<Eigen::ArrayXf> velocity_;
};

PatchPair maybe_augment(const LoadedSample& sample, Rng& rng, bool enabled) {
  PatchPair pair{sample.patch_id, sample.image, sample.mask};
  if (!enabled) return pair;
  const auto pick = rng.next_below(6);  // 0 = identity, 1..5 = dihedral ops
  if (pick == 0) return pair;
  return augment(pair, static_cast<AugmentOp>(pick - 1));
}

struct EpochStats {
  double mean_loss = 0.0;
};

// One training epoch over shuffled batches; returns the mean batch loss.
template <typename LossFn>
EpochStats run_epoch(Network<float>& net, const std::vector<LoadedSample>& samples,
                     const TrainConfig& config, Rng& rng, SgdMomentum& sgd,
                     LossFn&& loss_of) {
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);

  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size();
       start += static_cast<std::size_t>(config.batch_size)) {
    const std::size_t count =
        std::min<std::size_t>(static_cast<std::size_t>(config.batch_size),
                              order.size() - start);

    std::vector<PatchPair> batch;
    batch.reserve(count);
    std::vector<const LoadedSample*> members;
    for (std::size_t k = 0; k < count; ++k) {
      const LoadedSample& sample = samples[order[start + k]];
      members.push_back(&sample);
      batch.push_back(maybe_augment(sample, rng, config.augmentation));
    }

    Tensor<float> input({static_cast<Eigen::Index>(count), 3,
                         static_cast<Eigen::Index>(batch.front().image.height),
                         static_cast<Eigen::Index>(batch.front().image.width)});
    for (std::size_t k = 0; k < count; ++k) {
      fill_image(input, static_cast<Eigen::Index>(k), batch[k].image);
    }

    const Tensor<float>& logits = net.forward(input);
    auto loss = loss_of(logits, batch, members);
    total += loss.loss;
    ++batches;

    net.zero_param_grads();
    net.backward(loss.grad);
    sgd.step(net);
  }
  return EpochStats{batches > 0 ? total / static_cast<double>(batches) : 0.0};
}

}  // namespace

void TrainConfig::validate() const {
  if (stage1_epochs < 0 || stage2_epochs < 0) {
    throw UsageError("epoch counts must be nonnegative");
  }
  if (batch_size < 1) throw UsageError("batch size must be positive");
  if (learning_rate <= 0) throw UsageError("learning rate must be positive");
  if (momentum < 0 || momentum >= 1) throw UsageError("momentum must be in [0, 1)");
  if (level < 1 || level > 3) throw UsageError("level must be 1, 2 or 3");
  if (threshold <= 0 || threshold > 1) throw UsageError("threshold must be in (0, 1]");
}

namespace {

// Shared two-stage driver. `freeze_stage1` marks the stage-1 frozen part;
// `epoch_eval` returns (val_loss, headline metric, per-class IoU).
struct StagePlan {
  FreezePart freeze_stage1;
};

using EvalFn = std::function<std::tuple<double, double, std::vector<double>>()>;
using EpochFn = std::function<double(Rng&, SgdMomentum&)>;

TrainLog run_two_stages(Network<float>& net, const TrainConfig& config,
                        const StagePlan& plan, const EpochFn& train_epoch,
                        const EvalFn& epoch_eval) {
  TrainLog log;
  Rng rng(config.seed ^ 0x7261696e);  // distinct stream from init/split seeds
  int epoch = 0;

  const auto run_stage = [&](int stage, int epochs, double lr) {
    if (epochs == 0) return;
    if (stage == 1) {
      net.freeze(plan.freeze_stage1);
    } else {
      net.unfreeze();
    }
    SgdMomentum sgd(lr, config.momentum);
    for (int e = 0; e < epochs; ++e) {
      const auto start = Clock::now();
      EpochRow row;
      row.epoch = ++epoch;
      row.stage = stage;
      row.train_loss = train_epoch(rng, sgd);
      auto [val_loss, metric, iou] = epoch_eval();
      row.val_loss = val_loss;
      row.metric = metric;
      row.per_class_iou = std::move(iou);
      row.seconds = seconds_since(start);
      log.rows.push_back(row);

      if (log.best_epoch == 0 || metric > log.best_metric) {
        log.best_metric = metric;
        log.best_epoch = row.epoch;
        if (!config.checkpoint_path.empty()) {
          save_checkpoint(config.checkpoint_path, net);
        }
      }
      if (config.verbose) {
        std::cerr << "epoch " << row.epoch << " stage " << stage << " train_loss "
                  << row.train_loss << " val_loss " << row.val_loss << " metric "
                  << row.metric << "\n";
      }
    }
  };

  run_stage(1, config.stage1_epochs, config.learning_rate);
  run_stage(2, config.stage2_epochs, config.learning_rate * config.stage2_lr_scale);
  net.unfreeze();

  // With zero epochs there is still a usable (initialized) network; save it
  // so downstream verbs have a checkpoint to read.
  if (log.rows.empty() && !config.checkpoint_path.empty()) {
    save_checkpoint(config.checkpoint_path, net);
  }
  return log;
}

}  // namespace

std::pair<Network<float>, TrainLog> train_classifier(const TrainConfig& config,
                                                     const Manifest& manifest,
                                                     const Taxonomy& taxonomy) {
  config.validate();
  const LabelSpace space = make_label_space(manifest.legend, taxonomy, config.level);
  const auto train_idx = manifest.split_indices(Split::kTrain);
  const auto val_idx = manifest.split_indices(Split::kVal);
  if (train_idx.empty() || val_idx.empty()) {
    throw DataError("manifest must contain both train and val samples");
  }

  EncoderSpec spec = config.encoder;
  spec.seed = config.seed;
  Network<float> net = build_classifier<float>(spec, space.size());

  const auto train_samples = preload(manifest, space, train_idx, config.level);
  const int k = space.size();

  const auto train_epoch = [&](Rng& rng, SgdMomentum& sgd) {
    return run_epoch(net, train_samples, config, rng, sgd,
                     [&](const Tensor<float>& logits, const std::vector<PatchPair>&,
                         const std::vector<const LoadedSample*>& members) {
                       Tensor<float> targets(
                           {static_cast<Eigen::Index>(members.size()), k});
                       for (std::size_t m = 0; m < members.size(); ++m) {
                         for (int local : members[m]->labels) {
                           targets.values()[static_cast<Eigen::Index>(m) * k + local] =
                               1.0f;
                         }
                       }
                       return bce_multilabel_loss(logits, targets);
                     })
        .mean_loss;
  };

  const auto epoch_eval = [&]() {
    ClassifyEval eval = evaluate_classifier(net, manifest, taxonomy, Split::kVal,
                                            config.level, config.threshold);
    return std::tuple<double, double, std::vector<double>>{
        eval.mean_loss, eval.report.f1_sample_averaged, {}};
  };

  TrainLog log = run_two_stages(net, config, StagePlan{FreezePart::kAllButHead},
                                train_epoch, epoch_eval);
  return {std::move(net), std::move(log)};
}

std::pair<Network<float>, TrainLog> train_segmenter(
    const TrainConfig& config, const Manifest& manifest, const Taxonomy& taxonomy,
    const std::optional<std::filesystem::path>& encoder_checkpoint) {
  config.validate();
  const LabelSpace space = make_label_space(manifest.legend, taxonomy, config.level);
  const auto train_idx = manifest.split_indices(Split::kTrain);
  const auto val_idx = manifest.split_indices(Split::kVal);
  if (train_idx.empty() || val_idx.empty()) {
    throw DataError("manifest must contain both train and val samples");
  }

  EncoderSpec spec = config.encoder;
  spec.seed = config.seed;
  Network<float> net = build_unet<float>(spec, space.size());
  if (encoder_checkpoint.has_value()) {
    load_checkpoint(*encoder_checkpoint, net, "enc.");
  }

  const auto train_samples = preload(manifest, space, train_idx, config.level);

  const auto train_epoch = [&](Rng& rng, SgdMomentum& sgd) {
    return run_epoch(net, train_samples, config, rng, sgd,
                     [&](const Tensor<float>& logits, const std::vector<PatchPair>& batch,
                         const std::vector<const LoadedSample*>&) {
                       std::vector<MaskGrid> masks;
                       masks.reserve(batch.size());
                       for (const PatchPair& pair : batch) masks.push_back(pair.mask);
                       return pixel_crossentropy_loss(logits, masks);
                     })
        .mean_loss;
  };

  const auto epoch_eval = [&]() {
    SegmentEval eval =
        evaluate_segmenter(net, manifest, taxonomy, Split::kVal, config.level);
    std::vector<double> iou;
    for (const ClassIoU& c : eval.iou) iou.push_back(c.present ? c.iou : -1.0);
    return std::tuple<double, double, std::vector<double>>{eval.mean_loss,
                                                           eval.pixel_acc, iou};
  };

  TrainLog log = run_two_stages(net, config, StagePlan{FreezePart::kEncoder},
                                train_epoch, epoch_eval);
  return {std::move(net), std::move(log)};
}

ClassifyEval evaluate_classifier(Network<float>& net, const Manifest& manifest,
                                 const Taxonomy& taxonomy, Split split, int level,
                                 double threshold) {
  const LabelSpace space = make_label_space(manifest.legend, taxonomy, level);
  const auto indices = manifest.split_indices(split);
  if (indices.empty()) throw DataError("requested split is empty");
  const auto samples = preload(manifest, space, indices, level);
  const int k = space.size();

  ClassifyEval eval;
  eval.space = space;
  MultiLabelBatch batch;
  batch.num_labels = k;

  double total_loss = 0.0;
  std::size_t batches = 0;
  const std::size_t chunk = 16;
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const std::size_t count = std::min(chunk, samples.size() - start);
    Tensor<float> input({static_cast<Eigen::Index>(count), 3,
                         static_cast<Eigen::Index>(samples.front().image.height),
                         static_cast<Eigen::Index>(samples.front().image.width)});
    Tensor<float> targets({static_cast<Eigen::Index>(count), k});
    for (std::size_t m = 0; m < count; ++m) {
      fill_image(input, static_cast<Eigen::Index>(m), samples[start + m].image);
      for (int local : samples[start + m].labels) {
        targets.values()[static_cast<Eigen::Index>(m) * k + local] = 1.0f;
      }
    }

    const Tensor<float>& logits = net.forward(input);
    total_loss += bce_multilabel_loss(logits, targets).loss;
    ++batches;

    for (std::size_t m = 0; m < count; ++m) {
      LabelSet truth{level, {}};
      for (int local : samples[start + m].labels) truth.indices.insert(local);
      LabelSet predicted{level, {}};
      for (int c = 0; c < k; ++c) {
        const float logit = logits.values()[static_cast<Eigen::Index>(m) * k + c];
        const double prob = 0.5 * (1.0 + std::tanh(0.5 * static_cast<double>(logit)));
        if (prob >= threshold) predicted.indices.insert(c);
      }
      batch.truth.push_back(std::move(truth));
      batch.predicted.push_back(std::move(predicted));
    }
  }

  eval.report = make_class_report(batch);
  eval.mean_loss = total_loss / static_cast<double>(batches);
  return eval;
}

SegmentEval evaluate_segmenter(Network<float>& net, const Manifest& manifest,
                               const Taxonomy& taxonomy, Split split, int level) {
  const LabelSpace space = make_label_space(manifest.legend, taxonomy, level);
  const auto indices = manifest.split_indices(split);
  if (indices.empty()) throw DataError("requested split is empty");
  const auto samples = preload(manifest, space, indices, level);
  const int k = space.size();

  SegmentEval eval;
  eval.space = space;
  eval.confusion = ConfusionMatrix(k);

  double total_loss = 0.0;
  std::size_t batches = 0;
  const std::size_t chunk = 8;
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const std::size_t count = std::min(chunk, samples.size() - start);
    const int h = samples.front().image.height;
    const int w = samples.front().image.width;
    Tensor<float> input({static_cast<Eigen::Index>(count), 3, h, w});
    std::vector<MaskGrid> masks;
    for (std::size_t m = 0; m < count; ++m) {
      fill_image(input, static_cast<Eigen::Index>(m), samples[start + m].image);
      masks.push_back(samples[start + m].mask);
    }

    const Tensor<float>& logits = net.forward(input);
    total_loss += pixel_crossentropy_loss(logits, masks).loss;
    ++batches;

    for (std::size_t m = 0; m < count; ++m) {
      MaskGrid predicted = MaskGrid::filled(h, w, 0);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          int best = 0;
          float best_v = logits(static_cast<Eigen::Index>(m), 0, y, x);
          for (int c = 1; c < k; ++c) {
            const float v = logits(static_cast<Eigen::Index>(m), c, y, x);
            if (v > best_v) {  // strict: ties keep the lowest class index
              best_v = v;
              best = c;
            }
          }
          predicted.at(y, x) = static_cast<std::uint8_t>(best);
        }
      }
      eval.confusion.add(samples[start + m].mask, predicted);
    }
  }

  eval.mean_loss = total_loss / static_cast<double>(batches);
  eval.pixel_acc = static_cast<double>(eval.confusion.diagonal_total()) /
                   static_cast<double>(eval.confusion.total());

  eval.iou.resize(static_cast<std::size_t>(k));
  double iou_total = 0.0;
  int present = 0;
  for (int c = 0; c < k; ++c) {
    const std::int64_t tp = eval.confusion.count(c, c);
    const std::int64_t row = eval.confusion.counts().row(c).sum();
    const std::int64_t col = eval.confusion.counts().col(c).sum();
    const std::int64_t denom = row + col - tp;
    eval.iou[static_cast<std::size_t>(c)].present = denom > 0;
    eval.iou[static_cast<std::size_t>(c)].iou =
        denom > 0 ? static_cast<double>(tp) / static_cast<double>(denom) : 0.0;
    if (denom > 0) {
      iou_total += eval.iou[static_cast<std::size_t>(c)].iou;
      ++present;
    }
  }
  eval.mean_iou_present = present > 0 ? iou_total / present : 0.0;
  return eval;
}

InferredArchitecture infer_architecture(
    const std::map<std::string, CheckpointRecord>& records) {
  InferredArchitecture arch;
  const auto shape_of = [&](const std::string& name) {
    const auto it = records.find(name);
    if (it == records.end()) {
      throw DataError("checkpoint lacks parameter '" + name + "'");
    }
    return it->second.shape;
  };

  const auto stem = shape_of("enc.stem.conv.w");  // [stem, in, 3, 3]
  arch.encoder.stem_channels = static_cast<int>(stem[0]);
  arch.encoder.input_channels = static_cast<int>(stem[1]);
  for (int s = 0; s < 3; ++s) {
    const auto conv1 = shape_of("enc.s" + std::to_string(s + 1) + ".res.conv1.w");
    arch.encoder.stage_channels[static_cast<std::size_t>(s)] =
        static_cast<int>(conv1[0]);
  }
  if (records.contains("dec.out.w")) {
    arch.head = HeadKind::kSegmentation;
    arch.num_classes = static_cast<int>(shape_of("dec.out.w")[0]);
  } else {
    arch.head = HeadKind::kClassification;
    arch.num_classes = static_cast<int>(shape_of("head.fc.w")[0]);
  }
  return arch;
}

Network<float> load_network(const std::filesystem::path& checkpoint_path) {
  const auto records = read_checkpoint(checkpoint_path);
  const auto arch = infer_architecture(records);
  Network<float> net = arch.head == HeadKind::kSegmentation
                           ? build_unet<float>(arch.encoder, arch.num_classes)
                           : build_classifier<float>(arch.encoder, arch.num_classes);
  load_checkpoint(checkpoint_path, net);
  return net;
}

void write_run_artifacts(const TrainConfig& config, const TrainLog& log,
                         const std::string& final_metrics_json) {
  if (config.run_dir.empty()) return;
  std::filesystem::create_directories(config.run_dir);

  {
    std::ofstream out(config.run_dir / "log.csv");
    out << "epoch,stage,train_loss,val_loss,metric,seconds";
    const std::size_t iou_count =
        log.rows.empty() ? 0 : log.rows.front().per_class_iou.size();
    for (std::size_t c = 0; c < iou_count; ++c) out << ",iou_" << c;
    out << '\n';
    for (const EpochRow& row : log.rows) {
      out << row.epoch << ',' << row.stage << ',' << row.train_loss << ','
          << row.val_loss << ',' << row.metric << ',' << row.seconds;
      for (double iou : row.per_class_iou) out << ',' << iou;
      out << '\n';
    }
  }

  nlohmann::json meta;
  meta["task"] = config.task == Task::kClassify ? "classify" : "segment";
  meta["level"] = config.level;
  meta["stage1_epochs"] = config.stage1_epochs;
  meta["stage2_epochs"] = config.stage2_epochs;
  meta["batch_size"] = config.batch_size;
  meta["learning_rate"] = config.learning_rate;
  meta["stage2_lr_scale"] = config.stage2_lr_scale;
  meta["momentum"] = config.momentum;
  meta["seed"] = config.seed;
  meta["augmentation"] = config.augmentation;
  meta["threshold"] = config.threshold;
  meta["encoder"] = {{"stem_channels", config.encoder.stem_channels},
                     {"stage_channels", config.encoder.stage_channels}};
  meta["git_describe"] = TERRACOVER_GIT_DESCRIBE;
  meta["best_epoch"] = log.best_epoch;
  meta["best_metric"] = log.best_metric;
  if (!final_metrics_json.empty()) {
    meta["final_metrics"] = nlohmann::json::parse(final_metrics_json);
  }
  std::ofstream out(config.run_dir / "run.json");
  out << meta.dump(2) << '\n';
}

}  // namespace terra
