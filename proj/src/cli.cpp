#include "terracover/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "terracover/audit.hpp"
#include "terracover/dataset.hpp"
#include "terracover/gradcheck.hpp"
#include "terracover/report.hpp"
#include "terracover/trainer.hpp"

namespace fs = std::filesystem;

namespace terra::cli {

namespace {

// Relative inputs fall back to $TERRACOVER_DATA_DIR when they do not exist
// under the working directory.
fs::path resolve_input(const fs::path& path) {
  if (path.is_absolute() || fs::exists(path)) return path;
  if (const char* root = std::getenv("TERRACOVER_DATA_DIR")) {
    const fs::path candidate = fs::path(root) / path;
    if (fs::exists(candidate)) return candidate;
  }
  return path;
}

Taxonomy load_taxonomy_arg(const std::string& path,
                           const std::vector<std::string>& extra_classes) {
  std::vector<ExtraClass> extras;
  for (const std::string& spec : extra_classes) {
    const auto colon = spec.find(':');
    ExtraClass extra;
    try {
      extra.code = std::stoi(spec.substr(0, colon));
    } catch (const std::exception&) {
      throw UsageError("bad --extra-classes entry '" + spec + "', want CODE:NAME");
    }
    if (colon != std::string::npos) extra.name = spec.substr(colon + 1);
    extras.push_back(std::move(extra));
  }
  return Taxonomy::load_file(resolve_input(path), extras);
}

std::vector<std::string> class_names(const LabelSpace& space, const Taxonomy& taxonomy) {
  std::vector<std::string> names;
  for (int code : space.codes) {
    const TaxonomyNode& node = taxonomy.node(ClassCode{code});
    names.push_back(node.name.empty() ? std::to_string(code) : node.name);
  }
  return names;
}

std::vector<std::string> class_codes(const LabelSpace& space) {
  std::vector<std::string> codes;
  for (int code : space.codes) codes.push_back(std::to_string(code));
  return codes;
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  throw UsageError("unknown split '" + name + "' (want train or val)");
}

void emit(const fs::path& dir, const std::string& stem, const Table& table) {
  fs::create_directories(dir);
  write_csv(dir / (stem + ".csv"), table);
  write_markdown(dir / (stem + ".md"), table);
}

// Shared flag bundle for verbs that read a manifest + checkpoint.
struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string taxonomy = "data/corine_labels.txt";
  int level = 3;
  std::string split = "val";
  double threshold = 0.5;
  std::string out;
};

void add_eval_options(CLI::App* sub, EvalArgs& args, bool with_threshold) {
  sub->add_option("--checkpoint", args.checkpoint, "trained network weights")
      ->required();
  sub->add_option("--manifest", args.manifest, "dataset manifest CSV")->required();
  sub->add_option("--taxonomy", args.taxonomy, "taxonomy definition file");
  sub->add_option("--level", args.level, "classification level")
      ->check(CLI::Range(1, 3));
  sub->add_option("--split", args.split, "train or val");
  if (with_threshold) {
    sub->add_option("--threshold", args.threshold, "multi-label decision threshold");
  }
  sub->add_option("--out", args.out, "output directory")->required();
}

struct TrainArgs {
  std::string manifest;
  std::string taxonomy = "data/corine_labels.txt";
  std::string encoder_from;
  std::string checkpoint;
  std::string out;
  std::string config_file;
  TrainConfig config;
  std::vector<int> stage_channels;
  CLI::App* sub = nullptr;
};

// key=value lines mirroring the train flags; values given on the command
// line win over the file.
void apply_config_file(TrainArgs& args) {
  if (args.config_file.empty()) return;
  std::ifstream in(resolve_input(args.config_file));
  if (!in) throw DataError("cannot open config file: " + args.config_file);

  const auto overridden = [&](const std::string& flag) {
    return args.sub->count("--" + flag) > 0;
  };

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError("config line " + std::to_string(line_no) +
                       ": expected key=value, got '" + line + "'");
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (overridden(key)) continue;

    try {
      if (key == "level") {
        args.config.level = std::stoi(value);
      } else if (key == "stage1-epochs") {
        args.config.stage1_epochs = std::stoi(value);
      } else if (key == "stage2-epochs") {
        args.config.stage2_epochs = std::stoi(value);
      } else if (key == "batch-size") {
        args.config.batch_size = std::stoi(value);
      } else if (key == "lr") {
        args.config.learning_rate = std::stod(value);
      } else if (key == "stage2-lr-scale") {
        args.config.stage2_lr_scale = std::stod(value);
      } else if (key == "momentum") {
        args.config.momentum = std::stod(value);
      } else if (key == "seed") {
        args.config.seed = std::stoull(value);
      } else if (key == "threshold") {
        args.config.threshold = std::stod(value);
      } else if (key == "augment") {
        args.config.augmentation = value == "true" || value == "1";
      } else if (key == "stem-channels") {
        args.config.encoder.stem_channels = std::stoi(value);
      } else if (key == "stage-channels") {
        std::istringstream parts(value);
        std::vector<int> channels;
        for (std::string part; parts >> part;) {
          channels.push_back(std::stoi(part));
        }
        if (channels.size() != 3) throw std::invalid_argument("want 3 widths");
        args.stage_channels = channels;
      } else if (key == "manifest") {
        args.manifest = value;
      } else if (key == "taxonomy") {
        args.taxonomy = value;
      } else if (key == "encoder-from") {
        args.encoder_from = value;
      } else if (key == "checkpoint") {
        args.checkpoint = value;
      } else if (key == "out") {
        args.out = value;
      } else {
        throw UsageError("config line " + std::to_string(line_no) +
                         ": unknown key '" + key + "'");
      }
    } catch (const UsageError&) {
      throw;
    } catch (const std::exception&) {
      throw UsageError("config line " + std::to_string(line_no) + ": bad value '" +
                       value + "' for key '" + key + "'");
    }
  }
}

void add_train_options(CLI::App* sub, TrainArgs& args, Task task) {
  args.sub = sub;
  args.config.task = task;
  if (task == Task::kSegment) {
    args.config.stage1_epochs = 5;
    args.config.stage2_epochs = 5;
  }
  sub->add_option("--manifest", args.manifest, "dataset manifest CSV")->required();
  sub->add_option("--taxonomy", args.taxonomy, "taxonomy definition file");
  sub->add_option("--level", args.config.level, "classification level")
      ->check(CLI::Range(1, 3));
  sub->add_option("--stage1-epochs", args.config.stage1_epochs,
                  "epochs with the body/encoder frozen");
  sub->add_option("--stage2-epochs", args.config.stage2_epochs,
                  "epochs with all layers unfrozen");
  sub->add_option("--batch-size", args.config.batch_size, "samples per step");
  sub->add_option("--lr", args.config.learning_rate, "stage-1 learning rate");
  sub->add_option("--stage2-lr-scale", args.config.stage2_lr_scale,
                  "stage-2 rate = lr * scale");
  sub->add_option("--momentum", args.config.momentum, "SGD momentum");
  sub->add_option("--seed", args.config.seed, "run seed (init, shuffle, augment)");
  sub->add_flag("--augment,!--no-augment", args.config.augmentation,
                "random dihedral augmentation");
  sub->add_option("--threshold", args.config.threshold,
                  "multi-label decision threshold");
  sub->add_option("--stem-channels", args.config.encoder.stem_channels,
                  "encoder stem width");
  sub->add_option("--stage-channels", args.stage_channels,
                  "three encoder stage widths")
      ->expected(3);
  sub->add_option("--checkpoint", args.checkpoint, "best-val checkpoint path");
  sub->add_option("--out", args.out, "run directory (log.csv, run.json, reports)");
  if (task == Task::kSegment) {
    sub->add_option("--encoder-from", args.encoder_from,
                    "classifier checkpoint to transfer the encoder from");
  }
  sub->add_option("--config", args.config_file,
                  "key=value file mirroring these flags");
}

void run_train(TrainArgs& args) {
  apply_config_file(args);
  TrainConfig config = args.config;
  if (!args.stage_channels.empty()) {
    for (int i = 0; i < 3; ++i) {
      config.encoder.stage_channels[static_cast<std::size_t>(i)] =
          args.stage_channels[static_cast<std::size_t>(i)];
    }
  }
  if (!args.checkpoint.empty()) config.checkpoint_path = args.checkpoint;
  if (!args.out.empty()) config.run_dir = args.out;

  const Taxonomy taxonomy = load_taxonomy_arg(args.taxonomy, {});
  const Manifest manifest = load_manifest(resolve_input(args.manifest), taxonomy);

  nlohmann::json final_metrics;
  if (config.task == Task::kClassify) {
    auto [net, log] = train_classifier(config, manifest, taxonomy);
    auto eval = evaluate_classifier(net, manifest, taxonomy, Split::kVal,
                                    config.level, config.threshold);
    final_metrics["val_sample_f1"] = eval.report.f1_sample_averaged;
    final_metrics["val_micro_f1"] = eval.report.f1_micro;
    final_metrics["val_macro_f1"] = eval.report.f1_macro;
    final_metrics["val_exact_match"] = eval.report.match.exact;
    final_metrics["val_loss"] = eval.mean_loss;
    write_run_artifacts(config, log, final_metrics.dump());
    if (!config.run_dir.empty()) {
      emit(config.run_dir, "match", match_table({{"val", eval.report}}));
      emit(config.run_dir, "per_class",
           class_report_table(eval.report, class_names(eval.space, taxonomy)));
    }
    std::cout << "final val sample-F1 " << format_double(eval.report.f1_sample_averaged, 4)
              << ", exact match " << format_double(eval.report.match.exact, 4) << "\n";
  } else {
    std::optional<fs::path> encoder;
    if (!args.encoder_from.empty()) encoder = resolve_input(args.encoder_from);
    auto [net, log] = train_segmenter(config, manifest, taxonomy, encoder);
    auto eval = evaluate_segmenter(net, manifest, taxonomy, Split::kVal, config.level);
    final_metrics["val_pixel_accuracy"] = eval.pixel_acc;
    final_metrics["val_mean_iou"] = eval.mean_iou_present;
    final_metrics["val_loss"] = eval.mean_loss;
    write_run_artifacts(config, log, final_metrics.dump());
    if (!config.run_dir.empty()) {
      emit(config.run_dir, "segmentation",
           segmentation_table(eval, class_names(eval.space, taxonomy)));
      emit(config.run_dir, "confusion",
           confusion_table(eval.confusion, class_codes(eval.space)));
    }
    std::cout << "final val pixel accuracy " << format_double(eval.pixel_acc, 4)
              << ", mean IoU " << format_double(eval.mean_iou_present, 4) << "\n";
  }
}

}  // namespace

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("terracover");
  for (const std::string& arg : args) argv.push_back(arg.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Land-cover classification and segmentation toolkit"};
  app.require_subcommand(1);

  int threads = static_cast<int>(std::thread::hardware_concurrency());
  if (threads < 1) threads = 1;
  app.add_option("--threads", threads, "worker threads for parallel stages");

  // --- taxonomy ------------------------------------------------------------
  auto* cmd_taxonomy = app.add_subcommand("taxonomy", "load and inspect the class hierarchy");
  struct {
    std::string file = "data/corine_labels.txt";
    std::vector<std::string> extra_classes;
    std::string out;
  } tax_args;
  cmd_taxonomy->add_option("--file", tax_args.file, "taxonomy definition file");
  cmd_taxonomy->add_option("--extra-classes", tax_args.extra_classes,
                           "append level-3 classes, CODE:NAME");
  cmd_taxonomy->add_option("--out", tax_args.out, "write the node table here");
  cmd_taxonomy->callback([&] {
    Taxonomy taxonomy = load_taxonomy_arg(tax_args.file, tax_args.extra_classes);
    std::cout << taxonomy.class_count(1) << " level-1, " << taxonomy.class_count(2)
              << " level-2, " << taxonomy.class_count(3) << " level-3 classes\n";
    if (!tax_args.out.empty()) {
      Table table;
      table.title = "Land cover classification labels";
      table.headers = {"Code", "Land Cover Category", "Images"};
      for (const TaxonomyNode& node : taxonomy.nodes()) {
        table.rows.push_back({std::to_string(node.code.value), node.name,
                              node.reference_image_count
                                  ? std::to_string(*node.reference_image_count)
                                  : ""});
      }
      emit(tax_args.out, "taxonomy", table);
    }
  });

  // --- tile ----------------------------------------------------------------
  auto* cmd_tile = app.add_subcommand("tile", "cut an aligned raster pair into patches");
  struct {
    std::string image, mask, legend, out;
    std::string taxonomy = "data/corine_labels.txt";
    int size = 120;
  } tile_args;
  cmd_tile->add_option("--image", tile_args.image, "RGB PNG")->required();
  cmd_tile->add_option("--mask", tile_args.mask, "grayscale class-index PNG")->required();
  cmd_tile->add_option("--legend", tile_args.legend, "legend CSV for the mask")->required();
  cmd_tile->add_option("--size", tile_args.size, "patch size in pixels")
      ->check(CLI::PositiveNumber);
  cmd_tile->add_option("--taxonomy", tile_args.taxonomy, "taxonomy definition file");
  cmd_tile->add_option("--out", tile_args.out, "patch output directory")->required();
  cmd_tile->callback([&] {
    const Taxonomy taxonomy = load_taxonomy_arg(tile_args.taxonomy, {});
    const Legend legend = load_legend(resolve_input(tile_args.legend));
    const ImageGrid image = load_image(resolve_input(tile_args.image));
    const MaskGrid mask = load_mask(resolve_input(tile_args.mask), legend.size());
    const auto patches = tile_pair(image, mask, tile_args.size);
    save_patches(tile_args.out, patches, threads);
    save_legend_sidecars(tile_args.out, legend, taxonomy);
    std::cout << "wrote " << patches.size() << " patch pairs to " << tile_args.out
              << "\n";
  });

  // --- synth ---------------------------------------------------------------
  auto* cmd_synth = app.add_subcommand("synth", "generate a synthetic raster pair");
  struct {
    SyntheticSpec spec;
    std::string taxonomy = "data/corine_labels.txt";
    std::string out;
  } synth_args;
  cmd_synth->add_option("--size", synth_args.spec.size, "square raster side")
      ->check(CLI::PositiveNumber);
  cmd_synth->add_option("--classes", synth_args.spec.num_classes, "class count")
      ->check(CLI::Range(1, 43));
  cmd_synth->add_option("--region-scale", synth_args.spec.region_scale,
                        "characteristic region size")
      ->check(CLI::PositiveNumber);
  cmd_synth->add_option("--noise-std", synth_args.spec.noise_std, "image noise sigma")
      ->check(CLI::NonNegativeNumber);
  cmd_synth->add_option("--seed", synth_args.spec.seed, "generator seed");
  cmd_synth->add_option("--taxonomy", synth_args.taxonomy, "taxonomy definition file");
  cmd_synth->add_option("--out", synth_args.out, "output directory")->required();
  cmd_synth->callback([&] {
    const Taxonomy taxonomy = load_taxonomy_arg(synth_args.taxonomy, {});
    auto [image, mask] = generate_synthetic(synth_args.spec);
    fs::create_directories(synth_args.out);
    save_image(fs::path(synth_args.out) / "image.png", image);
    save_mask(fs::path(synth_args.out) / "mask.png", mask);
    save_legend_sidecars(synth_args.out,
                         synthetic_legend(synth_args.spec.num_classes, taxonomy),
                         taxonomy);

    nlohmann::json meta;
    meta["size"] = synth_args.spec.size;
    meta["num_classes"] = synth_args.spec.num_classes;
    meta["region_scale"] = synth_args.spec.region_scale;
    meta["noise_std"] = synth_args.spec.noise_std;
    meta["seed"] = synth_args.spec.seed;
    std::ofstream meta_out(fs::path(synth_args.out) / "synth.json");
    meta_out << meta.dump(2) << '\n';
    std::cout << "wrote " << synth_args.spec.size << "x" << synth_args.spec.size
              << " pair with " << synth_args.spec.num_classes << " classes to "
              << synth_args.out << "\n";
  });

  // --- dataset -------------------------------------------------------------
  auto* cmd_dataset = app.add_subcommand("dataset", "build or tamper with manifests");
  cmd_dataset->require_subcommand(1);

  auto* cmd_build = cmd_dataset->add_subcommand("build", "scan patches into a manifest");
  struct {
    std::string patches;
    std::string taxonomy = "data/corine_labels.txt";
    std::string exclude, out;
    ManifestOptions options;
  } build_args;
  cmd_build->add_option("--patches", build_args.patches, "patch directory")->required();
  cmd_build->add_option("--taxonomy", build_args.taxonomy, "taxonomy definition file");
  cmd_build->add_option("--exclude", build_args.exclude, "patch ids to leave out");
  cmd_build->add_option("--split", build_args.options.split_fraction, "train fraction");
  cmd_build->add_option("--seed", build_args.options.seed, "split shuffle seed");
  cmd_build->add_option("--min-pixels", build_args.options.min_pixels,
                        "pixels required for a label");
  cmd_build->add_option("--out", build_args.out, "manifest CSV path")->required();
  cmd_build->callback([&] {
    if (build_args.options.split_fraction <= 0.0 ||
        build_args.options.split_fraction >= 1.0) {
      throw UsageError("--split must be in (0, 1)");
    }
    const Taxonomy taxonomy = load_taxonomy_arg(build_args.taxonomy, {});
    std::vector<std::string> exclusions;
    if (!build_args.exclude.empty()) {
      exclusions = load_exclusion_list(resolve_input(build_args.exclude));
    }
    build_args.options.threads = threads;
    Manifest manifest = build_manifest(resolve_input(build_args.patches), taxonomy,
                                       exclusions, build_args.options);
    if (fs::path(build_args.out).has_parent_path()) {
      fs::create_directories(fs::path(build_args.out).parent_path());
    }
    save_manifest(build_args.out, manifest);
    std::cout << "manifest: " << manifest.samples.size() << " samples, "
              << manifest.split_indices(Split::kTrain).size() << " train / "
              << manifest.split_indices(Split::kVal).size() << " val\n";
  });

  auto* cmd_corrupt = cmd_dataset->add_subcommand("corrupt", "plant label noise in val");
  struct {
    std::string manifest;
    std::string taxonomy = "data/corine_labels.txt";
    std::string out, ids_out;
    double fraction = 0.05;
    std::uint64_t seed = 42;
    int level = 3;
  } corrupt_args;
  cmd_corrupt->add_option("--manifest", corrupt_args.manifest, "input manifest")->required();
  cmd_corrupt->add_option("--taxonomy", corrupt_args.taxonomy, "taxonomy definition file");
  cmd_corrupt->add_option("--fraction", corrupt_args.fraction, "val fraction to tamper");
  cmd_corrupt->add_option("--seed", corrupt_args.seed, "tamper seed");
  cmd_corrupt->add_option("--level", corrupt_args.level, "label level to corrupt")
      ->check(CLI::Range(1, 3));
  cmd_corrupt->add_option("--out", corrupt_args.out, "tampered manifest path")->required();
  cmd_corrupt->add_option("--ids-out", corrupt_args.ids_out,
                          "ground-truth list of tampered ids");
  cmd_corrupt->callback([&] {
    if (corrupt_args.fraction <= 0.0 || corrupt_args.fraction >= 1.0) {
      throw UsageError("--fraction must be in (0, 1)");
    }
    const Taxonomy taxonomy = load_taxonomy_arg(corrupt_args.taxonomy, {});
    Manifest manifest = load_manifest(resolve_input(corrupt_args.manifest), taxonomy);
    auto [corrupted, ids] = corrupt_labels(manifest, taxonomy, corrupt_args.fraction,
                                           corrupt_args.seed, corrupt_args.level);
    save_manifest(corrupt_args.out, corrupted);
    if (!corrupt_args.ids_out.empty()) {
      std::ofstream out(corrupt_args.ids_out);
      out << "# level=" << corrupt_args.level << " fraction=" << corrupt_args.fraction
          << " seed=" << corrupt_args.seed << '\n';
      for (const std::string& id : ids) out << id << '\n';
    }
    std::cout << "tampered " << ids.size() << " val samples\n";
  });

  // --- stats ---------------------------------------------------------------
  auto* cmd_stats = app.add_subcommand("stats", "cardinality/density of a manifest");
  struct {
    std::string manifest;
    std::string taxonomy = "data/corine_labels.txt";
    std::string out;
    int level = 0;  // 0 = all levels
  } stats_args;
  cmd_stats->add_option("--manifest", stats_args.manifest, "manifest CSV")->required();
  cmd_stats->add_option("--taxonomy", stats_args.taxonomy, "taxonomy definition file");
  cmd_stats->add_option("--level", stats_args.level, "restrict to one level")
      ->check(CLI::Range(0, 3));
  cmd_stats->add_option("--out", stats_args.out, "write table here");
  cmd_stats->callback([&] {
    const Taxonomy taxonomy = load_taxonomy_arg(stats_args.taxonomy, {});
    Manifest manifest = load_manifest(resolve_input(stats_args.manifest), taxonomy);

    std::vector<LevelStats> stats;
    for (int level = 1; level <= 3; ++level) {
      if (stats_args.level != 0 && level != stats_args.level) continue;
      MultiLabelBatch batch;
      batch.num_labels = manifest.level_counts.at(level);
      for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
        batch.truth.push_back(manifest.labels_at(i, level));
        batch.predicted.push_back(LabelSet{level, {}});
      }
      stats.push_back(LevelStats{level, cardinality(batch), density(batch)});
    }
    Table table = stats_table(stats);
    std::cout << to_markdown(table);
    if (!stats_args.out.empty()) emit(stats_args.out, "stats", table);
  });

  // --- train ---------------------------------------------------------------
  auto* cmd_train = app.add_subcommand("train", "train a model with the two-stage schedule");
  cmd_train->require_subcommand(1);
  TrainArgs classify_args;
  add_train_options(cmd_train->add_subcommand("classify", "multi-label classifier"),
                    classify_args, Task::kClassify);
  TrainArgs segment_args;
  add_train_options(cmd_train->add_subcommand("segment", "U-Net segmenter"),
                    segment_args, Task::kSegment);
  cmd_train->get_subcommand("classify")->callback([&] { run_train(classify_args); });
  cmd_train->get_subcommand("segment")->callback([&] { run_train(segment_args); });

  // --- eval ----------------------------------------------------------------
  auto* cmd_eval = app.add_subcommand("eval", "metric report for a checkpoint");
  EvalArgs eval_args;
  add_eval_options(cmd_eval, eval_args, true);
  cmd_eval->callback([&] {
    const Taxonomy taxonomy = load_taxonomy_arg(eval_args.taxonomy, {});
    Manifest manifest = load_manifest(resolve_input(eval_args.manifest), taxonomy);
    Network<float> net = load_network(resolve_input(eval_args.checkpoint));
    const Split split = parse_split(eval_args.split);

    if (net.head == HeadKind::kClassification) {
      auto eval = evaluate_classifier(net, manifest, taxonomy, split, eval_args.level,
                                      eval_args.threshold);
      emit(eval_args.out, "match", match_table({{eval_args.split, eval.report}}));
      emit(eval_args.out, "per_class",
           class_report_table(eval.report, class_names(eval.space, taxonomy)));
      std::cout << to_markdown(match_table({{eval_args.split, eval.report}}));
    } else {
      auto eval = evaluate_segmenter(net, manifest, taxonomy, split, eval_args.level);
      emit(eval_args.out, "segmentation",
           segmentation_table(eval, class_names(eval.space, taxonomy)));
      emit(eval_args.out, "confusion",
           confusion_table(eval.confusion, class_codes(eval.space)));
      std::cout << to_markdown(
          segmentation_table(eval, class_names(eval.space, taxonomy)));
    }
  });

  // --- confusion -----------------------------------------------------------
  auto* cmd_confusion = app.add_subcommand("confusion",
                                           "row-normalized segmentation confusion matrix");
  EvalArgs confusion_args;
  add_eval_options(cmd_confusion, confusion_args, false);
  cmd_confusion->callback([&] {
    const Taxonomy taxonomy = load_taxonomy_arg(confusion_args.taxonomy, {});
    Manifest manifest = load_manifest(resolve_input(confusion_args.manifest), taxonomy);
    Network<float> net = load_network(resolve_input(confusion_args.checkpoint));
    if (net.head != HeadKind::kSegmentation) {
      throw DataError("confusion needs a segmentation checkpoint");
    }
    auto eval = evaluate_segmenter(net, manifest, taxonomy,
                                   parse_split(confusion_args.split),
                                   confusion_args.level);
    Table table = confusion_table(eval.confusion, class_codes(eval.space));
    emit(confusion_args.out, "confusion", table);
    std::cout << to_markdown(table);
  });

  // --- audit ---------------------------------------------------------------
  auto* cmd_audit = app.add_subcommand("audit", "rank samples by loss to flag mislabels");
  EvalArgs audit_args;
  double top_fraction = 0.1;
  add_eval_options(cmd_audit, audit_args, true);
  cmd_audit->add_option("--top-fraction", top_fraction, "fraction of the split to flag");
  cmd_audit->callback([&] {
    if (top_fraction <= 0.0 || top_fraction > 1.0) {
      throw UsageError("--top-fraction must be in (0, 1]");
    }
    const Taxonomy taxonomy = load_taxonomy_arg(audit_args.taxonomy, {});
    Manifest manifest = load_manifest(resolve_input(audit_args.manifest), taxonomy);
    Network<float> net = load_network(resolve_input(audit_args.checkpoint));
    if (net.head != HeadKind::kClassification) {
      throw DataError("audit needs a classification checkpoint");
    }

    auto ranked = rank_by_loss(net, manifest, taxonomy, parse_split(audit_args.split),
                               audit_args.level, audit_args.threshold);
    const auto flagged = flag_suspects(ranked, top_fraction);

    const LabelSpace space = make_label_space(manifest.legend, taxonomy,
                                              audit_args.level);
    emit(audit_args.out, "suspects", suspect_table(ranked, class_names(space, taxonomy)));
    {
      std::ofstream out(fs::path(audit_args.out) / "flagged.txt");
      for (const std::string& id : flagged) out << id << '\n';
    }

    const auto names = class_names(space, taxonomy);
    const auto name_of = [&](int c) {
      return c >= 0 && c < static_cast<int>(names.size())
                 ? names[static_cast<std::size_t>(c)]
                 : "class " + std::to_string(c);
    };
    std::cout << "flagged " << flagged.size() << " of " << ranked.size()
              << " samples\n";
    for (std::size_t i = 0; i < flagged.size() && i < 10; ++i) {
      const SuspectRecord& r = ranked[i];
      std::cout << "  " << r.patch_id << ": predicted " << name_of(r.top_class)
                << " (probability " << format_double(r.top_probability, 2)
                << "), loss " << format_double(r.loss, 2) << "\n";
    }
  });

  // --- gradcheck -----------------------------------------------------------
  auto* cmd_gradcheck = app.add_subcommand("gradcheck",
                                           "finite-difference check of every layer kind");
  int gradcheck_seeds = 10;
  double gradcheck_step = 1e-5;
  double gradcheck_tolerance = 1e-4;
  cmd_gradcheck->add_option("--seeds", gradcheck_seeds, "random nets per layer kind");
  cmd_gradcheck->add_option("--step", gradcheck_step, "finite difference step");
  cmd_gradcheck->add_option("--tolerance", gradcheck_tolerance,
                            "relative error threshold");
  bool gradcheck_failed = false;
  cmd_gradcheck->callback([&] {
    const auto results =
        run_gradcheck(gradcheck_seeds, gradcheck_step, gradcheck_tolerance);
    for (const GradCheckResult& r : results) {
      std::cout << (r.passed ? "PASS" : "FAIL") << " " << r.kind
                << " max_rel_error=" << r.max_rel_error
                << " params_checked=" << r.params_checked << "\n";
      gradcheck_failed = gradcheck_failed || !r.passed;
    }
  });

  // --- report --------------------------------------------------------------
  auto* cmd_report = app.add_subcommand("report", "bundle CSV reports into markdown");
  struct {
    std::string in, out;
  } report_args;
  cmd_report->add_option("--in", report_args.in, "directory of CSV reports")->required();
  cmd_report->add_option("--out", report_args.out, "markdown output path")->required();
  cmd_report->callback([&] {
    bundle_reports(resolve_input(report_args.in), report_args.out);
    std::cout << "wrote " << report_args.out << "\n";
  });

  try {
    app.parse(argc, const_cast<char**>(argv));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return gradcheck_failed ? 2 : 0;
}

}  // namespace terra::cli
