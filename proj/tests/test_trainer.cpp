#include <cstring>
#include <fstream>

#include "doctest.h"
#include "terracover/audit.hpp"
#include "terracover/trainer.hpp"
#include "test_helpers.hpp"

using namespace terra;

namespace {

// Small separable dataset: 256x256 synthetic raster tiled into 16 patches
// of 64x64 (64 divides by 8, so the U-Net shapes close).
Manifest make_synthetic_manifest(const std::filesystem::path& dir, int num_classes,
                                 std::uint64_t seed) {
  SyntheticSpec spec;
  spec.size = 256;
  spec.num_classes = num_classes;
  spec.region_scale = 64;
  spec.noise_std = 10.0;
  spec.seed = seed;
  auto [image, mask] = generate_synthetic(spec);
  auto patches = tile_pair(image, mask, 64);
  save_patches(dir, patches);
  save_legend_sidecars(dir, synthetic_legend(num_classes, testing::corine_taxonomy()),
                       testing::corine_taxonomy());
  ManifestOptions options;
  options.seed = seed;
  return build_manifest(dir, testing::corine_taxonomy(), {}, options);
}

TrainConfig tiny_config(Task task) {
  TrainConfig config;
  config.task = task;
  config.level = 3;
  config.stage1_epochs = 1;
  config.stage2_epochs = 1;
  config.batch_size = 4;
  config.seed = 7;
  config.verbose = false;
  config.encoder.stem_channels = 4;
  config.encoder.stage_channels = {6, 8, 10};
  return config;
}

std::string file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

TEST_CASE("zero epochs returns an initialized net and empty log") {
  testing::TempDir dir("trainer");
  Manifest manifest = make_synthetic_manifest(dir.path(), 3, 11);
  TrainConfig config = tiny_config(Task::kClassify);
  config.stage1_epochs = 0;
  config.stage2_epochs = 0;

  auto [net, log] = train_classifier(config, manifest, testing::corine_taxonomy());
  CHECK(log.rows.empty());
  CHECK(net.parameter_count() > 0);

  auto fresh = build_classifier<float>(
      [&] {
        EncoderSpec spec = config.encoder;
        spec.seed = config.seed;
        return spec;
      }(),
      3);
  auto trained = net.parameters();
  auto reference = fresh.parameters();
  for (std::size_t i = 0; i < trained.size(); ++i) {
    CHECK((trained[i]->value.values() == reference[i]->value.values()).all());
  }
}

TEST_CASE("stage 1 leaves the frozen body bitwise unchanged") {
  testing::TempDir dir("trainer");
  Manifest manifest = make_synthetic_manifest(dir.path(), 3, 12);

  TrainConfig config = tiny_config(Task::kClassify);
  config.stage1_epochs = 2;
  config.stage2_epochs = 0;
  auto [net, log] = train_classifier(config, manifest, testing::corine_taxonomy());

  EncoderSpec spec = config.encoder;
  spec.seed = config.seed;
  auto reference = build_classifier<float>(spec, 3);
  auto trained_params = net.parameters();
  auto reference_params = reference.parameters();
  REQUIRE(trained_params.size() == reference_params.size());

  bool head_changed = false;
  for (std::size_t i = 0; i < trained_params.size(); ++i) {
    const bool same =
        (trained_params[i]->value.values() == reference_params[i]->value.values())
            .all();
    if (trained_params[i]->name.starts_with("head.")) {
      head_changed = head_changed || !same;
    } else {
      CHECK(same);
    }
  }
  CHECK(head_changed);
}

TEST_CASE("segmenter stage 1 freezes the encoder only") {
  testing::TempDir dir("trainer");
  Manifest manifest = make_synthetic_manifest(dir.path(), 3, 13);

  TrainConfig config = tiny_config(Task::kSegment);
  config.stage1_epochs = 1;
  config.stage2_epochs = 0;
  auto [net, log] = train_segmenter(config, manifest, testing::corine_taxonomy());

  EncoderSpec spec = config.encoder;
  spec.seed = config.seed;
  auto reference = build_unet<float>(spec, 3);
  auto trained_params = net.parameters();
  auto reference_params = reference.parameters();

  bool decoder_changed = false;
  for (std::size_t i = 0; i < trained_params.size(); ++i) {
    const bool same =
        (trained_params[i]->value.values() == reference_params[i]->value.values())
            .all();
    if (trained_params[i]->name.starts_with("enc.")) {
      CHECK(same);
    } else {
      decoder_changed = decoder_changed || !same;
    }
  }
  CHECK(decoder_changed);
}

TEST_CASE("training is deterministic in config and seed") {
  testing::TempDir dir("trainer");
  Manifest manifest = make_synthetic_manifest(dir.path(), 3, 14);

  TrainConfig config = tiny_config(Task::kClassify);
  config.checkpoint_path = dir.path() / "a.ckpt";
  auto [net_a, log_a] = train_classifier(config, manifest, testing::corine_taxonomy());
  config.checkpoint_path = dir.path() / "b.ckpt";
  auto [net_b, log_b] = train_classifier(config, manifest, testing::corine_taxonomy());

  REQUIRE(log_a.rows.size() == log_b.rows.size());
  for (std::size_t i = 0; i < log_a.rows.size(); ++i) {
    CHECK(log_a.rows[i].train_loss == log_b.rows[i].train_loss);
    CHECK(log_a.rows[i].val_loss == log_b.rows[i].val_loss);
    CHECK(log_a.rows[i].metric == log_b.rows[i].metric);
  }
  CHECK(file_bytes(dir.path() / "a.ckpt") == file_bytes(dir.path() / "b.ckpt"));
}

TEST_CASE("encoder transfer reproduces classifier activations in the U-Net") {
  testing::TempDir dir("trainer");
  Manifest manifest = make_synthetic_manifest(dir.path(), 3, 15);

  TrainConfig config = tiny_config(Task::kClassify);
  config.checkpoint_path = dir.path() / "classifier.ckpt";
  auto [classifier, log] =
      train_classifier(config, manifest, testing::corine_taxonomy());

  // The checkpoint holds the best-val epoch; reload it into a fresh
  // classifier so both nets carry exactly the transferred weights.
  auto best_classifier = load_network(dir.path() / "classifier.ckpt");

  EncoderSpec spec = config.encoder;
  spec.seed = 999;  // different random init, replaced by the transfer
  auto unet = build_unet<float>(spec, 3);
  load_checkpoint(dir.path() / "classifier.ckpt", unet, "enc.");

  Tensor<float> input({1, 3, 64, 64});
  Rng rng(5);
  for (Eigen::Index i = 0; i < input.size(); ++i) {
    input.values()[i] = static_cast<float>(rng.uniform(0.0, 1.0));
  }
  best_classifier.forward(input);
  Eigen::ArrayXf tap = best_classifier.activation("enc.s3.res.relu2").values();
  unet.forward(input);
  CHECK((unet.activation("enc.s3.res.relu2").values() == tap).all());
}

TEST_CASE("stage-1 training reduces the loss on the separable benchmark") {
  int improved = 0;
  for (std::uint64_t seed : {21ULL, 22ULL, 23ULL}) {
    testing::TempDir dir("trainer");
    Manifest manifest = make_synthetic_manifest(dir.path(), 3, seed);
    TrainConfig config = tiny_config(Task::kClassify);
    config.stage1_epochs = 3;
    config.stage2_epochs = 0;
    config.seed = seed;
    auto [net, log] = train_classifier(config, manifest, testing::corine_taxonomy());
    REQUIRE(log.rows.size() == 3);
    if (log.rows.back().train_loss < log.rows.front().train_loss) ++improved;
  }
  CHECK(improved >= 2);
}

TEST_CASE("classifier evaluation respects the decision threshold") {
  testing::TempDir dir("trainer");
  Manifest manifest = make_synthetic_manifest(dir.path(), 3, 16);
  TrainConfig config = tiny_config(Task::kClassify);
  config.stage1_epochs = 0;
  config.stage2_epochs = 0;
  auto [net, log] = train_classifier(config, manifest, testing::corine_taxonomy());

  // Threshold 1.0: sigmoid(logit) < 1 always, so predictions are empty and
  // every sample with labels counts as fully incorrect.
  auto eval = evaluate_classifier(net, manifest, testing::corine_taxonomy(),
                                  Split::kVal, 3, 1.0);
  CHECK(eval.report.match.incorrect == 1.0);
  CHECK(eval.report.match.exact == 0.0);
}

TEST_CASE("argmax ties break to the lowest class index") {
  testing::TempDir dir("trainer");
  Manifest manifest = make_synthetic_manifest(dir.path(), 3, 17);
  TrainConfig config = tiny_config(Task::kSegment);
  config.stage1_epochs = 0;
  config.stage2_epochs = 0;
  auto [net, log] = train_segmenter(config, manifest, testing::corine_taxonomy());

  // All-zero weights make every class logit equal at every pixel.
  for (Param<float>* p : net.parameters()) p->value.values().setZero();
  auto eval =
      evaluate_segmenter(net, manifest, testing::corine_taxonomy(), Split::kVal, 3);
  // Every prediction lands in class 0: only column 0 has counts.
  for (int t = 0; t < eval.confusion.num_classes(); ++t) {
    for (int p = 1; p < eval.confusion.num_classes(); ++p) {
      CHECK(eval.confusion.count(t, p) == 0);
    }
  }
}

TEST_CASE("run artifacts are written when a run dir is set") {
  testing::TempDir dir("trainer");
  Manifest manifest = make_synthetic_manifest(dir.path(), 3, 18);
  TrainConfig config = tiny_config(Task::kClassify);
  config.stage1_epochs = 1;
  config.stage2_epochs = 0;
  config.run_dir = dir.path() / "run";
  auto [net, log] = train_classifier(config, manifest, testing::corine_taxonomy());
  write_run_artifacts(config, log, "{\"f1\": 0.5}");

  CHECK(std::filesystem::exists(config.run_dir / "log.csv"));
  CHECK(std::filesystem::exists(config.run_dir / "run.json"));
  const std::string meta = file_bytes(config.run_dir / "run.json");
  CHECK(meta.find("\"seed\"") != std::string::npos);
  CHECK(meta.find("\"git_describe\"") != std::string::npos);
}

TEST_CASE("load_network rebuilds the architecture from a checkpoint") {
  testing::TempDir dir("trainer");
  Manifest manifest = make_synthetic_manifest(dir.path(), 3, 19);
  TrainConfig config = tiny_config(Task::kSegment);
  config.stage1_epochs = 1;
  config.stage2_epochs = 0;
  config.checkpoint_path = dir.path() / "segmenter.ckpt";
  auto [net, log] = train_segmenter(config, manifest, testing::corine_taxonomy());

  auto reloaded = load_network(dir.path() / "segmenter.ckpt");
  CHECK(reloaded.head == HeadKind::kSegmentation);
  Tensor<float> input({1, 3, 64, 64});
  input.values().setConstant(0.5f);
  auto out = reloaded.forward(input);
  CHECK(out.shape() == std::vector<Eigen::Index>{1, 3, 64, 64});
}

TEST_CASE("rank_by_loss orders the split and flag_suspects takes the ceiling") {
  testing::TempDir dir("audit");
  Manifest manifest = make_synthetic_manifest(dir.path(), 3, 20);
  TrainConfig config = tiny_config(Task::kClassify);
  config.stage1_epochs = 0;
  config.stage2_epochs = 0;
  auto [net, log] = train_classifier(config, manifest, testing::corine_taxonomy());

  auto ranked =
      rank_by_loss(net, manifest, testing::corine_taxonomy(), Split::kVal, 3);
  CHECK(ranked.size() == manifest.split_indices(Split::kVal).size());
  for (std::size_t i = 1; i < ranked.size(); ++i) {
    CHECK(ranked[i - 1].loss >= ranked[i].loss);
  }

  auto again =
      rank_by_loss(net, manifest, testing::corine_taxonomy(), Split::kVal, 3);
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    CHECK(again[i].patch_id == ranked[i].patch_id);
    CHECK(again[i].loss == ranked[i].loss);
  }

  CHECK(flag_suspects(ranked, 1.0).size() == ranked.size());
  std::vector<SuspectRecord> ten(10);
  for (int i = 0; i < 10; ++i) ten[static_cast<std::size_t>(i)].patch_id = "p" + std::to_string(i);
  CHECK(flag_suspects(ten, 0.25).size() == 3);  // ceil(2.5)
  CHECK_THROWS_AS(flag_suspects(ten, 0.0), UsageError);
  CHECK_THROWS_AS(flag_suspects(ten, 1.5), UsageError);

  // Monotonicity: smaller fractions give subsets.
  auto small = flag_suspects(ranked, 0.2);
  auto large = flag_suspects(ranked, 0.6);
  for (const auto& id : small) {
    CHECK(std::find(large.begin(), large.end(), id) != large.end());
  }
}

TEST_CASE("a planted label flip on a well-fit model ranks first") {
  testing::TempDir dir("audit");
  Manifest manifest = make_synthetic_manifest(dir.path(), 3, 24);

  TrainConfig config = tiny_config(Task::kClassify);
  config.stage1_epochs = 4;
  config.stage2_epochs = 2;
  auto [net, log] = train_classifier(config, manifest, testing::corine_taxonomy());

  // Flip one label on one val sample.
  auto [corrupted, ids] =
      corrupt_labels(manifest, testing::corine_taxonomy(), 0.26, 99, 3);
  REQUIRE(ids.size() == 1);

  auto ranked =
      rank_by_loss(net, corrupted, testing::corine_taxonomy(), Split::kVal, 3);
  auto flagged = flag_suspects(ranked, 0.3);
  CHECK(std::find(flagged.begin(), flagged.end(), ids.front()) != flagged.end());
}
