#include <fstream>

#include "doctest.h"
#include "terracover/cli.hpp"
#include "test_helpers.hpp"

using namespace terra;

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string tax_file() {
  return (testing::repo_root() / "data" / "corine_labels.txt").string();
}

}  // namespace

TEST_CASE("usage errors exit 1, missing data exits 2") {
  CHECK(cli::run({"no-such-verb"}) == 1);
  CHECK(cli::run({"tile", "--size", "0", "--image", "x", "--mask", "y", "--legend",
                  "z", "--out", "w"}) == 1);
  CHECK(cli::run({"stats", "--manifest", "/definitely/missing.csv", "--taxonomy",
                  tax_file()}) == 2);
  CHECK(cli::run({}) == 1);  // a verb is required
}

TEST_CASE("taxonomy verb loads and reports") {
  testing::TempDir dir("cli");
  CHECK(cli::run({"taxonomy", "--file", tax_file(),
                  "--out", (dir.path() / "tax").string()}) == 0);
  CHECK(std::filesystem::exists(dir.path() / "tax" / "taxonomy.csv"));
  const std::string csv = slurp(dir.path() / "tax" / "taxonomy.csv");
  CHECK(csv.find("Coniferous forest") != std::string::npos);
}

TEST_CASE("synth then tile then dataset build round trips") {
  testing::TempDir dir("cli");
  const auto raster = dir.path() / "raster";
  const auto patches = dir.path() / "patches";

  CHECK(cli::run({"synth", "--size", "256", "--classes", "3", "--region-scale", "64",
                  "--noise-std", "10", "--seed", "5", "--taxonomy", tax_file(),
                  "--out", raster.string()}) == 0);
  CHECK(std::filesystem::exists(raster / "image.png"));
  CHECK(std::filesystem::exists(raster / "mask.png"));
  CHECK(std::filesystem::exists(raster / "legend_l3.csv"));
  CHECK(std::filesystem::exists(raster / "synth.json"));

  CHECK(cli::run({"tile", "--image", (raster / "image.png").string(), "--mask",
                  (raster / "mask.png").string(), "--legend",
                  (raster / "legend_l3.csv").string(), "--size", "64", "--taxonomy",
                  tax_file(), "--out", patches.string()}) == 0);
  CHECK(std::filesystem::exists(patches / "r0_c0_img.png"));
  CHECK(std::filesystem::exists(patches / "r3_c3_mask.png"));
  CHECK(std::filesystem::exists(patches / "legend_l1.csv"));

  CHECK(cli::run({"dataset", "build", "--patches", patches.string(), "--taxonomy",
                  tax_file(), "--seed", "42", "--out",
                  (dir.path() / "manifest.csv").string()}) == 0);
  const std::string manifest = slurp(dir.path() / "manifest.csv");
  CHECK(manifest.find("patch_id,image,mask,split,l1,l2,l3") != std::string::npos);
  CHECK(manifest.find("# seed=42") != std::string::npos);

  CHECK(cli::run({"stats", "--manifest", (dir.path() / "manifest.csv").string(),
                  "--taxonomy", tax_file(), "--out",
                  (dir.path() / "stats").string()}) == 0);
  CHECK(std::filesystem::exists(dir.path() / "stats" / "stats.csv"));

  // Same seed reproduces the synthetic pair byte for byte.
  const auto raster2 = dir.path() / "raster2";
  CHECK(cli::run({"synth", "--size", "256", "--classes", "3", "--region-scale", "64",
                  "--noise-std", "10", "--seed", "5", "--taxonomy", tax_file(),
                  "--out", raster2.string()}) == 0);
  CHECK(slurp(raster / "image.png") == slurp(raster2 / "image.png"));
  CHECK(slurp(raster / "mask.png") == slurp(raster2 / "mask.png"));
}

TEST_CASE("train, eval, corrupt, audit, and report verbs run end to end") {
  testing::TempDir dir("cli");
  const auto raster = dir.path() / "raster";
  const auto patches = dir.path() / "patches";
  const auto manifest = dir.path() / "manifest.csv";

  REQUIRE(cli::run({"synth", "--size", "256", "--classes", "3", "--region-scale",
                    "64", "--noise-std", "10", "--seed", "7", "--taxonomy", tax_file(),
                    "--out", raster.string()}) == 0);
  REQUIRE(cli::run({"tile", "--image", (raster / "image.png").string(), "--mask",
                    (raster / "mask.png").string(), "--legend",
                    (raster / "legend_l3.csv").string(), "--size", "64", "--taxonomy",
                    tax_file(), "--out", patches.string()}) == 0);
  REQUIRE(cli::run({"dataset", "build", "--patches", patches.string(), "--taxonomy",
                    tax_file(), "--out", manifest.string()}) == 0);

  // Tiny classifier run with a config file providing the epochs.
  const auto config = dir.path() / "train.cfg";
  {
    std::ofstream out(config);
    out << "stage1-epochs=1\nstage2-epochs=0\nbatch-size=4\nstem-channels=4\n";
    out << "stage-channels=4 6 8\nseed=3\n";
  }
  const auto ckpt = dir.path() / "classifier.ckpt";
  const auto run_dir = dir.path() / "run";
  REQUIRE(cli::run({"train", "classify", "--manifest", manifest.string(),
                    "--taxonomy", tax_file(), "--config", config.string(),
                    "--checkpoint", ckpt.string(), "--out", run_dir.string()}) == 0);
  CHECK(std::filesystem::exists(ckpt));
  CHECK(std::filesystem::exists(run_dir / "log.csv"));
  CHECK(std::filesystem::exists(run_dir / "run.json"));
  // The config file, not the defaults, decided the schedule: one epoch row.
  CHECK(slurp(run_dir / "run.json").find("\"stage1_epochs\": 1,") != std::string::npos);
  const std::string log = slurp(run_dir / "log.csv");
  CHECK(std::count(log.begin(), log.end(), '\n') == 2);  // header + 1 epoch

  const auto eval_dir = dir.path() / "eval";
  CHECK(cli::run({"eval", "--checkpoint", ckpt.string(), "--manifest",
                  manifest.string(), "--taxonomy", tax_file(), "--out",
                  eval_dir.string()}) == 0);
  CHECK(std::filesystem::exists(eval_dir / "match.csv"));
  CHECK(std::filesystem::exists(eval_dir / "per_class.md"));

  const auto corrupted = dir.path() / "corrupted.csv";
  const auto ids_out = dir.path() / "tampered.txt";
  CHECK(cli::run({"dataset", "corrupt", "--manifest", manifest.string(),
                  "--taxonomy", tax_file(), "--fraction", "0.5", "--seed", "9",
                  "--out", corrupted.string(), "--ids-out", ids_out.string()}) == 0);
  CHECK(std::filesystem::exists(corrupted));
  CHECK(slurp(ids_out).find("fraction=0.5") != std::string::npos);

  const auto audit_dir = dir.path() / "audit";
  CHECK(cli::run({"audit", "--checkpoint", ckpt.string(), "--manifest",
                  corrupted.string(), "--taxonomy", tax_file(), "--top-fraction",
                  "0.5", "--out", audit_dir.string()}) == 0);
  CHECK(std::filesystem::exists(audit_dir / "suspects.csv"));
  CHECK(std::filesystem::exists(audit_dir / "flagged.txt"));

  const auto report_path = dir.path() / "report.md";
  CHECK(cli::run({"report", "--in", eval_dir.string(), "--out",
                  report_path.string()}) == 0);
  const std::string report = slurp(report_path);
  CHECK(report.find("# Report bundle") != std::string::npos);
  CHECK(report.find("| Class") != std::string::npos);

  // Segmentation path: train a tiny U-Net with the transferred encoder.
  const auto seg_ckpt = dir.path() / "segmenter.ckpt";
  REQUIRE(cli::run({"train", "segment", "--manifest", manifest.string(),
                    "--taxonomy", tax_file(), "--stage1-epochs", "1",
                    "--stage2-epochs", "0", "--batch-size", "4", "--stem-channels",
                    "4", "--stage-channels", "4", "6", "8", "--seed", "3",
                    "--encoder-from", ckpt.string(), "--checkpoint",
                    seg_ckpt.string()}) == 0);
  const auto confusion_dir = dir.path() / "confusion";
  CHECK(cli::run({"confusion", "--checkpoint", seg_ckpt.string(), "--manifest",
                  manifest.string(), "--taxonomy", tax_file(), "--out",
                  confusion_dir.string()}) == 0);
  CHECK(std::filesystem::exists(confusion_dir / "confusion.csv"));

  // A classification checkpoint is rejected by confusion.
  CHECK(cli::run({"confusion", "--checkpoint", ckpt.string(), "--manifest",
                  manifest.string(), "--taxonomy", tax_file(), "--out",
                  (dir.path() / "bad").string()}) == 2);
}

TEST_CASE("gradcheck verb passes with a small seed count") {
  CHECK(cli::run({"gradcheck", "--seeds", "1"}) == 0);
}

TEST_CASE("TERRACOVER_DATA_DIR resolves relative inputs") {
  testing::TempDir dir("cli");
  std::filesystem::create_directories(dir.path() / "data");
  std::filesystem::copy_file(testing::repo_root() / "data" / "corine_labels.txt",
                             dir.path() / "data" / "labels.txt");
  setenv("TERRACOVER_DATA_DIR", dir.path().c_str(), 1);
  CHECK(cli::run({"taxonomy", "--file", "data/labels.txt"}) == 0);
  unsetenv("TERRACOVER_DATA_DIR");
  CHECK(cli::run({"taxonomy", "--file", "data/labels.txt"}) == 2);
}
