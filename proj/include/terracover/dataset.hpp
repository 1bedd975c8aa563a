#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "terracover/raster.hpp"
#include "terracover/taxonomy.hpp"

namespace terra {

enum class Split { kTrain, kVal };

// Mapping from mask pixel values (dataset-local level-3 indices) to CORINE
// codes. Masks on disk store these compact values, never raw codes.
struct LegendEntry {
  int index = 0;  // mask pixel value
  int corine_code = 0;
  std::string name;
};

struct Legend {
  std::vector<LegendEntry> entries;

  int size() const { return static_cast<int>(entries.size()); }
  int code_of(int index) const;
};

void save_legend(const std::filesystem::path& path, const Legend& legend);
Legend load_legend(const std::filesystem::path& path);

// Writes the level-1/2/3 legend sidecars for a patch directory.
void save_legend_sidecars(const std::filesystem::path& dir, const Legend& legend,
                          const Taxonomy& taxonomy);

// Compact label space for one level of a dataset: the legend's distinct
// (lifted) codes in ascending order. Training targets and segmentation
// channels live in this space; the manifest stores taxonomy-wide indices.
struct LabelSpace {
  int level = 3;
  std::vector<int> codes;           // ascending CORINE codes
  std::vector<int> global_indices;  // taxonomy index per local class
  std::vector<int> mask_remap;      // legend mask value -> local class

  int size() const { return static_cast<int>(codes.size()); }
  int local_of_global(int global_index) const;
};

LabelSpace make_label_space(const Legend& legend, const Taxonomy& taxonomy,
                            int level);

struct Sample {
  std::string patch_id;
  std::filesystem::path image_path;
  std::filesystem::path mask_path;
  LabelSet labels_l1;  // taxonomy-wide indices per level
  LabelSet labels_l2;
  LabelSet labels_l3;
  Split split = Split::kTrain;
};

struct Manifest {
  std::vector<Sample> samples;
  std::uint64_t seed = 0;
  std::map<int, int> level_counts;  // level -> taxonomy class count
  Legend legend;

  const LabelSet& labels_at(std::size_t i, int level) const;
  std::vector<std::size_t> split_indices(Split split) const;
};

// Distinct non-nodata values present in at least `min_pixels` pixels.
// Indices are in the mask's own (legend-local) space.
LabelSet derive_labels(const MaskGrid& mask, int num_classes, int min_pixels = 1);

struct ManifestOptions {
  double split_fraction = 0.8;
  std::uint64_t seed = 42;
  int min_pixels = 1;
  int threads = 1;  // parallel mask scanning; split stays single-threaded
};

// Scans `{id}_img.png` / `{id}_mask.png` pairs, derives level-3 labels from
// mask content, lifts them to levels 2 and 1, and assigns a deterministic
// seeded train/val split over the non-excluded ids.
Manifest build_manifest(const std::filesystem::path& patch_dir,
                        const Taxonomy& taxonomy,
                        std::span<const std::string> exclusion_list,
                        const ManifestOptions& options = {});

void save_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest load_manifest(const std::filesystem::path& path, const Taxonomy& taxonomy);

std::vector<std::string> load_exclusion_list(const std::filesystem::path& path);

enum class AugmentOp { kHFlip, kVFlip, kRot90, kRot180, kRot270 };

// Applies the same lossless dihedral transform to image and mask.
PatchPair augment(const PatchPair& pair, AugmentOp op);

struct SyntheticSpec {
  int size = 1200;           // square raster side, pixels
  int num_classes = 3;
  int region_scale = 150;    // characteristic region size, pixels
  std::vector<std::array<std::uint8_t, 3>> color_map;  // empty -> default palette
  double noise_std = 10.0;
  std::uint64_t seed = 42;
};

// Pairwise colors must be separated by >= 4 * noise_std in some channel.
std::vector<std::array<std::uint8_t, 3>> default_palette(int num_classes);
void validate_spec(const SyntheticSpec& spec);

// Seeded jittered-grid Voronoi partition with one class per region; image is
// per-pixel class color plus Gaussian noise clipped to [0, 255].
std::pair<ImageGrid, MaskGrid> generate_synthetic(const SyntheticSpec& spec);

// Legend for a synthetic dataset: local class i maps to a level-3 CORINE
// code chosen to spread across the hierarchy.
Legend synthetic_legend(int num_classes, const Taxonomy& taxonomy);

// Replaces one label of a seeded random fraction of val samples with a
// different class from the dataset's label space at `level`. Returns the
// tampered manifest and the ground-truth list of corrupted ids.
std::pair<Manifest, std::vector<std::string>> corrupt_labels(
    const Manifest& manifest, const Taxonomy& taxonomy, double fraction,
    std::uint64_t seed, int level = 3);

// Writes `{id}_img.png` / `{id}_mask.png` for every patch.
void save_patches(const std::filesystem::path& dir,
                  std::span<const PatchPair> patches, int threads = 1);

}  // namespace terra
