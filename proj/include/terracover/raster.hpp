#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "terracover/errors.hpp"

namespace terra {

// Mask value reserved for unlabeled pixels; excluded from all metrics.
inline constexpr std::uint8_t kNodata = 255;

// 8-bit RGB image, row-major, channel-interleaved. Index (y*width + x)*3 + c.
struct ImageGrid {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;

  static ImageGrid zeros(int height, int width) {
    return ImageGrid{height, width,
                     std::vector<std::uint8_t>(
                         static_cast<std::size_t>(height) * width * 3, 0)};
  }

  std::uint8_t& at(int y, int x, int c) {
    return values[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return values[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  bool operator==(const ImageGrid&) const = default;
};

// 8-bit class-index mask, row-major. 255 = nodata.
struct MaskGrid {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;

  static MaskGrid filled(int height, int width, std::uint8_t value) {
    return MaskGrid{height, width,
                    std::vector<std::uint8_t>(
                        static_cast<std::size_t>(height) * width, value)};
  }

  std::uint8_t& at(int y, int x) {
    return values[static_cast<std::size_t>(y) * width + x];
  }
  std::uint8_t at(int y, int x) const {
    return values[static_cast<std::size_t>(y) * width + x];
  }

  bool operator==(const MaskGrid&) const = default;
};

// Aligned image/mask tile cut from a larger raster pair.
struct PatchPair {
  std::string patch_id;  // "r{row}_c{col}" grid coordinates
  ImageGrid image;
  MaskGrid mask;
};

ImageGrid load_image(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const ImageGrid& image);

// `num_classes` bounds legal mask values: v < num_classes or v == 255.
MaskGrid load_mask(const std::filesystem::path& path, int num_classes);
void save_mask(const std::filesystem::path& path, const MaskGrid& mask);

// Cuts non-overlapping patch x patch tiles in row-major order. Trailing
// partial rows/columns are dropped.
std::vector<PatchPair> tile_pair(const ImageGrid& image, const MaskGrid& mask,
                                 int patch = 120);

// Inverse of tile_pair for a full grid_rows x grid_cols cover.
std::pair<ImageGrid, MaskGrid> reassemble(std::span<const PatchPair> patches,
                                          int grid_rows, int grid_cols);

std::string patch_id_for(int row, int col);
std::pair<int, int> parse_patch_id(const std::string& patch_id);

}  // namespace terra
