#include "terracover/raster.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>

namespace terra {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Decodes an 8-bit PNG into interleaved rows. `want_channels` is 1 (gray)
// or 3 (RGB); anything else in the file is an error, not converted.
std::vector<std::uint8_t> read_png(const std::filesystem::path& path,
                                   int want_channels, int& height, int& width) {
  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) throw DataError("cannot open " + path.string());

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng init failed");
  }

  std::vector<std::uint8_t> data;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("failed to decode " + path.string());
  }

  png_init_io(png, file.get());
  png_read_info(png, info);

  png_set_strip_16(png);
  png_set_packing(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE)
    png_set_palette_to_rgb(png);
  png_read_update_info(png, info);

  height = static_cast<int>(png_get_image_height(png, info));
  width = static_cast<int>(png_get_image_width(png, info));
  const int channels = png_get_channels(png, info);
  if (channels != want_channels) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(path.string() + ": expected " +
                    std::to_string(want_channels) + " channels, got " +
                    std::to_string(channels));
  }

  data.resize(static_cast<std::size_t>(height) * width * channels);
  rows.resize(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y)
    rows[static_cast<std::size_t>(y)] =
        data.data() + static_cast<std::size_t>(y) * width * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return data;
}

void write_png(const std::filesystem::path& path, const std::uint8_t* data,
               int height, int width, int channels) {
  FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) throw DataError("cannot write " + path.string());

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng init failed");
  }

  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed to encode " + path.string());
  }

  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width),
               static_cast<png_uint_32>(height), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(
        data + static_cast<std::size_t>(y) * width * channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

ImageGrid load_image(const std::filesystem::path& path) {
  ImageGrid image;
  image.values = read_png(path, 3, image.height, image.width);
  return image;
}

void save_image(const std::filesystem::path& path, const ImageGrid& image) {
  write_png(path, image.values.data(), image.height, image.width, 3);
}

MaskGrid load_mask(const std::filesystem::path& path, int num_classes) {
  MaskGrid mask;
  mask.values = read_png(path, 1, mask.height, mask.width);
  for (std::uint8_t v : mask.values) {
    if (v != kNodata && v >= num_classes) {
      throw DataError(path.string() + ": mask value " + std::to_string(v) +
                      " >= class count " + std::to_string(num_classes));
    }
  }
  return mask;
}

void save_mask(const std::filesystem::path& path, const MaskGrid& mask) {
  write_png(path, mask.values.data(), mask.height, mask.width, 1);
}

std::string patch_id_for(int row, int col) {
  return "r" + std::to_string(row) + "_c" + std::to_string(col);
}

std::pair<int, int> parse_patch_id(const std::string& patch_id) {
  int row = -1, col = -1;
  if (std::sscanf(patch_id.c_str(), "r%d_c%d", &row, &col) != 2 || row < 0 ||
      col < 0) {
    throw DataError("malformed patch id '" + patch_id + "'");
  }
  return {row, col};
}

std::vector<PatchPair> tile_pair(const ImageGrid& image, const MaskGrid& mask,
                                 int patch) {
  if (patch <= 0) throw UsageError("patch size must be positive");
  if (image.height != mask.height || image.width != mask.width) {
    throw DataError("image/mask dimension mismatch: " +
                    std::to_string(image.height) + "x" + std::to_string(image.width) +
                    " vs " + std::to_string(mask.height) + "x" +
                    std::to_string(mask.width));
  }
  const int rows = image.height / patch;
  const int cols = image.width / patch;

  std::vector<PatchPair> patches;
  patches.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      PatchPair pair;
      pair.patch_id = patch_id_for(r, c);
      pair.image = ImageGrid::zeros(patch, patch);
      pair.mask = MaskGrid::filled(patch, patch, 0);
      for (int y = 0; y < patch; ++y) {
        const int sy = r * patch + y;
        const std::size_t src_px = static_cast<std::size_t>(sy) * image.width +
                                   static_cast<std::size_t>(c) * patch;
        std::memcpy(&pair.image.at(y, 0, 0), image.values.data() + src_px * 3,
                    static_cast<std::size_t>(patch) * 3);
        std::memcpy(&pair.mask.at(y, 0), mask.values.data() + src_px,
                    static_cast<std::size_t>(patch));
      }
      patches.push_back(std::move(pair));
    }
  }
  return patches;
}

std::pair<ImageGrid, MaskGrid> reassemble(std::span<const PatchPair> patches,
                                          int grid_rows, int grid_cols) {
  if (patches.empty()) throw DataError("no patches to reassemble");
  const int patch = patches.front().image.height;

  ImageGrid image = ImageGrid::zeros(grid_rows * patch, grid_cols * patch);
  MaskGrid mask = MaskGrid::filled(grid_rows * patch, grid_cols * patch, kNodata);
  std::vector<bool> seen(static_cast<std::size_t>(grid_rows) * grid_cols, false);

  for (const PatchPair& pair : patches) {
    auto [r, c] = parse_patch_id(pair.patch_id);
    if (r >= grid_rows || c >= grid_cols) {
      throw DataError("patch " + pair.patch_id + " outside grid");
    }
    if (pair.image.height != patch || pair.image.width != patch ||
        pair.mask.height != patch || pair.mask.width != patch) {
      throw DataError("patch " + pair.patch_id + " has inconsistent size");
    }
    std::size_t slot = static_cast<std::size_t>(r) * grid_cols + c;
    if (seen[slot]) throw DataError("duplicate patch " + pair.patch_id);
    seen[slot] = true;

    for (int y = 0; y < patch; ++y) {
      const std::size_t dst_px =
          static_cast<std::size_t>(r * patch + y) * image.width +
          static_cast<std::size_t>(c) * patch;
      std::memcpy(image.values.data() + dst_px * 3, pair.image.values.data() +
                      static_cast<std::size_t>(y) * patch * 3,
                  static_cast<std::size_t>(patch) * 3);
      std::memcpy(mask.values.data() + dst_px,
                  pair.mask.values.data() + static_cast<std::size_t>(y) * patch,
                  static_cast<std::size_t>(patch));
    }
  }

  for (int r = 0; r < grid_rows; ++r) {
    for (int c = 0; c < grid_cols; ++c) {
      if (!seen[static_cast<std::size_t>(r) * grid_cols + c]) {
        throw DataError("missing patch " + patch_id_for(r, c));
      }
    }
  }
  return {std::move(image), std::move(mask)};
}

}  // namespace terra
