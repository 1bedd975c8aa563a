#include "terracover/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "terracover/parallel.hpp"
#include "terracover/rng.hpp"

namespace fs = std::filesystem;

namespace terra {

namespace {

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) fields.push_back(field);
  if (!line.empty() && line.back() == sep) fields.emplace_back();
  for (std::string& f : fields) {
    while (!f.empty() && (f.back() == '\r' || f.back() == ' ')) f.pop_back();
  }
  return fields;
}

int parse_int(const std::string& field, const std::string& context) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size()) {
    throw DataError(context + ": bad integer '" + field + "'");
  }
  return value;
}

std::string join_indices(const LabelSet& labels) {
  std::string out;
  for (int index : labels.indices) {
    if (!out.empty()) out += ';';
    out += std::to_string(index);
  }
  return out;
}

LabelSet parse_indices(const std::string& field, int level) {
  LabelSet labels;
  labels.level = level;
  if (field.empty()) return labels;
  for (const std::string& part : split_fields(field, ';')) {
    labels.indices.insert(parse_int(part, "label set"));
  }
  return labels;
}

}  // namespace

int Legend::code_of(int index) const {
  if (index < 0 || index >= size()) {
    throw DataError("legend has no entry for mask value " + std::to_string(index));
  }
  return entries[static_cast<std::size_t>(index)].corine_code;
}

void save_legend(const fs::path& path, const Legend& legend) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "index,corine_code,name\n";
  for (const LegendEntry& entry : legend.entries) {
    out << entry.index << ',' << entry.corine_code << ',' << entry.name << '\n';
  }
}

Legend load_legend(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open legend file: " + path.string());
  Legend legend;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    if (first) {  // header
      first = false;
      continue;
    }
    auto fields = split_fields(line, ',');
    if (fields.size() < 2) throw DataError("legend line malformed: " + line);
    LegendEntry entry;
    entry.index = parse_int(fields[0], "legend");
    entry.corine_code = parse_int(fields[1], "legend");
    entry.name = fields.size() > 2 ? fields[2] : "";
    legend.entries.push_back(std::move(entry));
  }
  for (int i = 0; i < legend.size(); ++i) {
    if (legend.entries[static_cast<std::size_t>(i)].index != i) {
      throw DataError("legend indices must be contiguous from 0");
    }
  }
  return legend;
}

void save_legend_sidecars(const fs::path& dir, const Legend& legend,
                          const Taxonomy& taxonomy) {
  save_legend(dir / "legend_l3.csv", legend);
  for (int level = 1; level <= 2; ++level) {
    LabelSpace space = make_label_space(legend, taxonomy, level);
    Legend lifted;
    for (int i = 0; i < space.size(); ++i) {
      ClassCode code{space.codes[static_cast<std::size_t>(i)]};
      lifted.entries.push_back(LegendEntry{i, code.value, taxonomy.node(code).name});
    }
    save_legend(dir / ("legend_l" + std::to_string(level) + ".csv"), lifted);
  }
}

LabelSpace make_label_space(const Legend& legend, const Taxonomy& taxonomy,
                            int level) {
  std::set<int> codes;
  for (const LegendEntry& entry : legend.entries) {
    ClassCode code{entry.corine_code};
    if (!taxonomy.has_code(code)) {
      throw DataError("legend code " + std::to_string(entry.corine_code) +
                      " is not in the taxonomy");
    }
    codes.insert(lift_code(code, level).value);
  }

  LabelSpace space;
  space.level = level;
  space.codes.assign(codes.begin(), codes.end());
  for (int code : space.codes) {
    space.global_indices.push_back(taxonomy.code_to_index(ClassCode{code}, level));
  }
  space.mask_remap.resize(static_cast<std::size_t>(legend.size()));
  for (int v = 0; v < legend.size(); ++v) {
    const int lifted = lift_code(ClassCode{legend.code_of(v)}, level).value;
    const auto it = std::lower_bound(space.codes.begin(), space.codes.end(), lifted);
    space.mask_remap[static_cast<std::size_t>(v)] =
        static_cast<int>(it - space.codes.begin());
  }
  return space;
}

int LabelSpace::local_of_global(int global_index) const {
  for (std::size_t i = 0; i < global_indices.size(); ++i) {
    if (global_indices[i] == global_index) return static_cast<int>(i);
  }
  return -1;
}

const LabelSet& Manifest::labels_at(std::size_t i, int level) const {
  const Sample& sample = samples[i];
  switch (level) {
    case 1: return sample.labels_l1;
    case 2: return sample.labels_l2;
    case 3: return sample.labels_l3;
  }
  throw DataError("invalid level " + std::to_string(level));
}

std::vector<std::size_t> Manifest::split_indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == split) out.push_back(i);
  }
  return out;
}

LabelSet derive_labels(const MaskGrid& mask, int num_classes, int min_pixels) {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (std::uint8_t v : mask.values) {
    if (v == kNodata) continue;
    if (v >= num_classes) {
      throw DataError("mask value " + std::to_string(v) + " >= class count " +
                      std::to_string(num_classes));
    }
    ++counts[v];
  }
  LabelSet labels;
  labels.level = 3;
  for (int c = 0; c < num_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] >= min_pixels) labels.indices.insert(c);
  }
  return labels;
}

Manifest build_manifest(const fs::path& patch_dir, const Taxonomy& taxonomy,
                        std::span<const std::string> exclusion_list,
                        const ManifestOptions& options) {
  if (options.split_fraction <= 0.0 || options.split_fraction >= 1.0) {
    throw UsageError("split fraction must be in (0, 1)");
  }

  Manifest manifest;
  manifest.seed = options.seed;
  manifest.legend = load_legend(patch_dir / "legend_l3.csv");
  for (int level = 1; level <= 3; ++level) {
    manifest.level_counts[level] = taxonomy.class_count(level);
  }

  std::map<std::string, std::pair<bool, bool>> found;  // id -> (image, mask)
  for (const auto& entry : fs::directory_iterator(patch_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.ends_with("_img.png")) {
      found[name.substr(0, name.size() - 8)].first = true;
    } else if (name.ends_with("_mask.png")) {
      found[name.substr(0, name.size() - 9)].second = true;
    }
  }
  for (const auto& [id, present] : found) {
    if (!present.first || !present.second) {
      throw DataError("orphan patch file for id '" + id + "' (missing " +
                      (present.first ? "mask" : "image") + ")");
    }
  }

  std::set<std::string> excluded;
  for (const std::string& id : exclusion_list) {
    if (!found.contains(id)) {
      std::cerr << "warning: exclusion list id '" << id
                << "' not found in patch directory\n";
    }
    excluded.insert(id);
  }

  std::vector<std::string> ids;
  for (const auto& [id, present] : found) {
    if (!excluded.contains(id)) ids.push_back(id);
  }
  if (ids.empty()) throw DataError("no patch pairs left after exclusions");

  // Seeded Fisher-Yates over the sorted id list decides the split.
  std::vector<std::string> shuffled = ids;
  Rng rng(options.seed);
  rng.shuffle(shuffled);
  const auto train_count = static_cast<std::size_t>(std::clamp<double>(
      std::ceil(options.split_fraction * static_cast<double>(ids.size()) - 1e-9),
      0.0, static_cast<double>(ids.size())));
  std::set<std::string> train_ids(shuffled.begin(),
                                  shuffled.begin() + static_cast<std::ptrdiff_t>(train_count));

  // Masks are scanned in parallel; every other stage is single-threaded and
  // order-stable, so the manifest is byte-identical for any thread count.
  std::vector<Sample> samples(ids.size());
  std::vector<std::string> errors(ids.size());
  parallel_for(ids.size(), options.threads, [&](std::size_t n) {
    const std::string& id = ids[n];
    Sample& sample = samples[n];
    sample.patch_id = id;
    sample.image_path = patch_dir / (id + "_img.png");
    sample.mask_path = patch_dir / (id + "_mask.png");
    sample.split = train_ids.contains(id) ? Split::kTrain : Split::kVal;
    try {
      MaskGrid mask = load_mask(sample.mask_path, manifest.legend.size());
      LabelSet local = derive_labels(mask, manifest.legend.size(), options.min_pixels);
      if (local.indices.empty()) {
        errors[n] = "warning";  // reported in order below
      }
      sample.labels_l3.level = 3;
      for (int v : local.indices) {
        sample.labels_l3.indices.insert(
            taxonomy.code_to_index(ClassCode{manifest.legend.code_of(v)}, 3));
      }
      sample.labels_l2 = lift_label_set(taxonomy, sample.labels_l3, 2);
      sample.labels_l1 = lift_label_set(taxonomy, sample.labels_l3, 1);
    } catch (const std::exception& e) {
      errors[n] = std::string("error: ") + e.what();
    }
  });

  for (std::size_t n = 0; n < ids.size(); ++n) {
    if (errors[n].starts_with("error: ")) {
      throw DataError(errors[n].substr(7));
    }
    if (errors[n] == "warning") {
      std::cerr << "warning: patch '" << ids[n] << "' has no labeled pixels\n";
    }
    manifest.samples.push_back(std::move(samples[n]));
  }
  return manifest;
}

void save_manifest(const fs::path& path, const Manifest& manifest) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "# seed=" << manifest.seed << '\n';
  out << "patch_id,image,mask,split,l1,l2,l3\n";
  const fs::path base = path.has_parent_path() ? path.parent_path() : ".";
  for (const Sample& sample : manifest.samples) {
    const fs::path image = sample.image_path.lexically_proximate(base);
    const fs::path mask = sample.mask_path.lexically_proximate(base);
    out << sample.patch_id << ',' << image.generic_string() << ','
        << mask.generic_string() << ','
        << (sample.split == Split::kTrain ? "train" : "val") << ','
        << join_indices(sample.labels_l1) << ',' << join_indices(sample.labels_l2)
        << ',' << join_indices(sample.labels_l3) << '\n';
  }
}

Manifest load_manifest(const fs::path& path, const Taxonomy& taxonomy) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path.string());
  const fs::path base = path.has_parent_path() ? path.parent_path() : ".";

  Manifest manifest;
  for (int level = 1; level <= 3; ++level) {
    manifest.level_counts[level] = taxonomy.class_count(level);
  }

  std::string line;
  bool header_seen = false;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.front() == '#') {
      const auto pos = line.find("seed=");
      if (pos != std::string::npos) {
        manifest.seed = std::stoull(line.substr(pos + 5));
      }
      continue;
    }
    if (!header_seen) {
      header_seen = true;
      if (!line.starts_with("patch_id,")) {
        throw DataError("manifest missing header row: " + path.string());
      }
      continue;
    }
    auto fields = split_fields(line, ',');
    if (fields.size() != 7) throw DataError("manifest row malformed: " + line);
    Sample sample;
    sample.patch_id = fields[0];
    if (!ids.insert(sample.patch_id).second) {
      throw DataError("duplicate patch id in manifest: " + sample.patch_id);
    }
    sample.image_path = fs::path(fields[1]).is_absolute()
                            ? fs::path(fields[1])
                            : base / fields[1];
    sample.mask_path = fs::path(fields[2]).is_absolute()
                           ? fs::path(fields[2])
                           : base / fields[2];
    if (fields[3] == "train") {
      sample.split = Split::kTrain;
    } else if (fields[3] == "val") {
      sample.split = Split::kVal;
    } else {
      throw DataError("unknown split tag '" + fields[3] + "'");
    }
    sample.labels_l1 = parse_indices(fields[4], 1);
    sample.labels_l2 = parse_indices(fields[5], 2);
    sample.labels_l3 = parse_indices(fields[6], 3);
    manifest.samples.push_back(std::move(sample));
  }
  if (manifest.samples.empty()) throw DataError("manifest is empty: " + path.string());

  const fs::path legend_path =
      manifest.samples.front().mask_path.parent_path() / "legend_l3.csv";
  manifest.legend = load_legend(legend_path);
  return manifest;
}

std::vector<std::string> load_exclusion_list(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open exclusion list: " + path.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    ids.push_back(line);
  }
  return ids;
}

PatchPair augment(const PatchPair& pair, AugmentOp op) {
  const int h = pair.image.height;
  const int w = pair.image.width;
  if ((op == AugmentOp::kRot90 || op == AugmentOp::kRot270) && h != w) {
    throw DataError("quarter rotations require a square patch");
  }

  // Destination size swaps for quarter turns (square anyway, kept general).
  const bool quarter = op == AugmentOp::kRot90 || op == AugmentOp::kRot270;
  const int oh = quarter ? w : h;
  const int ow = quarter ? h : w;

  PatchPair out;
  out.patch_id = pair.patch_id;
  out.image = ImageGrid::zeros(oh, ow);
  out.mask = MaskGrid::filled(oh, ow, 0);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int ty = 0, tx = 0;
      switch (op) {
        case AugmentOp::kHFlip: ty = y; tx = w - 1 - x; break;
        case AugmentOp::kVFlip: ty = h - 1 - y; tx = x; break;
        case AugmentOp::kRot90: ty = w - 1 - x; tx = y; break;     // counter-clockwise
        case AugmentOp::kRot180: ty = h - 1 - y; tx = w - 1 - x; break;
        case AugmentOp::kRot270: ty = x; tx = h - 1 - y; break;
      }
      for (int c = 0; c < 3; ++c) out.image.at(ty, tx, c) = pair.image.at(y, x, c);
      out.mask.at(ty, tx) = pair.mask.at(y, x);
    }
  }
  return out;
}

std::vector<std::array<std::uint8_t, 3>> default_palette(int num_classes) {
  // Levels {0,42,...,252}: any two distinct entries differ by at least 42 in
  // some channel, clearing 4*noise_std for noise_std <= 10.5. The channel
  // mixes are decorrelated so small palettes are not collinear in RGB
  // (collinear colors make one class the channel-mean of two others).
  static constexpr std::array<std::uint8_t, 7> kLevels = {0, 42, 84, 126, 168, 210, 252};
  std::vector<std::array<std::uint8_t, 3>> palette;
  for (int i = 0; i < num_classes; ++i) {
    const int d0 = i % 7;
    const int d1 = (i / 7) % 7;
    palette.push_back({kLevels[static_cast<std::size_t>(d0)],
                       kLevels[static_cast<std::size_t>((2 * d0 + d1) % 7)],
                       kLevels[static_cast<std::size_t>((4 * d0 + 2 * d1) % 7)]});
  }
  return palette;
}

void validate_spec(const SyntheticSpec& spec) {
  if (spec.size < 1) throw UsageError("synthetic size must be positive");
  if (spec.num_classes < 1 || spec.num_classes > 43) {
    throw UsageError("num_classes must be in [1, 43]");
  }
  if (spec.region_scale < 1) throw UsageError("region scale must be positive");
  if (spec.noise_std < 0) throw UsageError("noise_std must be nonnegative");

  const auto palette =
      spec.color_map.empty() ? default_palette(spec.num_classes) : spec.color_map;
  if (static_cast<int>(palette.size()) < spec.num_classes) {
    throw UsageError("color map smaller than class count");
  }
  for (int a = 0; a < spec.num_classes; ++a) {
    for (int b = a + 1; b < spec.num_classes; ++b) {
      int best = 0;
      for (int c = 0; c < 3; ++c) {
        best = std::max(best, std::abs(static_cast<int>(palette[a][c]) -
                                       static_cast<int>(palette[b][c])));
      }
      if (best < 4.0 * spec.noise_std) {
        throw UsageError("classes " + std::to_string(a) + " and " +
                         std::to_string(b) + " are not color-separable (max " +
                         "channel gap " + std::to_string(best) + " < 4*noise_std)");
      }
    }
  }
}

std::pair<ImageGrid, MaskGrid> generate_synthetic(const SyntheticSpec& spec) {
  validate_spec(spec);
  const auto palette =
      spec.color_map.empty() ? default_palette(spec.num_classes) : spec.color_map;

  const int cell = std::min(spec.region_scale, spec.size);
  const int cells = (spec.size + cell - 1) / cell;
  const int num_sites = cells * cells;
  if (num_sites < spec.num_classes) {
    throw UsageError("region scale too large: only " + std::to_string(num_sites) +
                     " regions for " + std::to_string(spec.num_classes) + " classes");
  }

  Rng rng(spec.seed);

  // One jittered site per grid cell; the nearest site of any pixel is then
  // within Chebyshev distance 2 of its own cell.
  std::vector<double> site_y(static_cast<std::size_t>(num_sites));
  std::vector<double> site_x(static_cast<std::size_t>(num_sites));
  for (int i = 0; i < num_sites; ++i) {
    const int cy = i / cells;
    const int cx = i % cells;
    site_y[static_cast<std::size_t>(i)] = (cy + rng.next_double()) * cell;
    site_x[static_cast<std::size_t>(i)] = (cx + rng.next_double()) * cell;
  }

  // Round-robin keeps class areas balanced; the shuffle scatters them.
  // Every class appears at least once because num_sites >= num_classes.
  std::vector<int> site_class(static_cast<std::size_t>(num_sites));
  for (int i = 0; i < num_sites; ++i) {
    site_class[static_cast<std::size_t>(i)] = i % spec.num_classes;
  }
  rng.shuffle(site_class);

  MaskGrid mask = MaskGrid::filled(spec.size, spec.size, 0);
  for (int y = 0; y < spec.size; ++y) {
    const int cy = y / cell;
    for (int x = 0; x < spec.size; ++x) {
      const int cx = x / cell;
      double best = std::numeric_limits<double>::max();
      int best_site = 0;
      for (int ny = std::max(0, cy - 2); ny <= std::min(cells - 1, cy + 2); ++ny) {
        for (int nx = std::max(0, cx - 2); nx <= std::min(cells - 1, cx + 2); ++nx) {
          const int site = ny * cells + nx;
          const double dy = site_y[static_cast<std::size_t>(site)] - (y + 0.5);
          const double dx = site_x[static_cast<std::size_t>(site)] - (x + 0.5);
          const double d2 = dy * dy + dx * dx;
          if (d2 < best) {  // strict: ties keep the lowest site index
            best = d2;
            best_site = site;
          }
        }
      }
      mask.at(y, x) =
          static_cast<std::uint8_t>(site_class[static_cast<std::size_t>(best_site)]);
    }
  }

  ImageGrid image = ImageGrid::zeros(spec.size, spec.size);
  for (int y = 0; y < spec.size; ++y) {
    for (int x = 0; x < spec.size; ++x) {
      const auto& color = palette[mask.at(y, x)];
      for (int c = 0; c < 3; ++c) {
        double v = color[static_cast<std::size_t>(c)];
        if (spec.noise_std > 0) v += rng.normal(0.0, spec.noise_std);
        image.at(y, x, c) =
            static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return {std::move(image), std::move(mask)};
}

Legend synthetic_legend(int num_classes, const Taxonomy& taxonomy) {
  const auto codes = taxonomy.codes(3);
  Legend legend;
  for (int i = 0; i < num_classes; ++i) {
    // Spread picks across the code list so lifted levels stay distinct.
    const auto pick = static_cast<std::size_t>(
        static_cast<std::int64_t>(i) * static_cast<std::int64_t>(codes.size()) /
        num_classes);
    const ClassCode code = codes[pick];
    legend.entries.push_back(LegendEntry{i, code.value, taxonomy.node(code).name});
  }
  return legend;
}

std::pair<Manifest, std::vector<std::string>> corrupt_labels(
    const Manifest& manifest, const Taxonomy& taxonomy, double fraction,
    std::uint64_t seed, int level) {
  if (fraction <= 0.0 || fraction >= 1.0) {
    throw UsageError("corruption fraction must be in (0, 1)");
  }
  LabelSpace space = make_label_space(manifest.legend, taxonomy, level);
  if (space.size() < 2) {
    throw DataError("label space too small to corrupt (needs >= 2 classes)");
  }

  Manifest out = manifest;
  std::vector<std::size_t> candidates;
  for (std::size_t i : manifest.split_indices(Split::kVal)) {
    if (!manifest.labels_at(i, level).indices.empty()) candidates.push_back(i);
  }
  const auto count = static_cast<std::size_t>(std::clamp<long long>(
      std::llround(fraction * static_cast<double>(candidates.size())), 0,
      static_cast<long long>(candidates.size())));

  Rng rng(seed);
  rng.shuffle(candidates);

  std::vector<std::string> corrupted;
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t i = candidates[k];
    Sample& sample = out.samples[i];
    LabelSet& labels = level == 1   ? sample.labels_l1
                       : level == 2 ? sample.labels_l2
                                    : sample.labels_l3;

    // Pick a member to replace and a different class to replace it with.
    std::vector<int> members(labels.indices.begin(), labels.indices.end());
    const int victim =
        members[static_cast<std::size_t>(rng.next_below(members.size()))];
    int replacement = victim;
    while (replacement == victim) {
      replacement = space.global_indices[static_cast<std::size_t>(
          rng.next_below(static_cast<std::uint64_t>(space.size())))];
    }
    labels.indices.erase(victim);
    labels.indices.insert(replacement);
    corrupted.push_back(sample.patch_id);
  }
  std::sort(corrupted.begin(), corrupted.end());
  return {std::move(out), std::move(corrupted)};
}

void save_patches(const fs::path& dir, std::span<const PatchPair> patches,
                  int threads) {
  fs::create_directories(dir);
  parallel_for(patches.size(), threads, [&](std::size_t i) {
    const PatchPair& pair = patches[i];
    save_image(dir / (pair.patch_id + "_img.png"), pair.image);
    save_mask(dir / (pair.patch_id + "_mask.png"), pair.mask);
  });
}

}  // namespace terra
