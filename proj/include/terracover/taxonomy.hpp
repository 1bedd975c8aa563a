#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "terracover/errors.hpp"

namespace terra {

// CORINE class code. The decimal digit count is the hierarchy level:
// 1 digit = level 1, 2 digits = level 2, 3 digits = level 3.
struct ClassCode {
  int value = 0;

  int level() const {
    if (value >= 100 && value <= 999) return 3;
    if (value >= 10 && value <= 99) return 2;
    if (value >= 1 && value <= 9) return 1;
    throw DataError("class code " + std::to_string(value) +
                    " has invalid digit count");
  }

  auto operator<=>(const ClassCode&) const = default;
};

// Decimal prefix of `code` at `target_level`. Identity when levels match.
ClassCode lift_code(ClassCode code, int target_level);

struct TaxonomyNode {
  ClassCode code;
  std::string name;
  int level = 0;
  // Per-class image count from the reference table; level 3 only.
  std::optional<std::int64_t> reference_image_count;
};

// Set of contiguous class indices at one hierarchy level.
struct LabelSet {
  int level = 3;
  std::set<int> indices;

  bool operator==(const LabelSet&) const = default;
};

struct ExtraClass {
  int code = 0;
  std::string name;
};

// The three-level class hierarchy with per-level code<->index bijections.
// Immutable after load; safe for concurrent reads.
class Taxonomy {
public:
  static Taxonomy load_text(std::string_view text,
                            std::span<const ExtraClass> extras = {});
  static Taxonomy load_file(const std::filesystem::path& path,
                            std::span<const ExtraClass> extras = {});

  int class_count(int level) const;
  bool has_code(ClassCode code) const;
  const TaxonomyNode& node(ClassCode code) const;

  // Indices are assigned by ascending code order within each level.
  int code_to_index(ClassCode code, int level) const;
  ClassCode index_to_code(int index, int level) const;

  const std::vector<TaxonomyNode>& nodes() const { return nodes_; }
  std::vector<ClassCode> codes(int level) const;

private:
  std::vector<TaxonomyNode> nodes_;             // ordered by (level, code)
  std::vector<std::vector<int>> level_codes_;   // [level-1] -> sorted codes
};

// Image of lift_code over every member, deduplicated.
LabelSet lift_label_set(const Taxonomy& taxonomy, const LabelSet& labels,
                        int target_level);

}  // namespace terra
