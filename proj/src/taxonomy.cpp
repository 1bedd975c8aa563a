#include "terracover/taxonomy.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace terra {

namespace {

constexpr int kCanonicalLevel3Count = 43;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

int parse_code(std::string_view field, int line_no) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size() || value < 1 ||
      value > 999) {
    throw DataError("taxonomy line " + std::to_string(line_no) +
                    ": code with invalid digit count: '" + std::string(field) + "'");
  }
  return value;
}

}  // namespace

ClassCode lift_code(ClassCode code, int target_level) {
  const int level = code.level();
  if (target_level < 1 || target_level > level) {
    throw DataError("cannot lift code " + std::to_string(code.value) +
                    " (level " + std::to_string(level) + ") to level " +
                    std::to_string(target_level));
  }
  int value = code.value;
  for (int l = level; l > target_level; --l) value /= 10;
  return ClassCode{value};
}

Taxonomy Taxonomy::load_text(std::string_view text,
                             std::span<const ExtraClass> extras) {
  std::map<int, TaxonomyNode> by_code;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = trim(line);
    if (view.empty() || view.front() == '#') continue;

    const auto tab1 = view.find('\t');
    std::string_view code_field = trim(view.substr(0, tab1));
    std::string_view rest = tab1 == std::string_view::npos
                                ? std::string_view{}
                                : view.substr(tab1 + 1);
    const auto tab2 = rest.find('\t');
    std::string_view name_field = trim(rest.substr(0, tab2));
    std::string_view count_field =
        tab2 == std::string_view::npos ? std::string_view{} : trim(rest.substr(tab2 + 1));

    TaxonomyNode node;
    node.code = ClassCode{parse_code(code_field, line_no)};
    node.level = node.code.level();
    node.name = std::string(name_field);
    if (!count_field.empty() && node.level == 3) {
      std::int64_t count = 0;
      auto [ptr, ec] =
          std::from_chars(count_field.data(), count_field.data() + count_field.size(), count);
      if (ec != std::errc{} || count < 0) {
        throw DataError("taxonomy line " + std::to_string(line_no) +
                        ": bad image count '" + std::string(count_field) + "'");
      }
      node.reference_image_count = count;
    }

    if (!by_code.emplace(node.code.value, std::move(node)).second) {
      throw DataError("taxonomy line " + std::to_string(line_no) +
                      ": duplicate code " + std::string(code_field));
    }
  }

  int level3 = 0;
  for (const auto& [code, node] : by_code)
    if (node.level == 3) ++level3;
  if (level3 != kCanonicalLevel3Count) {
    throw DataError("missing level-3 entries: expected " +
                    std::to_string(kCanonicalLevel3Count) + ", got " +
                    std::to_string(level3));
  }

  for (const ExtraClass& extra : extras) {
    if (extra.code < 100 || extra.code > 999) {
      throw DataError("extra class " + std::to_string(extra.code) +
                      " is not a level-3 code");
    }
    ClassCode code{extra.code};
    TaxonomyNode node{code, extra.name, 3, std::nullopt};
    if (!by_code.emplace(code.value, std::move(node)).second) {
      throw DataError("extra class " + std::to_string(extra.code) +
                      " duplicates an existing code");
    }
  }

  // Synthesize missing level-1/2 parents from level-3 prefixes.
  std::vector<TaxonomyNode> parents;
  for (const auto& [code, node] : by_code) {
    if (node.level != 3) continue;
    for (int target = 2; target >= 1; --target) {
      ClassCode prefix = lift_code(node.code, target);
      if (!by_code.contains(prefix.value)) {
        parents.push_back(TaxonomyNode{prefix, "", target, std::nullopt});
        by_code.emplace(prefix.value, parents.back());
      }
    }
  }

  Taxonomy taxonomy;
  taxonomy.level_codes_.assign(3, {});
  for (int level = 1; level <= 3; ++level) {
    for (const auto& [code, node] : by_code) {
      if (node.level != level) continue;
      taxonomy.nodes_.push_back(node);
      taxonomy.level_codes_[level - 1].push_back(code);
    }
  }
  return taxonomy;
}

Taxonomy Taxonomy::load_file(const std::filesystem::path& path,
                             std::span<const ExtraClass> extras) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open taxonomy file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_text(buf.str(), extras);
}

int Taxonomy::class_count(int level) const {
  if (level < 1 || level > 3) throw DataError("invalid level " + std::to_string(level));
  return static_cast<int>(level_codes_[level - 1].size());
}

bool Taxonomy::has_code(ClassCode code) const {
  const auto& codes = level_codes_[code.level() - 1];
  return std::binary_search(codes.begin(), codes.end(), code.value);
}

const TaxonomyNode& Taxonomy::node(ClassCode code) const {
  const int level = code.level();
  const int index = code_to_index(code, level);
  std::size_t offset = 0;
  for (int l = 1; l < level; ++l) offset += level_codes_[l - 1].size();
  return nodes_[offset + static_cast<std::size_t>(index)];
}

int Taxonomy::code_to_index(ClassCode code, int level) const {
  if (code.level() != level) {
    throw DataError("code " + std::to_string(code.value) + " is not a level-" +
                    std::to_string(level) + " code");
  }
  const auto& codes = level_codes_[level - 1];
  const auto it = std::lower_bound(codes.begin(), codes.end(), code.value);
  if (it == codes.end() || *it != code.value) {
    throw DataError("unknown code " + std::to_string(code.value));
  }
  return static_cast<int>(it - codes.begin());
}

ClassCode Taxonomy::index_to_code(int index, int level) const {
  if (level < 1 || level > 3) throw DataError("invalid level " + std::to_string(level));
  const auto& codes = level_codes_[level - 1];
  if (index < 0 || index >= static_cast<int>(codes.size())) {
    throw DataError("index " + std::to_string(index) + " out of range for level " +
                    std::to_string(level));
  }
  return ClassCode{codes[static_cast<std::size_t>(index)]};
}

std::vector<ClassCode> Taxonomy::codes(int level) const {
  if (level < 1 || level > 3) throw DataError("invalid level " + std::to_string(level));
  std::vector<ClassCode> out;
  for (int value : level_codes_[level - 1]) out.push_back(ClassCode{value});
  return out;
}

LabelSet lift_label_set(const Taxonomy& taxonomy, const LabelSet& labels,
                        int target_level) {
  if (target_level > labels.level) {
    throw DataError("cannot lift label set from level " +
                    std::to_string(labels.level) + " to level " +
                    std::to_string(target_level));
  }
  LabelSet out;
  out.level = target_level;
  for (int index : labels.indices) {
    ClassCode code = taxonomy.index_to_code(index, labels.level);
    out.indices.insert(taxonomy.code_to_index(lift_code(code, target_level), target_level));
  }
  return out;
}

}  // namespace terra
