#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "terracover/taxonomy.hpp"

namespace terra::testing {

inline std::filesystem::path repo_root() {
  // Tests run from the build tree; the data files live in the source tree.
  std::filesystem::path p = std::filesystem::current_path();
  while (!p.empty() && !std::filesystem::exists(p / "data" / "corine_labels.txt")) {
    if (p == p.parent_path()) break;
    p = p.parent_path();
  }
  return p;
}

inline const Taxonomy& corine_taxonomy() {
  static const Taxonomy taxonomy =
      Taxonomy::load_file(repo_root() / "data" / "corine_labels.txt");
  return taxonomy;
}

// Scratch directory unique per test run, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng{std::random_device{}()};
    path_ = std::filesystem::temp_directory_path() /
            ("terracover_" + tag + "_" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

private:
  std::filesystem::path path_;
};

}  // namespace terra::testing
