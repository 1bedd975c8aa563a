#pragma once

#include <string>
#include <vector>

namespace terra::cli {

// Runs one verb. Exit codes: 0 success, 1 usage error, 2 data error.
int run(const std::vector<std::string>& args);
int run(int argc, const char* const* argv);

}  // namespace terra::cli
