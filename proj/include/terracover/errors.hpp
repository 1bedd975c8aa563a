#pragma once

#include <stdexcept>
#include <string>

namespace terra {

// Malformed or inconsistent input data. CLI maps this to exit code 2.
class DataError : public std::runtime_error {
public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Bad flags or arguments. CLI maps this to exit code 1.
class UsageError : public std::runtime_error {
public:
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace terra
