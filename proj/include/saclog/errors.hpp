#pragma once

#include <stdexcept>
#include <string>

namespace saclog {

// Bad settings: invalid weights, k > corpus size, zero buckets, ...
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Bad input data: parse failures, schema violations, id mismatches.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace saclog
