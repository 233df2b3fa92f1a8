#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace kog {

// Error taxonomy used across the library. Everything derives from
// std::runtime_error so the CLI can map categories to exit codes.

// Invalid graph/skeleton/dataset structure (disconnected graph, bad edge, ...).
struct StructureError : std::runtime_error {
  explicit StructureError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration value (delta < 1, zero std, bad schedule, ...).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor dimension mismatch.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse (backward on a non-scalar, missing gradient, ...).
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// File/serialization failure (bad magic, truncation, malformed line, ...).
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

}  // namespace kog
