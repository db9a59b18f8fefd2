#pragma once

#include <stdexcept>
#include <cstdint>
#include <string>
#include <vector>

namespace rtaformer {

/// Tensor shape does not satisfy an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Unknown preset/variant, inconsistent hyper-parameters, bad config file.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Value-level contract violation (non-binary mask, empty dataset, ...).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dataset directory or file could not be read.
class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Weight archive is malformed or does not match the module.
class ArchiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training diverged (non-finite loss or parameters).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_string(const std::vector<int64_t>& sizes);

}  // namespace rtaformer
