#pragma once

#include <stdexcept>
#include <string>

namespace dla {

// Shape or size disagreement between tensors.
struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid argument values (labels out of range, bad config, width mismatch).
struct InputError : std::runtime_error {
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Corrupt or incompatible on-disk artifacts.
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Optimization diverged (NaN/Inf loss).
struct TrainingError : std::runtime_error {
  explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

// Two artifacts that must belong together do not (alarm vs target model).
struct BindingError : std::runtime_error {
  explicit BindingError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dla
