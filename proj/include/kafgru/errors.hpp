#pragma once

#include <stdexcept>
#include <string>

namespace kafgru {

// Dimension disagreement between operands.
struct ShapeError : std::invalid_argument {
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

// Failed factorization, non-finite values, diverged runs.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed or inconsistent external data (files, labels, checkpoints).
struct DataError : std::runtime_error {
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// API misuse: stale caches, mismatched optimizer state.
struct UsageError : std::logic_error {
  explicit UsageError(const std::string& what) : std::logic_error(what) {}
};

}  // namespace kafgru
