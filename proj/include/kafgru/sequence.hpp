#pragma once

#include <cstddef>
#include <vector>

#include "kafgru/errors.hpp"
#include "kafgru/numerics.hpp"

namespace kafgru {

// A mini-batch of fixed-length input sequences with one integer label per
// batch element. steps[t] is the batch x features input at time t.
struct SequenceBatch {
  std::vector<Matrix> steps;
  std::vector<int> labels;

  std::size_t seq_len() const { return steps.size(); }
  std::size_t batch() const { return steps.empty() ? 0 : steps.front().rows; }
  std::size_t features() const { return steps.empty() ? 0 : steps.front().cols; }

  void validate() const {
    if (steps.empty()) throw std::invalid_argument("SequenceBatch: empty sequence");
    for (const Matrix& m : steps) {
      if (m.rows != batch() || m.cols != features())
        throw ShapeError("SequenceBatch: inconsistent step shapes");
    }
    if (labels.size() != batch())
      throw ShapeError("SequenceBatch: label count does not match batch");
  }
};

}  // namespace kafgru
