#pragma once

#include <stdexcept>
#include <utility>
#include <vector>

#include "csdn/tensor.hpp"

namespace csdn {

class InfeasibleAssignment : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Assignment {
  // (prediction, ground truth), ordered by ground-truth index.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  // Ascending.
  std::vector<std::size_t> unmatched;

  bool operator==(const Assignment&) const = default;
};

// Minimum-cost injection of ground truths (columns of cost [N x M]) into
// predictions (rows), N >= M. Among optimal assignments the one whose
// prediction sequence, read in ground-truth order, is lexicographically
// smallest is returned. Costs within `tolerance` (relative to the largest
// magnitude in the matrix) are treated as equal.
Assignment hungarian_match(const Tensor& cost, double tolerance = 1e-9);

double assignment_cost(const Tensor& cost, const Assignment& a);

}  // namespace csdn
