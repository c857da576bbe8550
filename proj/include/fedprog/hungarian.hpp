#pragma once

#include <cstddef>
#include <vector>

#include "fedprog/tensor.hpp"

namespace fedprog {

struct Assignment {
    std::vector<std::size_t> row_to_col;  // injective
    double total_cost = 0.0;              // sum of chosen entries, accumulated in row order
};

/// Minimum-cost assignment of every row of a rows <= cols cost matrix to a distinct column
/// (Kuhn-Munkres with potentials, O(rows^2 * cols)). Throws DataQualityError on non-finite
/// entries and ShapeError when rows > cols.
Assignment hungarian_solve(const Tensor2D& cost);

}  // namespace fedprog
