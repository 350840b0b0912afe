#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mpnflow {

struct Matching {
  std::vector<int> row_to_col;  // -1 when unmatched
  std::vector<int> col_to_row;
  double total = 0.0;
};

/// Maximum-weight bipartite matching on a dense rows x cols weight matrix
/// (row-major). Pairs with weight <= 0 are never matched, so a pair is left
/// out rather than taken at a loss. Hungarian algorithm, O(n^3) with
/// n = max(rows, cols). Deterministic: among optimal matchings the one found
/// depends only on the matrix.
Matching max_weight_matching(std::span<const double> weight, std::size_t rows, std::size_t cols);

}  // namespace mpnflow
