#include "mpnflow/matching.hpp"

#include <algorithm>
#include <limits>

#include "mpnflow/error.hpp"

namespace mpnflow {

Matching max_weight_matching(std::span<const double> weight, std::size_t rows, std::size_t cols) {
  if (weight.size() != rows * cols) throw ShapeError("weight matrix size does not match rows x cols");
  Matching out;
  out.row_to_col.assign(rows, -1);
  out.col_to_row.assign(cols, -1);
  const std::size_t n = std::max(rows, cols);
  if (n == 0) return out;

  // Square min-cost assignment on cost = -max(w, 0); padding costs 0.
  auto cost = [&](std::size_t r, std::size_t c) {
    if (r >= rows || c >= cols) return 0.0;
    return -std::max(weight[r * cols + c], 0.0);
  };
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; p[j] = row assigned to column j
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t r = p[j] - 1, c = j - 1;
    if (r >= rows || c >= cols) continue;
    const double w = weight[r * cols + c];
    if (!(w > 0.0)) continue;
    out.row_to_col[r] = int(c);
    out.col_to_row[c] = int(r);
    out.total += w;
  }
  return out;
}

}  // namespace mpnflow
