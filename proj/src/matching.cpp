#include "csdn/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace csdn {

namespace {

// Kuhn augmenting-path search over an explicit adjacency list.
bool augment(std::size_t r, const std::vector<std::vector<std::size_t>>& adj, std::vector<long>& col_owner,
             std::vector<char>& seen) {
  for (std::size_t c : adj[r]) {
    if (seen[c]) continue;
    seen[c] = 1;
    if (col_owner[c] < 0 || augment(static_cast<std::size_t>(col_owner[c]), adj, col_owner, seen)) {
      col_owner[c] = static_cast<long>(r);
      return true;
    }
  }
  return false;
}

std::size_t max_matching(const std::vector<std::vector<std::size_t>>& adj, std::size_t cols) {
  std::vector<long> owner(cols, -1);
  std::size_t matched = 0;
  for (std::size_t r = 0; r < adj.size(); ++r) {
    std::vector<char> seen(cols, 0);
    if (augment(r, adj, owner, seen)) ++matched;
  }
  return matched;
}

}  // namespace

Assignment hungarian_match(const Tensor& cost, double tolerance) {
  if (cost.rank() != 2) throw DimensionError("hungarian_match expects a matrix, got " + shape_string(cost.shape()));
  const std::size_t n_pred = cost.rows(), n_gt = cost.cols();
  if (n_pred < n_gt)
    throw InfeasibleAssignment("hungarian_match: " + std::to_string(n_gt) + " ground truths but only " +
                               std::to_string(n_pred) + " predictions");
  Assignment result;
  if (n_gt == 0) {
    for (std::size_t i = 0; i < n_pred; ++i) result.unmatched.push_back(i);
    return result;
  }
  double scale = 1.0;
  for (double v : cost.values()) {
    if (!std::isfinite(v)) throw std::invalid_argument("hungarian_match: non-finite cost");
    scale = std::max(scale, std::abs(v));
  }
  const double tol = tolerance * scale;

  // Shortest augmenting path with potentials; rows are ground truths (1-based
  // internally), columns are predictions.
  const std::size_t n = n_gt, m = n_pred;
  auto a = [&](std::size_t row, std::size_t col) { return cost.at(col - 1, row - 1); };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
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
    } while (j0);
  }

  // The potentials are an optimal dual: every optimal assignment uses only
  // tight edges and covers every prediction whose potential is negative. The
  // lexicographically smallest such assignment is built greedily, checking
  // that the remaining rows can still be completed (Mendelsohn-Dulmage).
  auto tight = [&](std::size_t row, std::size_t col) {
    return std::abs(a(row + 1, col + 1) - u[row + 1] - v[col + 1]) <= tol;
  };
  std::vector<char> must_cover(m, 0);
  for (std::size_t j = 0; j < m; ++j) must_cover[j] = v[j + 1] < -tol;

  std::vector<char> taken(m, 0);
  std::vector<std::size_t> choice(n, 0);
  auto completable = [&](std::size_t next_row) {
    std::vector<std::vector<std::size_t>> rows_adj;
    for (std::size_t r = next_row; r < n; ++r) {
      std::vector<std::size_t> adj;
      for (std::size_t c = 0; c < m; ++c)
        if (!taken[c] && tight(r, c)) adj.push_back(c);
      rows_adj.push_back(std::move(adj));
    }
    if (max_matching(rows_adj, m) != n - next_row) return false;
    std::vector<std::vector<std::size_t>> cols_adj;
    for (std::size_t c = 0; c < m; ++c) {
      if (taken[c] || !must_cover[c]) continue;
      std::vector<std::size_t> adj;
      for (std::size_t r = next_row; r < n; ++r)
        if (tight(r, c)) adj.push_back(r);
      cols_adj.push_back(std::move(adj));
    }
    return max_matching(cols_adj, n) == cols_adj.size();
  };

  for (std::size_t r = 0; r < n; ++r) {
    bool placed = false;
    for (std::size_t c = 0; c < m && !placed; ++c) {
      if (taken[c] || !tight(r, c)) continue;
      taken[c] = 1;
      if (completable(r + 1)) {
        choice[r] = c;
        placed = true;
      } else {
        taken[c] = 0;
      }
    }
    if (!placed) {
      // Tolerance too tight for accumulated rounding: keep the solver's answer.
      std::fill(taken.begin(), taken.end(), 0);
      for (std::size_t j = 1; j <= m; ++j)
        if (p[j]) {
          choice[p[j] - 1] = j - 1;
          taken[j - 1] = 1;
        }
      break;
    }
  }

  for (std::size_t r = 0; r < n; ++r) result.pairs.emplace_back(choice[r], r);
  for (std::size_t c = 0; c < m; ++c)
    if (!taken[c]) result.unmatched.push_back(c);
  return result;
}

double assignment_cost(const Tensor& cost, const Assignment& a) {
  double s = 0.0;
  for (auto [pred, gt] : a.pairs) s += cost.at(pred, gt);
  return s;
}

}  // namespace csdn
