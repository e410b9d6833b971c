#pragma once

// Optimal one-to-one assignment between query predictions and label boxes.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "coda/detector.hpp"
#include "coda/geometry.hpp"

namespace coda {

struct Assignment {
  /// (query index, label index), sorted by query index.
  std::vector<std::pair<int, int>> pairs;
  std::vector<int> unmatched_queries;
  std::vector<int> unmatched_labels;

  /// Label matched to query q, or -1.
  int label_of(int q) const {
    for (const auto& [qi, li] : pairs)
      if (qi == q) return li;
    return -1;
  }
};

/// Row-major cost matrix.
struct CostMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
};

namespace detail {

// Shortest augmenting path Hungarian method with potentials; requires
// rows <= cols. Returns the column assigned to each row. Among equal reduced
// costs the lowest column index wins.
inline std::vector<int> hungarian_rows_le_cols(const CostMatrix& a) {
  const int n = a.rows, m = a.cols;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
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
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

}  // namespace detail

/// Minimum-total-cost assignment of rows (queries) to columns (labels);
/// min(rows, cols) pairs. Costs must be finite.
inline Assignment solve_assignment(const CostMatrix& cost) {
  Assignment out;
  if (cost.rows == 0 || cost.cols == 0) {
    for (int q = 0; q < cost.rows; ++q) out.unmatched_queries.push_back(q);
    for (int l = 0; l < cost.cols; ++l) out.unmatched_labels.push_back(l);
    return out;
  }
  std::vector<int> q_to_l(cost.rows, -1);
  if (cost.rows <= cost.cols) {
    q_to_l = detail::hungarian_rows_le_cols(cost);
  } else {
    CostMatrix t{cost.cols, cost.rows, std::vector<double>(cost.data.size())};
    for (int r = 0; r < cost.rows; ++r)
      for (int c = 0; c < cost.cols; ++c) t(c, r) = cost(r, c);
    const auto l_to_q = detail::hungarian_rows_le_cols(t);
    for (int l = 0; l < cost.cols; ++l) q_to_l[l_to_q[l]] = l;
  }
  std::vector<char> label_used(cost.cols, 0);
  for (int q = 0; q < cost.rows; ++q) {
    if (q_to_l[q] >= 0) {
      out.pairs.emplace_back(q, q_to_l[q]);
      label_used[q_to_l[q]] = 1;
    } else {
      out.unmatched_queries.push_back(q);
    }
  }
  for (int l = 0; l < cost.cols; ++l)
    if (!label_used[l]) out.unmatched_labels.push_back(l);
  return out;
}

/// Sum of pair costs in query order.
inline double assignment_cost(const CostMatrix& cost, const Assignment& a) {
  double total = 0.0;
  for (const auto& [q, l] : a.pairs) total += cost(q, l);
  return total;
}

struct MatchWeights {
  double iou = 2.0;
  double center = 1.0;
  double objectness = 1.0;

  friend bool operator==(const MatchWeights&, const MatchWeights&) = default;
};

/// cost(q, l) = w_iou (1 - IoU) + w_center |c_q - c_l| - w_obj log(objectness_q)
inline CostMatrix match_costs(std::span<const QueryPrediction> preds, std::span<const LabelBox> labels,
                              const MatchWeights& w = {}) {
  CostMatrix c{static_cast<int>(preds.size()), static_cast<int>(labels.size()),
               std::vector<double>(preds.size() * labels.size())};
  for (std::size_t q = 0; q < preds.size(); ++q) {
    const double obj_cost = -w.objectness * std::log(std::max(preds[q].objectness, 1e-12));
    for (std::size_t l = 0; l < labels.size(); ++l) {
      const Box3D& a = preds[q].box;
      const Box3D& b = labels[l].box;
      const double dx = a.center[0] - b.center[0], dy = a.center[1] - b.center[1],
                   dz = a.center[2] - b.center[2];
      c(static_cast<int>(q), static_cast<int>(l)) =
          w.iou * (1.0 - iou3d(a, b)) + w.center * std::sqrt(dx * dx + dy * dy + dz * dz) + obj_cost;
    }
  }
  return c;
}

inline Assignment match(std::span<const QueryPrediction> preds, std::span<const LabelBox> labels,
                        const MatchWeights& w = {}) {
  return solve_assignment(match_costs(preds, labels, w));
}

}  // namespace coda
