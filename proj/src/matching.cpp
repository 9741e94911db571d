#include "hdovd/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace hdovd {

double Assignment::total_cost(const Mat& cost) const {
  double s = 0.0;
  for (auto [q, t] : pairs) s += cost(q, t);
  return s;
}

Assignment min_cost_assignment(const Mat& cost) {
  const auto n_queries = static_cast<int>(cost.rows());
  const auto n_targets = static_cast<int>(cost.cols());
  if (n_queries < n_targets) {
    throw std::invalid_argument("matching needs at least as many queries as targets");
  }
  Assignment out;
  if (n_targets == 0) return out;

  // Shortest augmenting path with potentials; targets are the rows being
  // assigned, queries the columns. 1-based with column 0 as the sentinel.
  const int n = n_targets;
  const int m = n_queries;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(m) + 1, 0.0);
  std::vector<int> owner(static_cast<std::size_t>(m) + 1, 0);
  std::vector<int> way(static_cast<std::size_t>(m) + 1, 0);

  for (int row = 1; row <= n; ++row) {
    owner[0] = row;
    int col0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m) + 1, kInf);
    std::vector<char> used(static_cast<std::size_t>(m) + 1, 0);
    do {
      used[col0] = 1;
      const int r0 = owner[col0];
      double delta = kInf;
      int col1 = 0;
      for (int c = 1; c <= m; ++c) {
        if (used[c]) continue;
        const double cur = cost(c - 1, r0 - 1) - u[r0] - v[c];
        if (cur < minv[c]) {
          minv[c] = cur;
          way[c] = col0;
        }
        if (minv[c] < delta) {
          delta = minv[c];
          col1 = c;
        }
      }
      for (int c = 0; c <= m; ++c) {
        if (used[c]) {
          u[owner[c]] += delta;
          v[c] -= delta;
        } else {
          minv[c] -= delta;
        }
      }
      col0 = col1;
    } while (owner[col0] != 0);
    do {
      const int col1 = way[col0];
      owner[col0] = owner[col1];
      col0 = col1;
    } while (col0 != 0);
  }

  for (int c = 1; c <= m; ++c) {
    if (owner[c] != 0) out.pairs.emplace_back(c - 1, owner[c] - 1);
  }
  return out;
}

Mat matching_cost(const Mat& pred_probs, std::span<const Box> pred_boxes,
                  std::span<const Target> targets, int base_columns, const CostWeights& w,
                  double box_scale) {
  const auto n = static_cast<Eigen::Index>(pred_boxes.size());
  if (pred_probs.rows() != n) throw std::invalid_argument("matching: score/box count mismatch");
  constexpr double kEps = 1e-8;
  Mat cost(n, static_cast<Eigen::Index>(targets.size()));
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const Target& tg = targets[t];
    int column = -1;
    if (tg.kind == Target::Kind::Base) {
      column = tg.index;
    } else if (tg.index >= 0) {
      column = base_columns + tg.index;
    }
    if (column >= static_cast<int>(pred_probs.cols())) {
      throw std::invalid_argument("matching: target column out of range");
    }
    for (Eigen::Index q = 0; q < n; ++q) {
      double c_cls = 0.0;
      if (column >= 0) {
        const double p = pred_probs(q, column);
        const double pos = w.focal_alpha * std::pow(1.0 - p, w.focal_gamma) * -std::log(p + kEps);
        const double neg = (1.0 - w.focal_alpha) * std::pow(p, w.focal_gamma) * -std::log(1.0 - p + kEps);
        c_cls = pos - neg;
      }
      const Box& pb = pred_boxes[static_cast<std::size_t>(q)];
      const double l1 = (std::abs(pb.x1 - tg.box.x1) + std::abs(pb.y1 - tg.box.y1) +
                         std::abs(pb.x2 - tg.box.x2) + std::abs(pb.y2 - tg.box.y2)) /
                        box_scale;
      cost(q, static_cast<Eigen::Index>(t)) = w.cls * c_cls + w.l1 * l1 - w.giou * giou(pb, tg.box);
    }
  }
  return cost;
}

Assignment match(const Mat& pred_probs, std::span<const Box> pred_boxes,
                 std::span<const Target> targets, int base_columns, const CostWeights& w,
                 double box_scale) {
  return min_cost_assignment(matching_cost(pred_probs, pred_boxes, targets, base_columns, w, box_scale));
}

Supervision split_supervision(const Assignment& assignment, std::span<const Target> targets) {
  Supervision s;
  for (const auto& pr : assignment.pairs) {
    s.cls.push_back(pr);
    if (targets[static_cast<std::size_t>(pr.second)].kind == Target::Kind::Base) s.box.push_back(pr);
  }
  return s;
}

}  // namespace hdovd
