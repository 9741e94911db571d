#pragma once

#include <span>
#include <utility>
#include <vector>

#include "hdovd/embedding.hpp"
#include "hdovd/geometry.hpp"

namespace hdovd {

struct Target {
  enum class Kind { Base, Pseudo };

  Box box;
  Kind kind = Kind::Base;
  /// Base: class index in [0, M). Pseudo: classifier column offset in
  /// [0, K), or -1 when the pseudo box has no text label.
  int index = 0;
};

struct Assignment {
  /// (query index, target index), sorted by query index.
  std::vector<std::pair<int, int>> pairs;

  [[nodiscard]] double total_cost(const Mat& cost) const;
};

struct CostWeights {
  double cls = 2.0;
  double l1 = 5.0;
  double giou = 2.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
};

/// Optimal one-to-one assignment for a queries x targets cost matrix with
/// at least as many queries as targets (std::invalid_argument otherwise).
Assignment min_cost_assignment(const Mat& cost);

/// queries x targets matching cost. `pred_probs` is N x (M + K); pseudo
/// targets use column M + index. L1 is computed on coordinates divided by
/// `box_scale`.
Mat matching_cost(const Mat& pred_probs, std::span<const Box> pred_boxes,
                  std::span<const Target> targets, int base_columns, const CostWeights& w,
                  double box_scale);

Assignment match(const Mat& pred_probs, std::span<const Box> pred_boxes,
                 std::span<const Target> targets, int base_columns, const CostWeights& w,
                 double box_scale);

struct Supervision {
  std::vector<std::pair<int, int>> cls;  ///< every matched pair
  std::vector<std::pair<int, int>> box;  ///< base-kind pairs only
};

Supervision split_supervision(const Assignment& assignment, std::span<const Target> targets);

}  // namespace hdovd
