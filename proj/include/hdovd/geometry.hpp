#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace hdovd {

using ImageId = std::string;

/// Axis-aligned half-open pixel rectangle [x1, x2) x [y1, y2).
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  /// Throws std::invalid_argument unless finite with strictly positive area.
  static Box checked(double x1, double y1, double x2, double y2);

  [[nodiscard]] bool valid() const noexcept;
  [[nodiscard]] double width() const noexcept { return x2 - x1; }
  [[nodiscard]] double height() const noexcept { return y2 - y1; }
  [[nodiscard]] double area() const noexcept { return width() * height(); }
  [[nodiscard]] double center_x() const noexcept { return 0.5 * (x1 + x2); }
  [[nodiscard]] double center_y() const noexcept { return 0.5 * (y1 + y2); }

  friend bool operator==(const Box&, const Box&) = default;
};

struct Proposal {
  Box box;
  double objectness = 0.0;
  ImageId image_id;
};

double iou(const Box& a, const Box& b);

/// Generalized IoU in [-1, 1].
double giou(const Box& a, const Box& b);

/// GIoU together with its gradient with respect to the coordinates of `pred`
/// (order x1, y1, x2, y2). `target` is treated as a constant.
struct GiouWithGrad {
  double value = 0.0;
  std::array<double, 4> d_pred{};
};
GiouWithGrad giou_with_grad(const Box& pred, const Box& target);

/// Class-agnostic pseudo-box selection for one image: keep the `top_k`
/// proposals by objectness (stable on ties), then drop every proposal whose
/// IoU with any ground-truth box exceeds `max_iou`. Output is in descending
/// objectness order.
std::vector<Box> filter_pseudo_proposals(std::span<const Proposal> proposals,
                                         std::span<const Box> gt_boxes,
                                         double max_iou, std::size_t top_k);

}  // namespace hdovd
