#include "hdovd/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace hdovd {

Box Box::checked(double x1, double y1, double x2, double y2) {
  Box b{x1, y1, x2, y2};
  if (!b.valid()) {
    throw std::invalid_argument("invalid box: coordinates must be finite with x1 < x2 and y1 < y2");
  }
  return b;
}

bool Box::valid() const noexcept {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
         std::isfinite(y2) && x1 < x2 && y1 < y2;
}

namespace {

void require_valid(const Box& b) {
  if (!b.valid()) throw std::invalid_argument("degenerate or non-finite box");
}

}  // namespace

double iou(const Box& a, const Box& b) {
  require_valid(a);
  require_valid(b);
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

double giou(const Box& a, const Box& b) { return giou_with_grad(a, b).value; }

GiouWithGrad giou_with_grad(const Box& p, const Box& t) {
  require_valid(p);
  require_valid(t);

  // Intersection extent, clipped at zero.
  const bool ix_left = p.x1 >= t.x1;  // which box supplies max(x1)
  const bool iy_top = p.y1 >= t.y1;
  const bool ix_right = p.x2 <= t.x2;  // which box supplies min(x2)
  const bool iy_bottom = p.y2 <= t.y2;
  const double iw_raw = std::min(p.x2, t.x2) - std::max(p.x1, t.x1);
  const double ih_raw = std::min(p.y2, t.y2) - std::max(p.y1, t.y1);
  const double iw = std::max(iw_raw, 0.0);
  const double ih = std::max(ih_raw, 0.0);
  const double inter = iw * ih;

  const double uni = p.area() + t.area() - inter;

  // Smallest enclosing box.
  const bool cx_left = p.x1 <= t.x1;
  const bool cy_top = p.y1 <= t.y1;
  const bool cx_right = p.x2 >= t.x2;
  const bool cy_bottom = p.y2 >= t.y2;
  const double cw = std::max(p.x2, t.x2) - std::min(p.x1, t.x1);
  const double ch = std::max(p.y2, t.y2) - std::min(p.y1, t.y1);
  const double enc = cw * ch;

  GiouWithGrad out;
  // giou = I/U - 1 + U/E with U = area_p + area_t - I.
  out.value = inter / uni - 1.0 + uni / enc;

  std::array<double, 4> g_inter{}, g_enc{};
  if (iw_raw > 0.0 && ih_raw > 0.0) {
    if (ix_left) g_inter[0] = -ih;
    if (ix_right) g_inter[2] = ih;
    if (iy_top) g_inter[1] = -iw;
    if (iy_bottom) g_inter[3] = iw;
  }
  const std::array<double, 4> g_area = {-p.height(), -p.width(), p.height(), p.width()};
  if (cx_left) g_enc[0] = -ch;
  if (cx_right) g_enc[2] = ch;
  if (cy_top) g_enc[1] = -cw;
  if (cy_bottom) g_enc[3] = cw;

  for (int k = 0; k < 4; ++k) {
    const double g_uni = g_area[k] - g_inter[k];
    out.d_pred[k] = g_inter[k] / uni - inter * g_uni / (uni * uni) + g_uni / enc -
                    uni * g_enc[k] / (enc * enc);
  }
  return out;
}

std::vector<Box> filter_pseudo_proposals(std::span<const Proposal> proposals,
                                         std::span<const Box> gt_boxes,
                                         double max_iou, std::size_t top_k) {
  if (!(max_iou >= 0.0 && max_iou <= 1.0)) {
    throw std::invalid_argument("max_iou must lie in [0, 1]");
  }
  std::vector<std::size_t> order(proposals.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return proposals[a].objectness > proposals[b].objectness;
  });
  order.resize(std::min(top_k, order.size()));

  std::vector<Box> kept;
  for (std::size_t idx : order) {
    const Box& cand = proposals[idx].box;
    const bool overlaps = std::any_of(gt_boxes.begin(), gt_boxes.end(),
                                      [&](const Box& gt) { return iou(cand, gt) > max_iou; });
    if (!overlaps) kept.push_back(cand);
  }
  return kept;
}

}  // namespace hdovd
