#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace multiassign {

// Corner form. Valid when x1 <= x2 and y1 <= y2.
struct BoxXYXY {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double area() const { return (x2 - x1) * (y2 - y1); }
  std::array<double, 4> as_array() const { return {x1, y1, x2, y2}; }
  friend bool operator==(const BoxXYXY&, const BoxXYXY&) = default;
};

// Center form; this is what the box head regresses.
struct BoxCXCYWH {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  std::array<double, 4> as_array() const { return {cx, cy, w, h}; }
  static BoxCXCYWH from_span(std::span<const double> v) { return {v[0], v[1], v[2], v[3]}; }
  friend bool operator==(const BoxCXCYWH&, const BoxCXCYWH&) = default;
};

BoxXYXY to_xyxy(const BoxCXCYWH& b);
BoxCXCYWH to_cxcywh(const BoxXYXY& b);
// Chain rule through to_xyxy: gradient w.r.t. (x1,y1,x2,y2) -> (cx,cy,w,h).
std::array<double, 4> xyxy_grad_to_cxcywh(const std::array<double, 4>& d_xyxy);

bool is_valid(const BoxXYXY& b);

// Value plus gradients with respect to both operands' (x1, y1, x2, y2).
struct PairGrad {
  double value = 0.0;
  std::array<double, 4> d_a{};
  std::array<double, 4> d_b{};
};

// Zero when the union is empty (two degenerate boxes).
double iou(const BoxXYXY& a, const BoxXYXY& b);
PairGrad iou_with_grad(const BoxXYXY& a, const BoxXYXY& b);

double giou(const BoxXYXY& a, const BoxXYXY& b);
PairGrad giou_with_grad(const BoxXYXY& a, const BoxXYXY& b);

// Sum of absolute differences of the center-form coordinates. Gradients are
// w.r.t. (cx, cy, w, h) with sign(0) = 0.
double l1_box(const BoxCXCYWH& a, const BoxCXCYWH& b);
struct L1Grad {
  double value = 0.0;
  std::array<double, 4> d_a{};
  std::array<double, 4> d_b{};
};
L1Grad l1_box_with_grad(const BoxCXCYWH& a, const BoxCXCYWH& b);

struct ScoredBox {
  BoxXYXY box;
  double score = 0.0;
};

// Greedy NMS. Returns kept indices in descending score order; equal scores are
// visited in ascending index order. A box is suppressed when its IoU with an
// already kept box is strictly greater than iou_threshold.
std::vector<std::size_t> nms(std::span<const ScoredBox> boxes, double iou_threshold);

}  // namespace multiassign
