#include "multiassign/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace multiassign {

BoxXYXY to_xyxy(const BoxCXCYWH& b) {
  return {b.cx - 0.5 * b.w, b.cy - 0.5 * b.h, b.cx + 0.5 * b.w, b.cy + 0.5 * b.h};
}

BoxCXCYWH to_cxcywh(const BoxXYXY& b) {
  return {0.5 * (b.x1 + b.x2), 0.5 * (b.y1 + b.y2), b.x2 - b.x1, b.y2 - b.y1};
}

std::array<double, 4> xyxy_grad_to_cxcywh(const std::array<double, 4>& g) {
  // x1 = cx - w/2, x2 = cx + w/2 (same for y).
  return {g[0] + g[2], g[1] + g[3], 0.5 * (g[2] - g[0]), 0.5 * (g[3] - g[1])};
}

bool is_valid(const BoxXYXY& b) {
  return std::isfinite(b.x1) && std::isfinite(b.y1) && std::isfinite(b.x2) && std::isfinite(b.y2) &&
         b.x1 <= b.x2 && b.y1 <= b.y2;
}

namespace {

// Shared terms of IoU/GIoU and the partials of intersection, each area and the
// hull area w.r.t. the eight coordinates.
struct OverlapTerms {
  double inter = 0.0;
  double area_a = 0.0;
  double area_b = 0.0;
  double hull = 0.0;
  std::array<double, 4> d_inter_a{};
  std::array<double, 4> d_inter_b{};
  std::array<double, 4> d_area_a{};
  std::array<double, 4> d_area_b{};
  std::array<double, 4> d_hull_a{};
  std::array<double, 4> d_hull_b{};
};

OverlapTerms overlap_terms(const BoxXYXY& a, const BoxXYXY& b) {
  OverlapTerms t;
  const double aw = a.x2 - a.x1, ah = a.y2 - a.y1;
  const double bw = b.x2 - b.x1, bh = b.y2 - b.y1;
  t.area_a = aw * ah;
  t.area_b = bw * bh;
  t.d_area_a = {-ah, -aw, ah, aw};
  t.d_area_b = {-bh, -bw, bh, bw};

  // Ties in max/min route the derivative to box a.
  const bool ix1_a = a.x1 >= b.x1, iy1_a = a.y1 >= b.y1;
  const bool ix2_a = a.x2 <= b.x2, iy2_a = a.y2 <= b.y2;
  const double iw = (ix2_a ? a.x2 : b.x2) - (ix1_a ? a.x1 : b.x1);
  const double ih = (iy2_a ? a.y2 : b.y2) - (iy1_a ? a.y1 : b.y1);
  if (iw > 0.0 && ih > 0.0) {
    t.inter = iw * ih;
    (ix1_a ? t.d_inter_a : t.d_inter_b)[0] -= ih;
    (iy1_a ? t.d_inter_a : t.d_inter_b)[1] -= iw;
    (ix2_a ? t.d_inter_a : t.d_inter_b)[2] += ih;
    (iy2_a ? t.d_inter_a : t.d_inter_b)[3] += iw;
  }

  const bool hx1_a = a.x1 <= b.x1, hy1_a = a.y1 <= b.y1;
  const bool hx2_a = a.x2 >= b.x2, hy2_a = a.y2 >= b.y2;
  const double hw = (hx2_a ? a.x2 : b.x2) - (hx1_a ? a.x1 : b.x1);
  const double hh = (hy2_a ? a.y2 : b.y2) - (hy1_a ? a.y1 : b.y1);
  t.hull = hw * hh;
  (hx1_a ? t.d_hull_a : t.d_hull_b)[0] -= hh;
  (hy1_a ? t.d_hull_a : t.d_hull_b)[1] -= hw;
  (hx2_a ? t.d_hull_a : t.d_hull_b)[2] += hh;
  (hy2_a ? t.d_hull_a : t.d_hull_b)[3] += hw;
  return t;
}

PairGrad combine(const OverlapTerms& t, double g_inter, double g_area_a, double g_area_b,
                 double g_hull, double value) {
  PairGrad out;
  out.value = value;
  for (int i = 0; i < 4; ++i) {
    out.d_a[i] = g_inter * t.d_inter_a[i] + g_area_a * t.d_area_a[i] + g_hull * t.d_hull_a[i];
    out.d_b[i] = g_inter * t.d_inter_b[i] + g_area_b * t.d_area_b[i] + g_hull * t.d_hull_b[i];
  }
  return out;
}

}  // namespace

double iou(const BoxXYXY& a, const BoxXYXY& b) { return iou_with_grad(a, b).value; }

PairGrad iou_with_grad(const BoxXYXY& a, const BoxXYXY& b) {
  const OverlapTerms t = overlap_terms(a, b);
  const double uni = t.area_a + t.area_b - t.inter;
  if (!(uni > 0.0)) return {};
  const double value = t.inter / uni;
  // d(I/U) with U = A + B - I.
  const double g_inter = (uni + t.inter) / (uni * uni);
  const double g_area = -t.inter / (uni * uni);
  return combine(t, g_inter, g_area, g_area, 0.0, value);
}

double giou(const BoxXYXY& a, const BoxXYXY& b) { return giou_with_grad(a, b).value; }

PairGrad giou_with_grad(const BoxXYXY& a, const BoxXYXY& b) {
  const OverlapTerms t = overlap_terms(a, b);
  const double uni = t.area_a + t.area_b - t.inter;
  if (!(uni > 0.0)) return {};
  if (!(t.hull > 0.0)) return iou_with_grad(a, b);
  // giou = I/U - 1 + U/C
  const double c = t.hull;
  const double value = t.inter / uni - 1.0 + uni / c;
  const double g_inter = (uni + t.inter) / (uni * uni) - 1.0 / c;
  const double g_area = -t.inter / (uni * uni) + 1.0 / c;
  const double g_hull = -uni / (c * c);
  return combine(t, g_inter, g_area, g_area, g_hull, value);
}

double l1_box(const BoxCXCYWH& a, const BoxCXCYWH& b) { return l1_box_with_grad(a, b).value; }

L1Grad l1_box_with_grad(const BoxCXCYWH& a, const BoxCXCYWH& b) {
  const auto av = a.as_array();
  const auto bv = b.as_array();
  L1Grad out;
  for (int i = 0; i < 4; ++i) {
    const double d = av[i] - bv[i];
    out.value += std::abs(d);
    const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    out.d_a[i] = s;
    out.d_b[i] = -s;
  }
  return out;
}

std::vector<std::size_t> nms(std::span<const ScoredBox> boxes, double iou_threshold) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return boxes[i].score > boxes[j].score;
  });
  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    bool keep = true;
    for (std::size_t k : kept) {
      if (iou(boxes[idx].box, boxes[k].box) > iou_threshold) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(idx);
  }
  return kept;
}

}  // namespace multiassign
