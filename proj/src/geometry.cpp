#include "layoutlab/geometry.hpp"

#include <algorithm>

namespace layoutlab {

namespace {

double intersection_area(const BoundingBox& a, const BoundingBox& b) {
  double ix = std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0());
  double iy = std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0());
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  return ix * iy;
}

}  // namespace

double iou(const BoundingBox& a, const BoundingBox& b) {
  double inter = intersection_area(a, b);
  double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

double giou(const BoundingBox& a, const BoundingBox& b) {
  double inter = intersection_area(a, b);
  double uni = a.area() + b.area() - inter;
  double hw = std::max(a.x1(), b.x1()) - std::min(a.x0(), b.x0());
  double hh = std::max(a.y1(), b.y1()) - std::min(a.y0(), b.y0());
  double hull = hw * hh;
  double i = uni > 0.0 ? inter / uni : 0.0;
  if (hull <= 0.0) return i;
  return i - (hull - uni) / hull;
}

double center_distance(const BoundingBox& a, const BoundingBox& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

double scaled_center_distance(const BoundingBox& a, const BoundingBox& b) {
  double mean_diag = 0.5 * (a.diagonal() + b.diagonal());
  if (mean_diag <= 0.0) return 0.0;
  return center_distance(a, b) / mean_diag;
}

}  // namespace layoutlab
