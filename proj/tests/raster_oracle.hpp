#pragma once

#include <cmath>
#include <cstdint>

#include "layoutlab/geometry.hpp"

// Pixel-grid oracle for box overlap measures, independent of the interval
// arithmetic in the library. A box covers the pixel (i, j) when the pixel
// center ((i+0.5)/N, (j+0.5)/N) lies in [x0, x1) x [y0, y1); counts follow
// from the half-open index ranges, identical to looping over the grid.
namespace raster {

inline int64_t axis_count(double lo, double hi, int64_t n) {
  if (hi <= lo) return 0;
  int64_t first = static_cast<int64_t>(std::ceil(static_cast<double>(n) * lo - 0.5));
  int64_t last = static_cast<int64_t>(std::ceil(static_cast<double>(n) * hi - 0.5));
  return last > first ? last - first : 0;
}

inline int64_t box_count(const layoutlab::BoundingBox& b, int64_t n) {
  return axis_count(b.x0(), b.x1(), n) * axis_count(b.y0(), b.y1(), n);
}

struct Counts {
  int64_t a = 0, b = 0, inter = 0, hull = 0;
};

inline Counts count_pair(const layoutlab::BoundingBox& a, const layoutlab::BoundingBox& b,
                         int64_t n) {
  Counts c;
  c.a = box_count(a, n);
  c.b = box_count(b, n);
  c.inter = axis_count(std::max(a.x0(), b.x0()), std::min(a.x1(), b.x1()), n) *
            axis_count(std::max(a.y0(), b.y0()), std::min(a.y1(), b.y1()), n);
  c.hull = axis_count(std::min(a.x0(), b.x0()), std::max(a.x1(), b.x1()), n) *
           axis_count(std::min(a.y0(), b.y0()), std::max(a.y1(), b.y1()), n);
  return c;
}

inline double iou(const layoutlab::BoundingBox& a, const layoutlab::BoundingBox& b,
                  int64_t n = 1 << 20) {
  Counts c = count_pair(a, b, n);
  int64_t uni = c.a + c.b - c.inter;
  if (uni <= 0) return 0.0;
  return static_cast<double>(c.inter) / static_cast<double>(uni);
}

inline double giou(const layoutlab::BoundingBox& a, const layoutlab::BoundingBox& b,
                   int64_t n = 1 << 20) {
  Counts c = count_pair(a, b, n);
  int64_t uni = c.a + c.b - c.inter;
  double i = uni > 0 ? static_cast<double>(c.inter) / static_cast<double>(uni) : 0.0;
  if (c.hull <= 0) return i;
  return i - static_cast<double>(c.hull - uni) / static_cast<double>(c.hull);
}

}  // namespace raster
