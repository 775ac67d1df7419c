#pragma once

#include <cmath>

namespace layoutlab {

// Axis-aligned box with center coordinates and full extents, all in the
// normalized [0,1] frame unless stated otherwise.
struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double x0() const { return x - 0.5 * w; }
  double x1() const { return x + 0.5 * w; }
  double y0() const { return y - 0.5 * h; }
  double y1() const { return y + 0.5 * h; }
  double area() const { return w * h; }
  double diagonal() const { return std::hypot(w, h); }
};

double iou(const BoundingBox& a, const BoundingBox& b);

// Generalized IoU: iou minus the fraction of the tightest enclosing box not
// covered by the union. Range (-1, 1], equals iou for overlapping boxes that
// share their hull.
double giou(const BoundingBox& a, const BoundingBox& b);

double center_distance(const BoundingBox& a, const BoundingBox& b);

// Center distance divided by the mean of the two box diagonals.
double scaled_center_distance(const BoundingBox& a, const BoundingBox& b);

}  // namespace layoutlab
