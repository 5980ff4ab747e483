#pragma once

#include <algorithm>
#include <cmath>

namespace cornerdet {

// Axis-aligned box with exclusive ordering invariant x2 > x1, y2 > y1.
// Units depend on context: corner-map cell coordinates inside the sampler,
// pixels elsewhere; the two are related by the corner stride.
struct BBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool valid() const { return x2 > x1 && y2 > y1; }

  BBox scaled(double s) const { return {x1 * s, y1 * s, x2 * s, y2 * s}; }

  BBox clipped(double lo_x, double lo_y, double hi_x, double hi_y) const {
    return {std::clamp(x1, lo_x, hi_x), std::clamp(y1, lo_y, hi_y), std::clamp(x2, lo_x, hi_x),
            std::clamp(y2, lo_y, hi_y)};
  }

  bool operator==(const BBox& o) const { return x1 == o.x1 && y1 == o.y1 && x2 == o.x2 && y2 == o.y2; }
};

// Intersection area; zero when disjoint.
inline double intersection_area(const BBox& a, const BBox& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0 || h <= 0) return 0;
  return w * h;
}

// Intersection over union.
inline double iou(const BBox& a, const BBox& b) {
  const double inter = intersection_area(a, b);
  if (inter <= 0) return 0;
  const double uni = a.area() + b.area() - inter;
  return inter / uni;
}

// One labelled instance: class id plus its tight pixel box.
struct Annotation {
  int class_id = 0;
  BBox box;
};

// Orders boxes lexicographically by (y1, x1, y2, x2); the deterministic
// tie-break shared by the sampler and its tests.
inline bool bbox_less(const BBox& a, const BBox& b) {
  if (a.y1 != b.y1) return a.y1 < b.y1;
  if (a.x1 != b.x1) return a.x1 < b.x1;
  if (a.y2 != b.y2) return a.y2 < b.y2;
  return a.x2 < b.x2;
}

}  // namespace cornerdet
