#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

namespace oar::voxelio {

// Coordinate convention, used everywhere: (x, y) = (col, row), origin at the
// top-left corner. Boxes are edge coordinates [x0,x1) x [y0,y1): a mask whose
// set pixels span columns a..b has tight box x0=a, x1=b+1, so width = x1-x0.
struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

struct Box {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double cx() const { return 0.5 * (x0 + x1); }
  double cy() const { return 0.5 * (y0 + y1); }

  bool contains(const Box& inner) const {
    return inner.x0 >= x0 && inner.y0 >= y0 && inner.x1 <= x1 && inner.y1 <= y1;
  }
};

// Scale width and height by `factor` about the box center.
inline Box enlarge(const Box& b, double factor) {
  double hw = 0.5 * b.width() * factor;
  double hh = 0.5 * b.height() * factor;
  return {b.cx() - hw, b.cy() - hh, b.cx() + hw, b.cy() + hh};
}

inline Box clip_to_image(const Box& b, std::int64_t rows, std::int64_t cols) {
  Box r;
  r.x0 = std::clamp(b.x0, 0.0, static_cast<double>(cols));
  r.x1 = std::clamp(b.x1, 0.0, static_cast<double>(cols));
  r.y0 = std::clamp(b.y0, 0.0, static_cast<double>(rows));
  r.y1 = std::clamp(b.y1, 0.0, static_cast<double>(rows));
  return r;
}

inline double intersection_area(const Box& a, const Box& b) {
  double w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  double h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

inline double iou(const Box& a, const Box& b) {
  double inter = intersection_area(a, b);
  double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// Even-odd point-in-polygon test (ray cast toward +x).
bool point_in_polygon(const Point2& p, const std::vector<Point2>& poly);

}  // namespace oar::voxelio
