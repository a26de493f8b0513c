#include "oar/voxelio/annotations.hpp"

#include <algorithm>
#include <cmath>

namespace oar::voxelio {

bool point_in_polygon(const Point2& p, const std::vector<Point2>& poly) {
  bool inside = false;
  std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point2& a = poly[j];
    const Point2& b = poly[i];
    if ((b.y > p.y) != (a.y > p.y)) {
      double x_cross = b.x + (p.y - b.y) * (a.x - b.x) / (a.y - b.y);
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

std::int64_t mask_area(const BinaryMask& m) {
  std::int64_t a = 0;
  for (auto v : m.pixels) a += v ? 1 : 0;
  return a;
}

BinaryMask rasterize_contour(const Contour& contour, int rows, int cols,
                             std::vector<std::string>* warnings) {
  BinaryMask mask;
  mask.rows = rows;
  mask.cols = cols;
  mask.pixels.assign(static_cast<std::size_t>(rows) * cols, 0);

  const auto& pts = contour.points;
  if (pts.size() < 3) {
    if (warnings) warnings->push_back("degenerate polygon (<3 vertices) skipped");
    return mask;
  }

  // Scanline pass: gather edge crossings per pixel-center row, sort, fill
  // between even-odd pairs.
  std::vector<double> xcross;
  for (int r = 0; r < rows; ++r) {
    double y = r + 0.5;
    xcross.clear();
    std::size_t n = pts.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const Point2& a = pts[j];
      const Point2& b = pts[i];
      if ((b.y > y) != (a.y > y))
        xcross.push_back(b.x + (y - b.y) * (a.x - b.x) / (a.y - b.y));
    }
    if (xcross.empty()) continue;
    std::sort(xcross.begin(), xcross.end());
    for (std::size_t k = 0; k + 1 < xcross.size(); k += 2) {
      // Fill centers with x_lo <= c+0.5 < x_hi. The half-open choice makes
      // this identical to the even-odd ray test (count of crossings strictly
      // right of the center), including centers exactly on an edge.
      int c_first = static_cast<int>(std::ceil(xcross[k] - 0.5));
      int c_last = static_cast<int>(std::ceil(xcross[k + 1] - 0.5)) - 1;
      c_first = std::max(c_first, 0);
      c_last = std::min(c_last, cols - 1);
      for (int c = c_first; c <= c_last; ++c) mask.at(r, c) = 1;
    }
  }

  if (mask_area(mask) == 0 && warnings)
    warnings->push_back("polygon rasterized to an empty mask");
  return mask;
}

InstanceResult compute_instance_bbox(const BinaryMask& mask, int class_id, int slice_index,
                                     double enlarge_factor, std::int64_t min_area) {
  InstanceResult result;
  std::int64_t area = mask_area(mask);
  if (area == 0) {
    result.rejection = InstanceRejection::empty_mask;
    return result;
  }
  if (area < min_area) {
    result.rejection = InstanceRejection::below_min_area;
    return result;
  }

  int rmin = mask.rows, rmax = -1, cmin = mask.cols, cmax = -1;
  for (int r = 0; r < mask.rows; ++r)
    for (int c = 0; c < mask.cols; ++c)
      if (mask.at(r, c)) {
        rmin = std::min(rmin, r);
        rmax = std::max(rmax, r);
        cmin = std::min(cmin, c);
        cmax = std::max(cmax, c);
      }

  Box tight{static_cast<double>(cmin), static_cast<double>(rmin), static_cast<double>(cmax + 1),
            static_cast<double>(rmax + 1)};
  Box box = clip_to_image(enlarge(tight, enlarge_factor), mask.rows, mask.cols);

  InstanceRecord rec;
  rec.slice_index = slice_index;
  rec.class_id = class_id;
  rec.bbox = box;
  rec.mask = mask;
  rec.area_px = area;
  result.record = std::move(rec);
  return result;
}

}  // namespace oar::voxelio
