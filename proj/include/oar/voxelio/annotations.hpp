#pragma once

#include <optional>
#include <string>
#include <vector>

#include "oar/common/io.hpp"
#include "oar/voxelio/geometry.hpp"

namespace oar::voxelio {

// Binary raster with values in {0,1}; same storage as the 8-bit image type.
using BinaryMask = GrayImage;

std::int64_t mask_area(const BinaryMask& m);

struct Contour {
  int slice_index = -1;
  int class_id = 0;
  std::vector<Point2> points;  // closed polygon, first joined to last
};

// One organ instance on one slice.
struct InstanceRecord {
  int slice_index = -1;
  int class_id = 0;
  Box bbox;  // enlarged and clipped to image bounds
  BinaryMask mask;
  std::int64_t area_px = 0;
};

struct AnnotationSet {
  std::string case_id;
  std::vector<Contour> contours;
  std::vector<InstanceRecord> instances;
};

// Scanline rasterization: a pixel is set iff its center (col+0.5, row+0.5)
// lies inside the polygon under the even-odd rule. Degenerate polygons yield
// an empty mask and a warning.
BinaryMask rasterize_contour(const Contour& contour, int rows, int cols,
                             std::vector<std::string>* warnings = nullptr);

enum class InstanceRejection { none, empty_mask, below_min_area };

struct InstanceResult {
  std::optional<InstanceRecord> record;
  InstanceRejection rejection = InstanceRejection::none;
};

// Tight bbox scaled by `enlarge` about its center and clipped to the image;
// the instance is rejected when the mask area is below min_area (the area
// test is on the mask itself, not the box). An all-zero mask is its own
// rejection kind.
InstanceResult compute_instance_bbox(const BinaryMask& mask, int class_id, int slice_index,
                                     double enlarge = 1.2, std::int64_t min_area = 10);

}  // namespace oar::voxelio
