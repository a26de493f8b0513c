#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "oar/voxelio/annotations.hpp"
#include "oar/voxelio/taxonomy.hpp"
#include "oar/voxelio/volume.hpp"

namespace oar::voxelio {

// Structure set as read from disk, before class-name normalization. Each raw
// contour carries either a slice index (portable JSON format) or a patient-z
// coordinate (DICOM-RT) that the extraction step resolves against the volume.
struct RawContour {
  int slice_index = -1;     // -1 when only z is known
  double z = 0.0;
  bool has_z = false;
  std::vector<Point2> points;  // pixel coordinates for JSON, resolved for DICOM
};

struct RawStructure {
  std::string name;
  std::vector<RawContour> contours;
};

struct RawStructureSet {
  std::vector<RawStructure> structures;
};

// Portable structured contour file:
// { "structures": [ { "name": "Eye_L",
//                     "contours": [ { "slice": 3, "points": [[x,y],...] } ] } ] }
RawStructureSet load_contour_file(const std::filesystem::path& path);

struct ExtractResult {
  AnnotationSet annotations;
  std::vector<std::string> unknown_classes;  // raw names that did not resolve
  std::vector<std::string> warnings;
};

// Maps structure names onto the taxonomy (merging laterality sub-labels),
// validates slice references against the volume, and emits one Contour per
// labeled region per slice. Unknown names are reported, never dropped
// silently; an unresolvable slice reference is an error naming the contour.
ExtractResult extract_contours(const RawStructureSet& rtstruct, const VolumeScan& volume,
                               const ClassNameMap& class_map = ClassNameMap());

// Convenience: rasterize every contour and keep instances that pass the
// bbox/area rules; fills annotations.instances.
void build_instances(AnnotationSet& set, int rows, int cols, double enlarge = 1.2,
                     std::int64_t min_area = 10, std::vector<std::string>* warnings = nullptr);

}  // namespace oar::voxelio
