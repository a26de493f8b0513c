#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "oar/voxelio/contours.hpp"
#include "oar/voxelio/volume.hpp"

namespace oar::voxelio::dicom {

// Minimal DICOM reader: uncompressed little-endian transfer syntaxes only
// (implicit 1.2.840.10008.1.2 and explicit 1.2.840.10008.1.2.1), which covers
// ordinary CT series and RT structure sets. No orientation handling beyond
// axial identity; spatial registration is out of scope.

constexpr std::uint32_t tag(std::uint16_t group, std::uint16_t elem) {
  return (static_cast<std::uint32_t>(group) << 16) | elem;
}

struct Element {
  std::string vr;
  std::vector<std::uint8_t> value;
  std::vector<class Dataset> items;  // populated for sequences
};

class Dataset {
 public:
  bool has(std::uint16_t group, std::uint16_t elem) const;
  const Element& get(std::uint16_t group, std::uint16_t elem) const;

  std::string str(std::uint16_t group, std::uint16_t elem) const;
  std::vector<double> nums(std::uint16_t group, std::uint16_t elem) const;  // DS/IS
  double num(std::uint16_t group, std::uint16_t elem) const;
  int intval(std::uint16_t group, std::uint16_t elem) const;
  std::uint16_t u16(std::uint16_t group, std::uint16_t elem) const;

  std::map<std::uint32_t, Element> elements;
};

Dataset parse_file(const std::filesystem::path& path);

struct SeriesGeometry {
  double origin_x = 0.0, origin_y = 0.0;  // ImagePositionPatient of first slice (mm)
  std::vector<double> slice_z;            // sorted patient-z per slice (mm)
  double dz = 1.0, dy = 1.0, dx = 1.0;    // mm
};

struct LoadedSeries {
  VolumeScan volume;
  SeriesGeometry geometry;
};

// Sorts slices by patient z, checks grid consistency, applies rescale
// slope/intercept.
LoadedSeries load_dicom_series(const std::vector<std::filesystem::path>& slice_files);

// Contours come back with patient-space coordinates (has_z = true, points in
// mm); resolve_against_series converts to pixel coordinates and slice
// indices. A contour whose z matches no slice within dz/2 is an error.
RawStructureSet load_dicom_rtstruct(const std::filesystem::path& path);

void resolve_against_series(RawStructureSet& set, const SeriesGeometry& geom);

struct DicomCase {
  LoadedSeries series;
  RawStructureSet structures;  // already resolved to slice indices / pixels
};

// Scans a directory: files with Modality CT form the series, the RTSTRUCT
// file provides the structure set.
DicomCase load_dicom_case(const std::filesystem::path& dir);

}  // namespace oar::voxelio::dicom
