#include "oar/voxelio/contours.hpp"

#include <json.hpp>

#include "oar/common/io.hpp"

namespace oar::voxelio {

RawStructureSet load_contour_file(const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::parse(read_text_file(path));
  RawStructureSet set;
  if (!j.contains("structures") || !j["structures"].is_array())
    throw std::runtime_error("contour file: missing 'structures' array in " + path.string());
  for (const auto& js : j["structures"]) {
    RawStructure s;
    s.name = js.at("name").get<std::string>();
    for (const auto& jc : js.value("contours", nlohmann::json::array())) {
      RawContour c;
      c.slice_index = jc.at("slice").get<int>();
      for (const auto& jp : jc.at("points")) {
        if (!jp.is_array() || jp.size() != 2)
          throw std::runtime_error("contour file: points must be [x,y] pairs");
        c.points.push_back({jp[0].get<double>(), jp[1].get<double>()});
      }
      s.contours.push_back(std::move(c));
    }
    set.structures.push_back(std::move(s));
  }
  return set;
}

ExtractResult extract_contours(const RawStructureSet& rtstruct, const VolumeScan& volume,
                               const ClassNameMap& class_map) {
  ExtractResult result;
  result.annotations.case_id = volume.case_id();

  if (rtstruct.structures.empty())
    result.warnings.push_back("empty structure set: no contours extracted");

  for (const auto& structure : rtstruct.structures) {
    auto cid = class_map.resolve(structure.name);
    if (!cid) {
      result.unknown_classes.push_back(structure.name);
      continue;
    }
    int index_in_structure = 0;
    for (const auto& raw : structure.contours) {
      int slice = raw.slice_index;
      if (slice < 0 || slice >= volume.slices())
        throw std::runtime_error("contour " + structure.name + "[" +
                                 std::to_string(index_in_structure) + "] references slice " +
                                 std::to_string(slice) + " of a " +
                                 std::to_string(volume.slices()) + "-slice volume");
      if (raw.points.size() < 3) {
        result.warnings.push_back("contour " + structure.name + "[" +
                                  std::to_string(index_in_structure) +
                                  "] has fewer than 3 vertices; skipped");
        ++index_in_structure;
        continue;
      }
      Contour c;
      c.slice_index = slice;
      c.class_id = *cid;
      c.points = raw.points;
      result.annotations.contours.push_back(std::move(c));
      ++index_in_structure;
    }
  }
  return result;
}

void build_instances(AnnotationSet& set, int rows, int cols, double enlarge,
                     std::int64_t min_area, std::vector<std::string>* warnings) {
  for (const auto& contour : set.contours) {
    BinaryMask mask = rasterize_contour(contour, rows, cols, warnings);
    InstanceResult res = compute_instance_bbox(mask, contour.class_id, contour.slice_index,
                                               enlarge, min_area);
    if (res.record) {
      set.instances.push_back(std::move(*res.record));
    } else if (warnings) {
      const char* why = res.rejection == InstanceRejection::empty_mask
                            ? "empty mask"
                            : "area below minimum";
      warnings->push_back("instance of class " + class_name(contour.class_id) + " on slice " +
                          std::to_string(contour.slice_index) + " rejected: " + why);
    }
  }
}

}  // namespace oar::voxelio
