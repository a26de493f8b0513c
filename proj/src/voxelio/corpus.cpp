#include "oar/voxelio/corpus.hpp"

#include <map>

#include <json.hpp>

#include "oar/common/csv.hpp"
#include "oar/common/io.hpp"
#include "oar/voxelio/taxonomy.hpp"

namespace oar::voxelio {

void write_dataset_index(const std::filesystem::path& path, const DatasetIndex& index) {
  nlohmann::json j;
  j["taxonomy"] = index.taxonomy;
  j["cases"] = nlohmann::json::array();
  for (const auto& c : index.cases) {
    nlohmann::json jc;
    jc["id"] = c.id;
    jc["clean"] = c.clean;
    jc["slices"] = c.slices;
    jc["ct"] = c.ct_path;
    jc["mr"] = c.mr_path;
    jc["labels"] = c.labels_path;
    j["cases"].push_back(jc);
  }
  write_text_file(path, j.dump(2) + "\n");
}

DatasetIndex read_dataset_index(const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::parse(read_text_file(path));
  DatasetIndex index;
  index.taxonomy = j.value("taxonomy", std::vector<std::string>{});
  for (const auto& jc : j.at("cases")) {
    CaseRecord c;
    c.id = jc.at("id").get<std::string>();
    c.clean = jc.value("clean", true);
    c.slices = jc.value("slices", 0);
    c.ct_path = jc.value("ct", "");
    c.mr_path = jc.value("mr", "");
    c.labels_path = jc.value("labels", "");
    index.cases.push_back(std::move(c));
  }
  return index;
}

void write_annotations(const std::filesystem::path& dataset_dir,
                       const std::vector<CaseInstances>& cases) {
  std::filesystem::create_directories(dataset_dir / "masks");
  CsvWriter csv(dataset_dir / "annotations.csv");
  csv.row({"case", "slice", "class", "x0", "y0", "x1", "y1", "area_px", "rows", "cols", "mask"});
  for (const auto& c : cases) {
    int counter = 0;
    for (const auto& inst : c.instances) {
      std::string mask_rel = "masks/" + c.case_id + "_s" + std::to_string(inst.slice_index) +
                             "_i" + std::to_string(counter++) + ".pgm";
      GrayImage img = inst.mask;
      for (auto& px : img.pixels) px = px ? 255 : 0;
      write_pgm(dataset_dir / mask_rel, img);
      csv.row({c.case_id, std::to_string(inst.slice_index), class_name(inst.class_id),
               fmt_double(inst.bbox.x0), fmt_double(inst.bbox.y0), fmt_double(inst.bbox.x1),
               fmt_double(inst.bbox.y1), std::to_string(inst.area_px), std::to_string(c.rows),
               std::to_string(c.cols), mask_rel});
    }
  }
}

std::vector<CaseInstances> read_annotations(const std::filesystem::path& dataset_dir) {
  auto rows = read_csv(dataset_dir / "annotations.csv");
  if (rows.empty()) return {};
  std::map<std::string, CaseInstances> by_case;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() < 11) throw std::runtime_error("annotations.csv: malformed row");
    CaseInstances& c = by_case[r[0]];
    c.case_id = r[0];
    c.rows = std::stoi(r[8]);
    c.cols = std::stoi(r[9]);
    InstanceRecord inst;
    inst.slice_index = std::stoi(r[1]);
    inst.class_id = class_id(r[2]);
    inst.bbox = {std::stod(r[3]), std::stod(r[4]), std::stod(r[5]), std::stod(r[6])};
    inst.area_px = std::stoll(r[7]);
    inst.mask = read_pgm(dataset_dir / r[10]);
    for (auto& px : inst.mask.pixels) px = px ? 1 : 0;
    c.instances.push_back(std::move(inst));
  }
  std::vector<CaseInstances> out;
  out.reserve(by_case.size());
  for (auto& [id, c] : by_case) out.push_back(std::move(c));
  return out;
}

}  // namespace oar::voxelio
