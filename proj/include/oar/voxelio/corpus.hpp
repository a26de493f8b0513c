#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "oar/voxelio/stats.hpp"

namespace oar::voxelio {

// Dataset index (dataset.json): one entry per case with volume paths relative
// to the dataset directory.
struct CaseRecord {
  std::string id;
  bool clean = true;
  int slices = 0;
  std::string ct_path;
  std::string mr_path;
  std::string labels_path;
};

struct DatasetIndex {
  std::vector<std::string> taxonomy;
  std::vector<CaseRecord> cases;
};

void write_dataset_index(const std::filesystem::path& path, const DatasetIndex& index);
DatasetIndex read_dataset_index(const std::filesystem::path& path);

// Annotation manifest: annotations.csv with one record per instance
// (case, slice, class, bbox, area, slice dims, mask file) plus the masks as
// 8-bit PGM files under masks/.
void write_annotations(const std::filesystem::path& dataset_dir,
                       const std::vector<CaseInstances>& cases);
std::vector<CaseInstances> read_annotations(const std::filesystem::path& dataset_dir);

}  // namespace oar::voxelio
