#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "oar/voxelio/annotations.hpp"

namespace oar::voxelio {

struct ClassStats {
  int class_id = 0;
  std::int64_t image_count = 0;     // slices containing >= 1 instance of the class
  std::int64_t instance_count = 0;  // total instances
  double median_relative_area_pct = 0.0;       // contour (mask) area / slice area * 100
  double median_bbox_relative_area_pct = 0.0;  // auxiliary: bbox area / slice area * 100
};

struct DatasetStats {
  std::vector<ClassStats> per_class;  // always kNumClasses entries; zeros when absent
};

struct CaseInstances {
  std::string case_id;
  int rows = 0;
  int cols = 0;
  std::vector<InstanceRecord> instances;
};

// Instances are assumed already filtered by compute_instance_bbox. Median of
// an even-length list is the mean of the two middle values.
DatasetStats compute_dataset_stats(const std::vector<CaseInstances>& dataset);

void write_stats_csv(const std::filesystem::path& path, const DatasetStats& stats);

}  // namespace oar::voxelio
