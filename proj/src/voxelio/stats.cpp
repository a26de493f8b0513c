#include "oar/voxelio/stats.hpp"

#include <algorithm>
#include <set>

#include "oar/common/csv.hpp"
#include "oar/voxelio/taxonomy.hpp"

namespace oar::voxelio {

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

DatasetStats compute_dataset_stats(const std::vector<CaseInstances>& dataset) {
  DatasetStats stats;
  stats.per_class.resize(kNumClasses);
  std::vector<std::vector<double>> mask_ratios(kNumClasses);
  std::vector<std::vector<double>> bbox_ratios(kNumClasses);
  std::vector<std::set<std::pair<std::string, int>>> slices_with(kNumClasses);

  for (const auto& c : dataset) {
    double slice_area = static_cast<double>(c.rows) * c.cols;
    for (const auto& inst : c.instances) {
      int idx = inst.class_id - 1;
      if (idx < 0 || idx >= kNumClasses) continue;
      auto& s = stats.per_class[static_cast<std::size_t>(idx)];
      ++s.instance_count;
      slices_with[static_cast<std::size_t>(idx)].insert({c.case_id, inst.slice_index});
      mask_ratios[static_cast<std::size_t>(idx)].push_back(
          100.0 * static_cast<double>(inst.area_px) / slice_area);
      bbox_ratios[static_cast<std::size_t>(idx)].push_back(100.0 * inst.bbox.area() / slice_area);
    }
  }

  for (int i = 0; i < kNumClasses; ++i) {
    auto& s = stats.per_class[static_cast<std::size_t>(i)];
    s.class_id = i + 1;
    s.image_count = static_cast<std::int64_t>(slices_with[static_cast<std::size_t>(i)].size());
    s.median_relative_area_pct = median(mask_ratios[static_cast<std::size_t>(i)]);
    s.median_bbox_relative_area_pct = median(bbox_ratios[static_cast<std::size_t>(i)]);
  }
  return stats;
}

void write_stats_csv(const std::filesystem::path& path, const DatasetStats& stats) {
  CsvWriter csv(path);
  csv.row({"class", "image_count", "instance_count", "median_relative_area_pct",
           "median_bbox_relative_area_pct"});
  for (const auto& s : stats.per_class) {
    csv.row({class_name(s.class_id), std::to_string(s.image_count),
             std::to_string(s.instance_count), fmt_double(s.median_relative_area_pct),
             fmt_double(s.median_bbox_relative_area_pct)});
  }
}

}  // namespace oar::voxelio
