#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace oar::voxelio {

struct CaseEntry {
  std::string patient_id;  // pre/post scans of one patient share this id
  bool clean = false;
};

struct SplitManifest {
  std::vector<std::string> train_case_ids;
  std::vector<std::string> test_case_ids;
  std::map<std::string, bool> clean_flag;
  std::uint64_t seed = 0;
};

// Test cases are drawn exclusively from clean-flagged patients; the split is
// at patient granularity and deterministic under the seed.
SplitManifest split_dataset(const std::vector<CaseEntry>& cases, int test_count,
                            std::uint64_t seed);

void write_split(const std::filesystem::path& path, const SplitManifest& split);
SplitManifest read_split(const std::filesystem::path& path);

}  // namespace oar::voxelio
