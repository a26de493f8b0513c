#include "oar/voxelio/split.hpp"

#include <algorithm>
#include <stdexcept>

#include <json.hpp>

#include "oar/common/io.hpp"
#include "oar/common/rng.hpp"

namespace oar::voxelio {

SplitManifest split_dataset(const std::vector<CaseEntry>& cases, int test_count,
                            std::uint64_t seed) {
  std::vector<std::string> clean_ids;
  for (const auto& c : cases)
    if (c.clean) clean_ids.push_back(c.patient_id);

  if (test_count < 0) throw std::invalid_argument("split_dataset: negative test_count");
  if (static_cast<std::size_t>(test_count) > clean_ids.size())
    throw std::invalid_argument("split_dataset: requested " + std::to_string(test_count) +
                                " test cases but only " + std::to_string(clean_ids.size()) +
                                " clean cases exist");

  Rng rng(seed);
  rng.shuffle(clean_ids);
  SplitManifest manifest;
  manifest.seed = seed;
  std::vector<std::string> test(clean_ids.begin(), clean_ids.begin() + test_count);
  std::sort(test.begin(), test.end());
  manifest.test_case_ids = test;
  for (const auto& c : cases) {
    manifest.clean_flag[c.patient_id] = c.clean;
    if (std::find(test.begin(), test.end(), c.patient_id) == test.end())
      manifest.train_case_ids.push_back(c.patient_id);
  }
  return manifest;
}

void write_split(const std::filesystem::path& path, const SplitManifest& split) {
  nlohmann::json j;
  j["seed"] = split.seed;
  j["train"] = split.train_case_ids;
  j["test"] = split.test_case_ids;
  j["clean"] = split.clean_flag;
  write_text_file(path, j.dump(2) + "\n");
}

SplitManifest read_split(const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::parse(read_text_file(path));
  SplitManifest s;
  s.seed = j.value("seed", 0ull);
  s.train_case_ids = j.at("train").get<std::vector<std::string>>();
  s.test_case_ids = j.at("test").get<std::vector<std::string>>();
  if (j.contains("clean")) s.clean_flag = j["clean"].get<std::map<std::string, bool>>();
  return s;
}

}  // namespace oar::voxelio
