#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace oar::voxelio {

// Ten organ categories; 0 is background everywhere. Laterality sub-labels
// (Eye_L / Eye_R etc.) are merged into single classes.
inline constexpr int kBackground = 0;
inline constexpr int kNumClasses = 10;

const std::vector<std::string>& class_names();  // index i -> class id i+1

int class_id(const std::string& canonical_name);  // throws on unknown
const std::string& class_name(int id);            // id in [1, kNumClasses]

// Structure-name normalization ("Eye_L" -> "Eye"). Lookup order: exact entry
// in the mapping, then canonical names with laterality suffixes stripped
// (_L/_R/-L/-R/ L/ R, case-insensitive). Extra entries are data-driven so
// site-specific naming can be patched without code changes.
class ClassNameMap {
 public:
  ClassNameMap();  // built-in defaults only

  void add_alias(const std::string& raw, const std::string& canonical);

  // JSON object file: { "raw name": "CanonicalName", ... }
  static ClassNameMap load(const std::string& json_text);

  std::optional<int> resolve(const std::string& raw_name) const;

 private:
  std::map<std::string, std::string> aliases_;
};

}  // namespace oar::voxelio
