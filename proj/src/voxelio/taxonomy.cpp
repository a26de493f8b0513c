#include "oar/voxelio/taxonomy.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

#include <json.hpp>

namespace oar::voxelio {

const std::vector<std::string>& class_names() {
  static const std::vector<std::string> names = {
      "BrainStem", "Chiasm", "Cochlea",    "Eye",        "InnerEar",
      "Larynx",    "Lens",   "OpticNerve", "SpinalCord", "GTV"};
  return names;
}

int class_id(const std::string& canonical_name) {
  const auto& names = class_names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == canonical_name) return static_cast<int>(i) + 1;
  throw std::invalid_argument("unknown class name: " + canonical_name);
}

const std::string& class_name(int id) {
  if (id < 1 || id > kNumClasses)
    throw std::invalid_argument("class id out of range: " + std::to_string(id));
  return class_names()[static_cast<std::size_t>(id - 1)];
}

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string strip_laterality(const std::string& s) {
  for (const char* suffix : {"_l", "_r", "-l", "-r", " l", " r"}) {
    std::string suf(suffix);
    if (s.size() > suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0)
      return s.substr(0, s.size() - suf.size());
  }
  return s;
}

}  // namespace

ClassNameMap::ClassNameMap() {
  for (const auto& name : class_names()) aliases_[lower(name)] = name;
  // Common spellings seen in structure sets.
  add_alias("Brain Stem", "BrainStem");
  add_alias("Brain-Stem", "BrainStem");
  add_alias("Optic Nerve", "OpticNerve");
  add_alias("Optic-Nerve", "OpticNerve");
  add_alias("Spinal Cord", "SpinalCord");
  add_alias("Spinal-Cord", "SpinalCord");
  add_alias("Inner Ear", "InnerEar");
  add_alias("Inner Ears", "InnerEar");
  add_alias("InnerEars", "InnerEar");
  add_alias("Optic Chiasm", "Chiasm");
}

void ClassNameMap::add_alias(const std::string& raw, const std::string& canonical) {
  aliases_[lower(raw)] = canonical;
}

ClassNameMap ClassNameMap::load(const std::string& json_text) {
  ClassNameMap map;
  nlohmann::json j = nlohmann::json::parse(json_text);
  if (!j.is_object()) throw std::invalid_argument("class map file: expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    class_id(it.value().get<std::string>());  // validate the canonical side
    map.add_alias(it.key(), it.value().get<std::string>());
  }
  return map;
}

std::optional<int> ClassNameMap::resolve(const std::string& raw_name) const {
  std::string key = lower(raw_name);
  auto it = aliases_.find(key);
  if (it == aliases_.end()) it = aliases_.find(strip_laterality(key));
  if (it == aliases_.end()) return std::nullopt;
  return class_id(it->second);
}

}  // namespace oar::voxelio
