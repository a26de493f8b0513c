#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "oar/networks/detector.hpp"
#include "oar/training/data.hpp"

namespace oar::eval {

using nn::Tensor;

struct DiceReport {
  struct PerClass {
    int class_id = 0;
    double mean_dice = 0.0;
    int case_count = 0;   // cases containing the class
    bool absent = true;   // no test case contains the class
    std::vector<std::pair<std::string, double>> per_case;
  };
  std::vector<PerClass> classes;
  nlohmann::json metadata;  // config hash, seed, fusion scheme, ...

  double mean_dice(int class_id) const;
};

// Per-pixel class prediction for one slice of a case -> [H,W] label map.
using SemanticPredictor = std::function<Tensor(const training::CaseData&, int slice)>;

// Per class, dice is computed per case over the union of that class's pixels
// across the case's slices, then averaged over the cases containing the
// class. Classes with no test instances are flagged absent, not scored 0.
DiceReport evaluate_semantic(const SemanticPredictor& model,
                             const std::vector<training::CaseData>& test_set, int num_classes,
                             nlohmann::json metadata = nlohmann::json::object());

using InstancePredictor =
    std::function<std::vector<networks::Detection>(const training::CaseData&, int slice)>;

// Accepted detections (score >= threshold) are unioned into one binary map
// per class per case, then scored exactly like the semantic path, making the
// two report styles comparable.
DiceReport evaluate_instance(const InstancePredictor& model,
                             const std::vector<training::CaseData>& test_set, int num_classes,
                             double score_threshold,
                             nlohmann::json metadata = nlohmann::json::object());

// summary CSV (class, mean dice, case count, absent) + per-case CSV
void write_dice_report(const std::filesystem::path& summary_csv, const DiceReport& report);

// ---- synthesis panels ---------------------------------------------------------

using SliceTranslator = std::function<Tensor(const Tensor&)>;  // [H,W] -> [H,W]

struct PanelOutput {
  std::vector<std::filesystem::path> panels;
  std::filesystem::path cycle_csv;
};

// Per input slice: side-by-side CT | synthesized | cycle reconstruction as an
// 8-bit image, plus a per-slice L1 cycle error table.
PanelOutput export_synthesis_panel(const SliceTranslator& synthesize,
                                   const SliceTranslator& reconstruct,
                                   const std::vector<training::CaseData>& cases,
                                   const std::filesystem::path& out_dir);

}  // namespace oar::eval
