#include "oar/eval/evaluate.hpp"

#include <cmath>
#include <map>

#include "oar/common/csv.hpp"
#include "oar/common/io.hpp"
#include "oar/voxelio/taxonomy.hpp"

namespace oar::eval {

double DiceReport::mean_dice(int class_id) const {
  for (const auto& c : classes)
    if (c.class_id == class_id) return c.mean_dice;
  throw std::invalid_argument("DiceReport: no class " + std::to_string(class_id));
}

namespace {

struct Accum {
  double inter = 0.0, psum = 0.0, tsum = 0.0;
};

DiceReport finalize(std::map<std::string, std::vector<Accum>>& per_case, int num_classes,
                    nlohmann::json metadata) {
  DiceReport report;
  report.metadata = std::move(metadata);
  report.classes.resize(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    auto& entry = report.classes[static_cast<std::size_t>(c)];
    entry.class_id = c + 1;
    double sum = 0.0;
    for (auto& [case_id, acc] : per_case) {
      const Accum& a = acc[static_cast<std::size_t>(c)];
      if (a.tsum == 0.0) continue;  // case does not contain the class
      double dice = 2.0 * a.inter / (a.psum + a.tsum);
      entry.per_case.emplace_back(case_id, dice);
      sum += dice;
      ++entry.case_count;
    }
    entry.absent = entry.case_count == 0;
    entry.mean_dice = entry.absent ? 0.0 : sum / entry.case_count;
  }
  return report;
}

}  // namespace

DiceReport evaluate_semantic(const SemanticPredictor& model,
                             const std::vector<training::CaseData>& test_set, int num_classes,
                             nlohmann::json metadata) {
  if (test_set.empty()) throw std::invalid_argument("evaluate_semantic: empty test set");
  std::map<std::string, std::vector<Accum>> per_case;
  for (const auto& data : test_set) {
    auto& acc = per_case[data.id];
    acc.resize(static_cast<std::size_t>(num_classes));
    for (int s = 0; s < static_cast<int>(data.ct.size()); ++s) {
      Tensor pred = model(data, s);
      const Tensor& truth = data.labels[static_cast<std::size_t>(s)];
      if (!pred.same_shape(truth))
        throw std::invalid_argument("evaluate_semantic: prediction shape mismatch");
      for (std::int64_t i = 0; i < pred.numel(); ++i) {
        int p = static_cast<int>(pred[i]);
        int t = static_cast<int>(truth[i]);
        if (p >= 1 && p <= num_classes) acc[static_cast<std::size_t>(p - 1)].psum += 1.0;
        if (t >= 1 && t <= num_classes) {
          acc[static_cast<std::size_t>(t - 1)].tsum += 1.0;
          if (p == t) acc[static_cast<std::size_t>(t - 1)].inter += 1.0;
        }
      }
    }
  }
  return finalize(per_case, num_classes, std::move(metadata));
}

DiceReport evaluate_instance(const InstancePredictor& model,
                             const std::vector<training::CaseData>& test_set, int num_classes,
                             double score_threshold, nlohmann::json metadata) {
  if (test_set.empty()) throw std::invalid_argument("evaluate_instance: empty test set");
  std::map<std::string, std::vector<Accum>> per_case;
  for (const auto& data : test_set) {
    auto& acc = per_case[data.id];
    acc.resize(static_cast<std::size_t>(num_classes));
    for (int s = 0; s < static_cast<int>(data.ct.size()); ++s) {
      const Tensor& truth = data.labels[static_cast<std::size_t>(s)];
      const int rows = static_cast<int>(truth.dim(0));
      const int cols = static_cast<int>(truth.dim(1));

      // Union of accepted detection masks, one binary map per class.
      std::vector<std::vector<std::uint8_t>> unions(
          static_cast<std::size_t>(num_classes),
          std::vector<std::uint8_t>(static_cast<std::size_t>(rows) * cols, 0));
      for (const auto& det : model(data, s)) {
        if (det.score < score_threshold) continue;
        if (det.class_id < 1 || det.class_id > num_classes) continue;
        auto mask = networks::paste_detection_mask(det, rows, cols);
        auto& u = unions[static_cast<std::size_t>(det.class_id - 1)];
        for (std::size_t i = 0; i < u.size(); ++i) u[i] |= mask.pixels[i];
      }

      for (std::int64_t i = 0; i < truth.numel(); ++i) {
        int t = static_cast<int>(truth[i]);
        for (int c = 1; c <= num_classes; ++c) {
          bool p = unions[static_cast<std::size_t>(c - 1)][static_cast<std::size_t>(i)] != 0;
          if (p) acc[static_cast<std::size_t>(c - 1)].psum += 1.0;
          if (t == c) {
            acc[static_cast<std::size_t>(c - 1)].tsum += 1.0;
            if (p) acc[static_cast<std::size_t>(c - 1)].inter += 1.0;
          }
        }
      }
    }
  }
  return finalize(per_case, num_classes, std::move(metadata));
}

void write_dice_report(const std::filesystem::path& summary_csv, const DiceReport& report) {
  {
    CsvWriter csv(summary_csv);
    csv.row({"class", "mean_dice", "case_count", "absent"});
    for (const auto& c : report.classes) {
      std::string name = c.class_id <= voxelio::kNumClasses ? voxelio::class_name(c.class_id)
                                                            : std::to_string(c.class_id);
      csv.row({name, fmt_double(c.mean_dice), std::to_string(c.case_count),
               c.absent ? "1" : "0"});
    }
  }
  std::filesystem::path per_case = summary_csv;
  per_case.replace_extension(".per_case.csv");
  CsvWriter csv(per_case);
  csv.row({"class", "case", "dice"});
  for (const auto& c : report.classes) {
    std::string name = c.class_id <= voxelio::kNumClasses ? voxelio::class_name(c.class_id)
                                                          : std::to_string(c.class_id);
    for (const auto& [case_id, dice] : c.per_case) csv.row({name, case_id, fmt_double(dice)});
  }
}

PanelOutput export_synthesis_panel(const SliceTranslator& synthesize,
                                   const SliceTranslator& reconstruct,
                                   const std::vector<training::CaseData>& cases,
                                   const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  PanelOutput out;
  out.cycle_csv = out_dir / "cycle_error.csv";
  CsvWriter csv(out.cycle_csv);
  csv.row({"case", "slice", "l1_cycle_error"});

  auto to_byte = [](double v) {
    double clamped = std::clamp(v, -1.0, 1.0);
    return static_cast<std::uint8_t>(std::lround((clamped + 1.0) * 127.5));
  };

  for (const auto& data : cases) {
    for (int s = 0; s < static_cast<int>(data.ct.size()); ++s) {
      const Tensor& ct = data.ct[static_cast<std::size_t>(s)];
      Tensor synth = synthesize(ct);
      Tensor rec = reconstruct(synth);
      if (!synth.same_shape(ct) || !rec.same_shape(ct))
        throw std::runtime_error("export_synthesis_panel: translator changed the slice shape");

      const int rows = static_cast<int>(ct.dim(0)), cols = static_cast<int>(ct.dim(1));
      GrayImage panel;
      panel.rows = rows;
      panel.cols = cols * 3;
      panel.pixels.resize(static_cast<std::size_t>(rows) * panel.cols);
      double l1 = 0.0;
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
          panel.at(r, c) = to_byte(ct.at2(r, c));
          panel.at(r, c + cols) = to_byte(synth.at2(r, c));
          panel.at(r, c + 2 * cols) = to_byte(rec.at2(r, c));
        }
      for (std::int64_t i = 0; i < ct.numel(); ++i) l1 += std::abs(rec[i] - ct[i]);
      l1 /= static_cast<double>(ct.numel());

      auto path = out_dir / ("panel_" + data.id + "_s" + std::to_string(s) + ".pgm");
      write_pgm(path, panel);
      out.panels.push_back(path);
      csv.row({data.id, std::to_string(s), fmt_double(l1)});
    }
  }
  return out;
}

}  // namespace oar::eval
