#include "oar/training/data.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "oar/nn/ops.hpp"
#include "oar/voxelio/annotations.hpp"
#include "oar/voxelio/corpus.hpp"

namespace oar::training {

namespace {

Tensor center_crop(const Tensor& img, int crop, bool nearest_pad_check = true) {
  (void)nearest_pad_check;
  const std::int64_t H = img.dim(0), W = img.dim(1);
  if (H < crop || W < crop)
    throw std::invalid_argument("preprocess: slice " + img.shape_str() +
                                " smaller than crop size " + std::to_string(crop));
  std::int64_t r0 = (H - crop) / 2, c0 = (W - crop) / 2;
  Tensor out({crop, crop});
  for (std::int64_t r = 0; r < crop; ++r)
    for (std::int64_t c = 0; c < crop; ++c) out.at2(r, c) = img.at2(r0 + r, c0 + c);
  return out;
}

}  // namespace

Tensor preprocess_slice(const Tensor& raw, const WindowConfig& window,
                        const PreprocessConfig& cfg) {
  if (window.hi <= window.lo) throw std::invalid_argument("preprocess: bad window");
  Tensor cropped = center_crop(raw, cfg.crop);
  Tensor resized = cropped.dim(0) == cfg.resize && cropped.dim(1) == cfg.resize
                       ? cropped
                       : nn::bilinear_resize(cropped, cfg.resize, cfg.resize);
  for (std::int64_t i = 0; i < resized.numel(); ++i) {
    double v = std::clamp(resized[i], window.lo, window.hi);
    resized[i] = 2.0 * (v - window.lo) / (window.hi - window.lo) - 1.0;
  }
  return resized;
}

Tensor preprocess_labels(const Tensor& raw, const PreprocessConfig& cfg) {
  Tensor cropped = center_crop(raw, cfg.crop);
  if (cropped.dim(0) == cfg.resize && cropped.dim(1) == cfg.resize) return cropped;
  return nn::nearest_resize(cropped, cfg.resize, cfg.resize);
}

Tensor organ_mask_from_labels(const Tensor& labels) {
  Tensor mask({1, 1, labels.dim(0), labels.dim(1)});
  for (std::int64_t i = 0; i < labels.numel(); ++i) mask[i] = labels[i] > 0.0 ? 1.0 : 0.0;
  return mask;
}

std::vector<CaseData> load_cases(const std::filesystem::path& dataset_dir,
                                 const PreprocessConfig& cfg,
                                 const std::vector<std::string>& case_filter) {
  auto index = voxelio::read_dataset_index(dataset_dir / "dataset.json");
  auto annotations = voxelio::read_annotations(dataset_dir);
  std::map<std::string, const voxelio::CaseInstances*> annot_by_case;
  for (const auto& a : annotations) annot_by_case[a.case_id] = &a;

  auto selected = [&case_filter](const std::string& id) {
    return case_filter.empty() ||
           std::find(case_filter.begin(), case_filter.end(), id) != case_filter.end();
  };

  std::vector<CaseData> out;
  for (const auto& rec : index.cases) {
    if (!selected(rec.id)) continue;
    CaseData data;
    data.id = rec.id;
    data.clean = rec.clean;

    auto ct = voxelio::read_volume(dataset_dir / rec.ct_path);
    auto mr = voxelio::read_volume(dataset_dir / rec.mr_path);
    auto labels = voxelio::read_volume(dataset_dir / rec.labels_path);
    if (ct.slices() != labels.slices() || ct.rows() != labels.rows())
      throw std::runtime_error("load_cases: CT and label grids disagree for " + rec.id);

    for (int s = 0; s < ct.slices(); ++s) {
      data.ct.push_back(preprocess_slice(ct.slice_tensor(s), cfg.ct_window, cfg));
      data.labels.push_back(preprocess_labels(labels.slice_tensor(s), cfg));
      data.instances.emplace_back();
    }
    for (int s = 0; s < mr.slices(); ++s)
      data.mr.push_back(preprocess_slice(mr.slice_tensor(s), cfg.mr_window, cfg));

    if (auto it = annot_by_case.find(rec.id); it != annot_by_case.end()) {
      for (const auto& inst : it->second->instances) {
        if (inst.slice_index < 0 || inst.slice_index >= ct.slices()) continue;
        // Transform the stored full-resolution mask into the preprocessed
        // frame and re-derive the detection box there.
        Tensor m({inst.mask.rows, inst.mask.cols});
        for (std::int64_t i = 0; i < m.numel(); ++i)
          m[i] = inst.mask.pixels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
        Tensor warped = preprocess_labels(m, cfg);
        voxelio::BinaryMask mask;
        mask.rows = static_cast<int>(warped.dim(0));
        mask.cols = static_cast<int>(warped.dim(1));
        mask.pixels.resize(static_cast<std::size_t>(warped.numel()));
        for (std::int64_t i = 0; i < warped.numel(); ++i)
          mask.pixels[static_cast<std::size_t>(i)] = warped[i] > 0.5 ? 1 : 0;
        auto res = voxelio::compute_instance_bbox(mask, inst.class_id, inst.slice_index);
        if (!res.record) continue;  // transform can shrink tiny instances away
        GtInstance gt;
        gt.class_id = inst.class_id;
        gt.box = res.record->bbox;
        gt.mask = std::move(res.record->mask);
        data.instances[static_cast<std::size_t>(inst.slice_index)].push_back(std::move(gt));
      }
    }
    out.push_back(std::move(data));
  }
  return out;
}

}  // namespace oar::training
