#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "oar/networks/detector.hpp"
#include "oar/nn/tensor.hpp"
#include "oar/training/config.hpp"
#include "oar/voxelio/volume.hpp"

namespace oar::training {

using networks::GtInstance;
using nn::Tensor;

// center crop -> resize -> window to [-1, 1]; deterministic.
Tensor preprocess_slice(const Tensor& raw, const WindowConfig& window,
                        const PreprocessConfig& cfg);

// Labels take the same geometric path with nearest-neighbor resampling.
Tensor preprocess_labels(const Tensor& raw, const PreprocessConfig& cfg);

// One case after preprocessing: aligned CT/MR/label slices plus per-slice
// instance ground truth re-derived in the preprocessed coordinate frame.
struct CaseData {
  std::string id;
  bool clean = true;
  std::vector<Tensor> ct;      // [H,W] in [-1,1]
  std::vector<Tensor> mr;      // [H,W] in [-1,1]
  std::vector<Tensor> labels;  // [H,W] integer-valued
  std::vector<std::vector<GtInstance>> instances;
};

// Loads the corpus (dataset.json + volumes + annotation manifest) and applies
// preprocessing. case_filter, when non-empty, selects case ids.
std::vector<CaseData> load_cases(const std::filesystem::path& dataset_dir,
                                 const PreprocessConfig& cfg,
                                 const std::vector<std::string>& case_filter = {});

// Binary union of all organ classes, shaped [1,1,H,W] to weight the source
// reconstruction term.
Tensor organ_mask_from_labels(const Tensor& labels);

}  // namespace oar::training
