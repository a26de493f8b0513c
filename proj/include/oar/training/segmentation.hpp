#pragma once

#include <filesystem>
#include <map>
#include <memory>

#include "oar/eval/evaluate.hpp"
#include "oar/networks/detector.hpp"
#include "oar/networks/unet.hpp"
#include "oar/training/augment.hpp"
#include "oar/training/data.hpp"

namespace oar::training {

struct SegOutput {
  std::filesystem::path checkpoint;  // resumable detector state
  std::filesystem::path log_path;
  std::filesystem::path val_dice_path;
  std::vector<std::map<int, double>> val_dice_history;  // per epoch, class -> dice
};

// Trains proposal and ROI heads jointly over sampled ROI batches with the
// warmup/decay schedule. When the detector config requests fusion, the frozen
// generator synthesizes the second modality from each CT slice (cached per
// slice, transformed together with the CT under augmentation); its parameters
// are asserted unchanged by training. Per-epoch validation dice per class is
// logged against val_set. Sampling randomness is keyed by (seed, epoch, step),
// so an epoch-boundary resume replays the identical stream.
SegOutput train_segmentation(const std::vector<CaseData>& train_set,
                             const std::vector<CaseData>& val_set,
                             networks::UNet* frozen_generator, const SegTrainConfig& cfg,
                             const std::filesystem::path& out_dir,
                             const std::filesystem::path& resume_from = {});

// Rebuilds the detector from a training checkpoint.
std::unique_ptr<networks::InstanceSegmentor> load_detector(
    const std::filesystem::path& checkpoint_path);

// ---- semantic baseline ---------------------------------------------------------

struct SemanticOutput {
  std::unique_ptr<networks::UNet> net;
  losses::ClassWeights weights;
  std::vector<double> loss_history;
};

// CT-only semantic UNet trained with weighted (median-frequency) or plain
// cross entropy; the baseline pair behind the class-imbalance comparison.
SemanticOutput train_semantic(const std::vector<CaseData>& train_set,
                              const SemanticTrainConfig& cfg);

// argmax prediction helper for evaluation.
Tensor semantic_predict(networks::UNet& net, const Tensor& slice);

}  // namespace oar::training
