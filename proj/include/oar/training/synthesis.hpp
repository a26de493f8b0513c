#pragma once

#include <filesystem>
#include <memory>
#include <stdexcept>

#include "oar/losses/losses.hpp"
#include "oar/networks/unet.hpp"
#include "oar/training/augment.hpp"
#include "oar/training/data.hpp"

namespace oar::training {

// Raised when the objective turns non-finite; carries the last good
// checkpoint so the run can be inspected or resumed.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::filesystem::path last_checkpoint)
      : std::runtime_error(what), last_checkpoint_(std::move(last_checkpoint)) {}

  const std::filesystem::path& last_checkpoint() const { return last_checkpoint_; }

 private:
  std::filesystem::path last_checkpoint_;
};

struct StepRecord {
  losses::LossBreakdown breakdown;
  double d_forward = 0.0;   // discriminator loss, source->target direction
  double d_backward = 0.0;  // target->source direction
};

struct SynthesisOutput {
  std::filesystem::path state_checkpoint;  // f64 resumable training state
  std::filesystem::path generator_export;  // f32 generator container
  std::filesystem::path log_path;
  std::vector<StepRecord> history;
};

// Alternating optimization: per step the target-domain discriminator, the
// source-domain discriminator, both generators jointly (adversarial +
// organ-masked cycle consistency + task loss through the segmentation
// subnetwork), then the subnetwork itself. CT and MR samples are drawn from
// disjoint case pools. Sampling and augmentation randomness is keyed by
// (seed, step), so a restored checkpoint replays the exact remaining stream.
SynthesisOutput train_synthesis(const std::vector<CaseData>& cases, const SynthesisConfig& cfg,
                                const std::filesystem::path& out_dir,
                                const std::filesystem::path& resume_from = {});

struct GeneratorPair {
  std::unique_ptr<networks::UNet> source_to_target;  // CT -> MR
  std::unique_ptr<networks::UNet> target_to_source;
};

GeneratorPair load_generators(const std::filesystem::path& checkpoint_path);

// Frozen single-slice translation: [H,W] -> [H,W].
Tensor synthesize_slice(networks::UNet& generator, const Tensor& slice);

}  // namespace oar::training
