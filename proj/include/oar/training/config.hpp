#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "oar/losses/losses.hpp"
#include "oar/networks/detector.hpp"
#include "oar/networks/spec.hpp"

namespace oar::training {

// Intensity window [lo, hi] clamped then mapped linearly onto [-1, 1].
struct WindowConfig {
  double lo = 0.0;
  double hi = 1.0;
};

struct PreprocessConfig {
  int crop = 250;
  int resize = 256;
  WindowConfig ct_window{-160.0, 240.0};  // soft-tissue window
  WindowConfig mr_window{0.0, 800.0};

  nlohmann::json to_json() const;
  static PreprocessConfig from_json(const nlohmann::json& j);

  // Phantom-corpus scale: no crop, images already 64x64.
  static PreprocessConfig desk();
};

enum class AugmentMode { synthesis, segmentation };

struct AugmentConfig {
  bool flip = true;
  int random_crop = 0;             // synthesis mode; 0 disables
  std::vector<int> jitter_sizes;   // segmentation mode; empty disables

  nlohmann::json to_json() const;
  static AugmentConfig from_json(const nlohmann::json& j);
};

struct SynthesisConfig {
  int steps = 600;
  double lr = 2e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  int batch_size = 1;
  double lambda_content = 10.0;
  double lambda_task = 1.0;
  losses::GanForm gan_form = losses::GanForm::least_squares;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0: only the final checkpoint
  int num_classes = 10;
  bool train_subnet = true;
  networks::NetworkSpec generator;
  networks::NetworkSpec discriminator;
  networks::NetworkSpec seg_subnet;
  AugmentConfig augment;

  SynthesisConfig();

  nlohmann::json to_json() const;
  static SynthesisConfig from_json(const nlohmann::json& j);
  static SynthesisConfig desk();  // small channels, phantom scale
};

struct SegTrainConfig {
  double epochs = 18;
  double lr_start = 0.001;
  double lr_peak = 0.01;
  double warmup_epochs = 3.0;
  std::vector<double> decay_epochs = {5.0, 10.0};
  double decay_factor = 0.1;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  bool cache_synth = true;
  networks::DetectorConfig detector;
  AugmentConfig augment;

  nlohmann::json to_json() const;
  static SegTrainConfig from_json(const nlohmann::json& j);
  static SegTrainConfig desk();
};

// Baseline semantic UNet training (weighted or unweighted cross entropy).
struct SemanticTrainConfig {
  int steps = 400;
  double lr = 2e-4;
  bool weighted = true;
  std::uint64_t seed = 0;
  int num_classes = 10;
  networks::NetworkSpec net;
  AugmentConfig augment;

  SemanticTrainConfig();

  nlohmann::json to_json() const;
  static SemanticTrainConfig from_json(const nlohmann::json& j);
  static SemanticTrainConfig desk();
};

// Piecewise learning-rate schedule: linear warmup from lr_start to lr_peak
// over the first warmup_epochs, then multiply by decay_factor at each decay
// epoch. Evaluated at fractional epochs.
double lr_schedule(double epoch_fraction, const SegTrainConfig& cfg);

}  // namespace oar::training
