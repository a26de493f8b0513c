#pragma once

#include "oar/common/rng.hpp"
#include "oar/training/data.hpp"

namespace oar::training {

// Carrier for one slice through augmentation. `companion` is an aligned
// second image (the synthesized modality) that must receive the same
// geometric transform; empty tensors mean "not present".
struct Sample {
  Tensor image;                      // [H,W]
  Tensor companion;                  // optional aligned [H,W]
  Tensor labels;                     // optional [H,W] integer-valued
  std::vector<GtInstance> instances;
};

// synthesis mode: random crop (when configured) + horizontal flip.
// segmentation mode: horizontal flip + scale jitter from the configured set.
// Masks and boxes transform consistently with the image; a box (x0,..,x1,..)
// flips to (W - x1, .., W - x0, ..) and scales by exactly s under jitter.
Sample augment(const Sample& in, AugmentMode mode, const AugmentConfig& cfg, Rng& rng);

}  // namespace oar::training
