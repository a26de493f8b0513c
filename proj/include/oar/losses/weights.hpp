#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "oar/nn/tensor.hpp"

namespace oar::losses {

// Per-class balancing weights alpha_c = median_freq / freq(c), where freq(c)
// counts class-c pixels over the total pixels of images in which c appears.
// Classes never seen in the corpus are reported absent, not zero-weighted.
struct ClassWeights {
  std::vector<double> alpha;
  std::vector<bool> present;
  std::vector<double> freq;  // provenance: the frequencies the weights came from
  double median_freq = 0.0;

  int num_classes() const { return static_cast<int>(alpha.size()); }

  bool is_present(int c) const { return present[static_cast<std::size_t>(c)]; }

  double weight(int c) const {
    if (c < 0 || c >= num_classes() || !present[static_cast<std::size_t>(c)])
      throw std::invalid_argument("ClassWeights: no weight for class " + std::to_string(c));
    return alpha[static_cast<std::size_t>(c)];
  }

  static ClassWeights uniform(int num_classes) {
    ClassWeights w;
    w.alpha.assign(static_cast<std::size_t>(num_classes), 1.0);
    w.present.assign(static_cast<std::size_t>(num_classes), true);
    w.freq.assign(static_cast<std::size_t>(num_classes), 0.0);
    w.median_freq = 0.0;
    return w;
  }
};

// label_maps: integer-valued [H,W] rasters. The median over present-class
// frequencies uses the mean of the two middle values when the count is even.
ClassWeights median_frequency_weights(const std::vector<nn::Tensor>& label_maps, int num_classes);

}  // namespace oar::losses
