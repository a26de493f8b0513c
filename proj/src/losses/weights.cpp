#include "oar/losses/weights.hpp"

#include <algorithm>
#include <cmath>

namespace oar::losses {

ClassWeights median_frequency_weights(const std::vector<nn::Tensor>& label_maps, int num_classes) {
  if (label_maps.empty())
    throw std::invalid_argument("median_frequency_weights: empty label map set");
  std::vector<double> pixel_count(static_cast<std::size_t>(num_classes), 0.0);
  std::vector<double> image_pixels(static_cast<std::size_t>(num_classes), 0.0);

  std::vector<std::int64_t> per_image(static_cast<std::size_t>(num_classes));
  for (const nn::Tensor& map : label_maps) {
    std::fill(per_image.begin(), per_image.end(), 0);
    for (std::int64_t i = 0; i < map.numel(); ++i) {
      double v = map[i];
      int c = static_cast<int>(v);
      if (static_cast<double>(c) != v || c < 0 || c >= num_classes)
        throw std::invalid_argument("median_frequency_weights: invalid label value " +
                                    std::to_string(v));
      ++per_image[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < num_classes; ++c) {
      if (per_image[static_cast<std::size_t>(c)] > 0) {
        pixel_count[static_cast<std::size_t>(c)] +=
            static_cast<double>(per_image[static_cast<std::size_t>(c)]);
        image_pixels[static_cast<std::size_t>(c)] += static_cast<double>(map.numel());
      }
    }
  }

  ClassWeights w;
  w.alpha.assign(static_cast<std::size_t>(num_classes), 0.0);
  w.present.assign(static_cast<std::size_t>(num_classes), false);
  w.freq.assign(static_cast<std::size_t>(num_classes), 0.0);

  std::vector<double> freqs;
  for (int c = 0; c < num_classes; ++c) {
    if (image_pixels[static_cast<std::size_t>(c)] > 0.0) {
      w.present[static_cast<std::size_t>(c)] = true;
      w.freq[static_cast<std::size_t>(c)] =
          pixel_count[static_cast<std::size_t>(c)] / image_pixels[static_cast<std::size_t>(c)];
      freqs.push_back(w.freq[static_cast<std::size_t>(c)]);
    }
  }
  if (freqs.empty()) throw std::invalid_argument("median_frequency_weights: no class present");

  std::sort(freqs.begin(), freqs.end());
  std::size_t n = freqs.size();
  w.median_freq = (n % 2 == 1) ? freqs[n / 2] : 0.5 * (freqs[n / 2 - 1] + freqs[n / 2]);

  for (int c = 0; c < num_classes; ++c)
    if (w.present[static_cast<std::size_t>(c)])
      w.alpha[static_cast<std::size_t>(c)] = w.median_freq / w.freq[static_cast<std::size_t>(c)];
  return w;
}

}  // namespace oar::losses
