#include "oar/nn/tensor.hpp"

#include <cmath>

namespace oar::nn {

bool all_finite(const Tensor& t) {
  for (std::int64_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(t[i])) return false;
  return true;
}

}  // namespace oar::nn
