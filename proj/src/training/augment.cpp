#include "oar/training/augment.hpp"

#include "oar/nn/ops.hpp"

namespace oar::training {

namespace {

Tensor flip_hw(const Tensor& t) { return nn::flip_horizontal(t); }

voxelio::BinaryMask flip_mask(const voxelio::BinaryMask& m) {
  voxelio::BinaryMask out = m;
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) out.at(r, c) = m.at(r, m.cols - 1 - c);
  return out;
}

voxelio::BinaryMask resize_mask(const voxelio::BinaryMask& m, int size) {
  Tensor t({m.rows, m.cols});
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t[i] = m.pixels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
  Tensor r = nn::nearest_resize(t, size, size);
  voxelio::BinaryMask out;
  out.rows = out.cols = size;
  out.pixels.resize(static_cast<std::size_t>(size) * size);
  for (std::int64_t i = 0; i < r.numel(); ++i)
    out.pixels[static_cast<std::size_t>(i)] = r[i] > 0.5 ? 1 : 0;
  return out;
}

}  // namespace

Sample augment(const Sample& in, AugmentMode mode, const AugmentConfig& cfg, Rng& rng) {
  Sample out = in;

  if (mode == AugmentMode::synthesis && cfg.random_crop > 0 &&
      (out.image.dim(0) > cfg.random_crop || out.image.dim(1) > cfg.random_crop)) {
    const std::int64_t H = out.image.dim(0), W = out.image.dim(1);
    const int crop = cfg.random_crop;
    std::int64_t r0 = static_cast<std::int64_t>(rng.uniform_index(
        static_cast<std::uint64_t>(H - crop + 1)));
    std::int64_t c0 = static_cast<std::int64_t>(rng.uniform_index(
        static_cast<std::uint64_t>(W - crop + 1)));
    auto crop_t = [&](const Tensor& t) {
      Tensor o({crop, crop});
      for (int r = 0; r < crop; ++r)
        for (int c = 0; c < crop; ++c) o.at2(r, c) = t.at2(r0 + r, c0 + c);
      return o;
    };
    out.image = crop_t(out.image);
    if (out.companion.numel() > 0) out.companion = crop_t(out.companion);
    if (out.labels.numel() > 0) out.labels = crop_t(out.labels);
  }

  if (mode == AugmentMode::segmentation && !cfg.jitter_sizes.empty()) {
    int target = cfg.jitter_sizes[static_cast<std::size_t>(
        rng.uniform_index(cfg.jitter_sizes.size()))];
    const std::int64_t H = out.image.dim(0);
    if (target != H) {
      double s = static_cast<double>(target) / static_cast<double>(H);
      out.image = nn::bilinear_resize(out.image, target, target);
      if (out.companion.numel() > 0)
        out.companion = nn::bilinear_resize(out.companion, target, target);
      if (out.labels.numel() > 0) out.labels = nn::nearest_resize(out.labels, target, target);
      for (auto& inst : out.instances) {
        inst.box.x0 *= s;
        inst.box.y0 *= s;
        inst.box.x1 *= s;
        inst.box.y1 *= s;
        inst.mask = resize_mask(inst.mask, target);
      }
    }
  }

  if (cfg.flip && rng.uniform() < 0.5) {
    const double W = static_cast<double>(out.image.dim(1));
    out.image = flip_hw(out.image);
    if (out.companion.numel() > 0) out.companion = flip_hw(out.companion);
    if (out.labels.numel() > 0) out.labels = flip_hw(out.labels);
    for (auto& inst : out.instances) {
      double x0 = inst.box.x0, x1 = inst.box.x1;
      inst.box.x0 = W - x1;
      inst.box.x1 = W - x0;
      inst.mask = flip_mask(inst.mask);
    }
  }
  return out;
}

}  // namespace oar::training
