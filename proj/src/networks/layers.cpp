#include "oar/networks/layers.hpp"

#include <cmath>

namespace oar::networks {

Tensor he_normal(std::vector<std::int64_t> shape, std::int64_t fan_in, double leaky_slope,
                 Rng& rng) {
  double gain = std::sqrt(2.0 / (1.0 + leaky_slope * leaky_slope));
  double stddev = gain / std::sqrt(static_cast<double>(fan_in));
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, stddev);
  return t;
}

ConvLayer make_conv(ParamStore& store, const std::string& name, int in_ch, int out_ch, int ksize,
                    int stride, int pad, double leaky_slope, Rng& rng, bool bias,
                    nn::PadMode pad_mode) {
  ConvLayer layer;
  std::int64_t fan_in = static_cast<std::int64_t>(in_ch) * ksize * ksize;
  layer.w = store.add(name + ".w", he_normal({out_ch, in_ch, ksize, ksize}, fan_in, leaky_slope, rng));
  if (bias) layer.b = store.add(name + ".b", Tensor({out_ch}));
  layer.stride = stride;
  layer.pad = pad;
  layer.pad_mode = pad_mode;
  return layer;
}

NormLayer make_norm(ParamStore& store, const std::string& name, int channels) {
  NormLayer layer;
  layer.gamma = store.add(name + ".gamma", Tensor::full({channels}, 1.0));
  layer.beta = store.add(name + ".beta", Tensor({channels}));
  return layer;
}

ConvBlock make_block(ParamStore& store, const std::string& name, int in_ch, int out_ch, int stride,
                     double slope, bool use_norm, Rng& rng, nn::PadMode pad_mode) {
  ConvBlock block;
  block.conv = make_conv(store, name + ".conv", in_ch, out_ch, 3, stride, 1, slope, rng, true,
                         pad_mode);
  if (use_norm) block.norm = make_norm(store, name + ".norm", out_ch);
  block.use_norm = use_norm;
  block.slope = slope;
  return block;
}

FcLayer make_fc(ParamStore& store, const std::string& name, int in_dim, int out_dim, Rng& rng) {
  FcLayer layer;
  layer.w = store.add(name + ".w", he_normal({out_dim, in_dim}, in_dim, 0.0, rng));
  layer.b = store.add(name + ".b", Tensor({out_dim}));
  return layer;
}

}  // namespace oar::networks
