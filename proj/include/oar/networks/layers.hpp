#pragma once

#include <deque>
#include <string>
#include <vector>

#include "oar/common/rng.hpp"
#include "oar/nn/graph.hpp"
#include "oar/nn/ops.hpp"

namespace oar::networks {

using nn::Graph;
using nn::Node;
using nn::Param;
using nn::Tensor;

// Owns parameters with stable addresses; modules register layers here.
class ParamStore {
 public:
  Param* add(const std::string& name, Tensor init) {
    params_.emplace_back(name, std::move(init));
    return &params_.back();
  }

  std::vector<Param*> all() {
    std::vector<Param*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

 private:
  std::deque<Param> params_;
};

Tensor he_normal(std::vector<std::int64_t> shape, std::int64_t fan_in, double leaky_slope,
                 Rng& rng);

struct ConvLayer {
  Param* w = nullptr;
  Param* b = nullptr;
  int stride = 1;
  int pad = 1;
  nn::PadMode pad_mode = nn::PadMode::zero;

  Node* forward(Graph& g, Node* x) const {
    return nn::conv2d(g, x, g.param(*w), b ? g.param(*b) : nullptr, stride, pad, pad_mode);
  }
};

ConvLayer make_conv(ParamStore& store, const std::string& name, int in_ch, int out_ch, int ksize,
                    int stride, int pad, double leaky_slope, Rng& rng, bool bias = true,
                    nn::PadMode pad_mode = nn::PadMode::zero);

struct NormLayer {
  Param* gamma = nullptr;
  Param* beta = nullptr;

  Node* forward(Graph& g, Node* x) const {
    return nn::instance_norm(g, x, g.param(*gamma), g.param(*beta));
  }
};

NormLayer make_norm(ParamStore& store, const std::string& name, int channels);

// conv -> instance norm (optional) -> leaky relu
struct ConvBlock {
  ConvLayer conv;
  NormLayer norm;
  bool use_norm = true;
  double slope = 0.2;

  Node* forward(Graph& g, Node* x) const {
    Node* y = conv.forward(g, x);
    if (use_norm) y = norm.forward(g, y);
    return nn::leaky_relu(g, y, slope);
  }
};

ConvBlock make_block(ParamStore& store, const std::string& name, int in_ch, int out_ch, int stride,
                     double slope, bool use_norm, Rng& rng,
                     nn::PadMode pad_mode = nn::PadMode::zero);

struct FcLayer {
  Param* w = nullptr;
  Param* b = nullptr;

  Node* forward(Graph& g, Node* x) const {
    return nn::fc(g, x, g.param(*w), g.param(*b));
  }
};

FcLayer make_fc(ParamStore& store, const std::string& name, int in_dim, int out_dim, Rng& rng);

}  // namespace oar::networks
