#pragma once

#include <vector>

#include "oar/nn/graph.hpp"

namespace oar::nn {

// ---- differentiable primitives -------------------------------------------

Node* add(Graph& g, Node* a, Node* b);
Node* sub(Graph& g, Node* a, Node* b);
Node* mul(Graph& g, Node* a, Node* b);
Node* scale(Graph& g, Node* a, double s);

// Scalar combiner: sum_i coeffs[i] * parts[i], every part a scalar node.
Node* weighted_sum(Graph& g, const std::vector<Node*>& parts, const std::vector<double>& coeffs);

Node* mean_all(Graph& g, Node* a);

enum class PadMode { zero, replicate };

// 2D convolution. x:[N,C,H,W], w:[K,C,kh,kw], b:[K] or nullptr. Replicate
// padding clamps to the edge pixel, which keeps constant inputs constant.
Node* conv2d(Graph& g, Node* x, Node* w, Node* b, int stride, int pad,
             PadMode mode = PadMode::zero);

// Fully connected. x:[N,D], w:[O,D], b:[O] or nullptr -> [N,O].
Node* fc(Graph& g, Node* x, Node* w, Node* b);

// Per-(sample,channel) normalization with affine parameters gamma/beta:[C].
Node* instance_norm(Graph& g, Node* x, Node* gamma, Node* beta, double eps = 1e-5);

Node* leaky_relu(Graph& g, Node* x, double slope = 0.2);
Node* tanh_act(Graph& g, Node* x);
Node* sigmoid_act(Graph& g, Node* x);

// Nearest-neighbor 2x spatial upsampling of NCHW input.
Node* nearest_upsample2x(Graph& g, Node* x);

// Channel concatenation of NCHW inputs with matching N,H,W.
Node* concat_channels(Graph& g, Node* a, Node* b);

// ---- ROI pooling -----------------------------------------------------------

struct Roi {
  int batch = 0;
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // image coordinates, edge convention
};

// Bilinear region pooling (align-style, no quantization): samples a
// sampling_ratio^2 grid per output bin and averages. feat:[N,C,H,W] ->
// [R,C,out_size,out_size]. spatial_scale maps image coords to feature coords.
Node* roi_align(Graph& g, Node* feat, const std::vector<Roi>& rois, int out_size,
                double spatial_scale, int sampling_ratio = 2);

// ---- non-differentiable tensor utilities (data pipeline) -------------------

// Bilinear resize of [H,W] or [C,H,W] tensors.
Tensor bilinear_resize(const Tensor& img, std::int64_t out_h, std::int64_t out_w);

// Nearest-neighbor resize (used for label/mask rasters).
Tensor nearest_resize(const Tensor& img, std::int64_t out_h, std::int64_t out_w);

// Horizontal flip along the last (width) axis of [H,W] or [C,H,W] tensors.
Tensor flip_horizontal(const Tensor& img);

}  // namespace oar::nn
