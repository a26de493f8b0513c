#include "oar/networks/detector.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "oar/losses/losses.hpp"

namespace oar::networks {

using voxelio::Box;
using voxelio::iou;

std::string to_string(FusionScheme s) {
  switch (s) {
    case FusionScheme::none: return "none";
    case FusionScheme::input: return "input";
    case FusionScheme::feature: return "feature";
  }
  return "none";
}

FusionScheme fusion_from_string(const std::string& s) {
  if (s == "none") return FusionScheme::none;
  if (s == "input" || s == "Fusion@I") return FusionScheme::input;
  if (s == "feature" || s == "Fusion@F") return FusionScheme::feature;
  throw std::invalid_argument("unknown fusion scheme: " + s);
}

namespace {

Tensor as_nchw(const Tensor& img) {
  if (img.ndim() == 2) return img.reshaped({1, 1, img.dim(0), img.dim(1)});
  if (img.ndim() == 3) return img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
  if (img.ndim() == 4) return img;
  throw std::invalid_argument("expected [H,W], [C,H,W] or [N,C,H,W] image");
}

}  // namespace

FusedInput fuse_inputs(const Tensor& ct, const Tensor& synth_mr, FusionScheme scheme) {
  Tensor a = as_nchw(ct);
  Tensor b = as_nchw(synth_mr);
  if (a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw std::invalid_argument("fuse_inputs: spatial shapes differ: " + a.shape_str() + " vs " +
                                b.shape_str());
  FusedInput out;
  out.scheme = scheme;
  switch (scheme) {
    case FusionScheme::none:
      out.primary = a;
      break;
    case FusionScheme::input: {
      Tensor cat({1, a.dim(1) + b.dim(1), a.dim(2), a.dim(3)});
      std::copy_n(a.data(), a.numel(), cat.data());
      std::copy_n(b.data(), b.numel(), cat.data() + a.numel());
      out.primary = std::move(cat);
      break;
    }
    case FusionScheme::feature:
      out.primary = a;
      out.secondary = b;
      break;
  }
  return out;
}

FusedInput ct_only_input(const Tensor& ct) {
  FusedInput out;
  out.scheme = FusionScheme::none;
  out.primary = as_nchw(ct);
  return out;
}

nlohmann::json DetectorConfig::to_json() const {
  return {{"num_classes", num_classes},
          {"fusion", to_string(fusion)},
          {"base_channels", base_channels},
          {"anchor_sizes", anchor_sizes},
          {"rpn_fg_iou", rpn_fg_iou},
          {"rpn_bg_iou", rpn_bg_iou},
          {"fg_iou", fg_iou},
          {"roi_batch", roi_batch},
          {"positive_fraction", positive_fraction},
          {"rpn_batch", rpn_batch},
          {"rpn_positive_fraction", rpn_positive_fraction},
          {"pre_nms_top", pre_nms_top},
          {"post_nms_train", post_nms_train},
          {"post_nms_test", post_nms_test},
          {"rpn_nms_iou", rpn_nms_iou},
          {"pool_size", pool_size},
          {"mask_pool", mask_pool},
          {"mask_size", mask_size},
          {"head_width", head_width},
          {"mask_channels", mask_channels},
          {"score_thresh", score_thresh},
          {"nms_iou", nms_iou},
          {"max_detections", max_detections},
          {"add_gt_proposals", add_gt_proposals}};
}

DetectorConfig DetectorConfig::from_json(const nlohmann::json& j) {
  DetectorConfig c;
  c.num_classes = j.value("num_classes", c.num_classes);
  c.fusion = fusion_from_string(j.value("fusion", "none"));
  c.base_channels = j.value("base_channels", c.base_channels);
  c.anchor_sizes = j.value("anchor_sizes", c.anchor_sizes);
  c.rpn_fg_iou = j.value("rpn_fg_iou", c.rpn_fg_iou);
  c.rpn_bg_iou = j.value("rpn_bg_iou", c.rpn_bg_iou);
  c.fg_iou = j.value("fg_iou", c.fg_iou);
  c.roi_batch = j.value("roi_batch", c.roi_batch);
  c.positive_fraction = j.value("positive_fraction", c.positive_fraction);
  c.rpn_batch = j.value("rpn_batch", c.rpn_batch);
  c.rpn_positive_fraction = j.value("rpn_positive_fraction", c.rpn_positive_fraction);
  c.pre_nms_top = j.value("pre_nms_top", c.pre_nms_top);
  c.post_nms_train = j.value("post_nms_train", c.post_nms_train);
  c.post_nms_test = j.value("post_nms_test", c.post_nms_test);
  c.rpn_nms_iou = j.value("rpn_nms_iou", c.rpn_nms_iou);
  c.pool_size = j.value("pool_size", c.pool_size);
  c.mask_pool = j.value("mask_pool", c.mask_pool);
  c.mask_size = j.value("mask_size", c.mask_size);
  c.head_width = j.value("head_width", c.head_width);
  c.mask_channels = j.value("mask_channels", c.mask_channels);
  c.score_thresh = j.value("score_thresh", c.score_thresh);
  c.nms_iou = j.value("nms_iou", c.nms_iou);
  c.max_detections = j.value("max_detections", c.max_detections);
  c.add_gt_proposals = j.value("add_gt_proposals", c.add_gt_proposals);
  return c;
}

std::array<double, 4> encode_box(const Box& anchor, const Box& target) {
  double aw = anchor.width(), ah = anchor.height();
  double tw = target.width(), th = target.height();
  return {(target.cx() - anchor.cx()) / aw, (target.cy() - anchor.cy()) / ah,
          std::log(tw / aw), std::log(th / ah)};
}

Box decode_box(const Box& anchor, double dx, double dy, double dw, double dh) {
  double aw = anchor.width(), ah = anchor.height();
  double cx = anchor.cx() + dx * aw;
  double cy = anchor.cy() + dy * ah;
  double w = aw * std::exp(std::clamp(dw, -4.0, 4.0));
  double h = ah * std::exp(std::clamp(dh, -4.0, 4.0));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                     double iou_threshold) {
  std::vector<int> order(boxes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&scores](int a, int b) { return scores[static_cast<std::size_t>(a)] >
                                                    scores[static_cast<std::size_t>(b)]; });
  std::vector<int> keep;
  std::vector<bool> removed(boxes.size(), false);
  for (int idx : order) {
    if (removed[static_cast<std::size_t>(idx)]) continue;
    keep.push_back(idx);
    for (int other : order) {
      if (removed[static_cast<std::size_t>(other)] || other == idx) continue;
      if (iou(boxes[static_cast<std::size_t>(idx)], boxes[static_cast<std::size_t>(other)]) >
          iou_threshold)
        removed[static_cast<std::size_t>(other)] = true;
    }
  }
  return keep;
}

RoiBatch sample_rois(const std::vector<Box>& proposals, const std::vector<GtInstance>& ground_truth,
                     double positive_fraction, double fg_iou, int batch, Rng& rng,
                     std::vector<std::string>* warnings) {
  RoiBatch out;
  if (proposals.empty()) {
    if (warnings) warnings->push_back("sample_rois: no proposals; empty batch");
    return out;
  }

  std::vector<int> pos_idx, neg_idx;
  std::vector<int> match(proposals.size(), -1);
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    double best = 0.0;
    int best_gt = -1;
    for (std::size_t gi = 0; gi < ground_truth.size(); ++gi) {
      double v = iou(proposals[i], ground_truth[gi].box);
      if (v > best) {
        best = v;
        best_gt = static_cast<int>(gi);
      }
    }
    if (best >= fg_iou && best_gt >= 0) {
      match[i] = best_gt;
      pos_idx.push_back(static_cast<int>(i));
    } else {
      neg_idx.push_back(static_cast<int>(i));
    }
  }

  int max_pos = static_cast<int>(std::lround(batch * positive_fraction));
  rng.shuffle(pos_idx);
  rng.shuffle(neg_idx);
  int n_pos = std::min<int>(max_pos, static_cast<int>(pos_idx.size()));
  int n_neg = std::min<int>(batch - n_pos, static_cast<int>(neg_idx.size()));

  for (int k = 0; k < n_pos; ++k) {
    int i = pos_idx[static_cast<std::size_t>(k)];
    out.rois.push_back(proposals[static_cast<std::size_t>(i)]);
    out.labels.push_back(ground_truth[static_cast<std::size_t>(match[static_cast<std::size_t>(i)])].class_id);
    out.matched_gt.push_back(match[static_cast<std::size_t>(i)]);
    out.positive.push_back(true);
  }
  for (int k = 0; k < n_neg; ++k) {
    int i = neg_idx[static_cast<std::size_t>(k)];
    out.rois.push_back(proposals[static_cast<std::size_t>(i)]);
    out.labels.push_back(0);
    out.matched_gt.push_back(-1);
    out.positive.push_back(false);
  }
  return out;
}

Tensor mask_target_for_roi(const voxelio::BinaryMask& gt, const Box& roi, int size) {
  Tensor target({size, size});
  double bw = roi.width(), bh = roi.height();
  for (int py = 0; py < size; ++py) {
    double sy = roi.y0 + (py + 0.5) / size * bh - 0.5;
    for (int px = 0; px < size; ++px) {
      double sx = roi.x0 + (px + 0.5) / size * bw - 0.5;
      // bilinear sample of the binary raster
      int x0 = static_cast<int>(std::floor(sx));
      int y0 = static_cast<int>(std::floor(sy));
      double tx = sx - x0, ty = sy - y0;
      auto sample = [&gt](int y, int x) -> double {
        if (y < 0 || y >= gt.rows || x < 0 || x >= gt.cols) return 0.0;
        return gt.at(y, x) ? 1.0 : 0.0;
      };
      double v = (1 - ty) * ((1 - tx) * sample(y0, x0) + tx * sample(y0, x0 + 1)) +
                 ty * ((1 - tx) * sample(y0 + 1, x0) + tx * sample(y0 + 1, x0 + 1));
      target.at2(py, px) = v >= 0.5 ? 1.0 : 0.0;
    }
  }
  return target;
}

Node* mask_loss_for_rois(Graph& g, Node* mask_logits, const std::vector<int>& roi_classes,
                         const std::vector<bool>& positive, const std::vector<Tensor>& targets) {
  const Tensor& logits = mask_logits->val();
  if (logits.ndim() != 4)
    throw std::invalid_argument("mask_loss_for_rois: logits must be [R,C,S,S]");
  const std::int64_t R = logits.dim(0), C = logits.dim(1), S = logits.dim(2);
  if (static_cast<std::int64_t>(roi_classes.size()) != R ||
      static_cast<std::int64_t>(positive.size()) != R)
    throw std::invalid_argument("mask_loss_for_rois: per-roi metadata size mismatch");

  std::int64_t n_pos = 0;
  for (std::int64_t r = 0; r < R; ++r) {
    if (!positive[static_cast<std::size_t>(r)]) continue;
    int cls = roi_classes[static_cast<std::size_t>(r)];
    if (cls < 1 || cls > C)
      throw std::invalid_argument("mask_loss_for_rois: positive ROI with class " +
                                  std::to_string(cls) + " outside [1," + std::to_string(C) + "]");
    if (static_cast<std::size_t>(r) >= targets.size() ||
        targets[static_cast<std::size_t>(r)].numel() != S * S)
      throw std::invalid_argument("mask_loss_for_rois: positive ROI without a matched target");
    ++n_pos;
  }
  if (n_pos == 0) return g.input(Tensor::scalar(0.0));

  double inv = 1.0 / static_cast<double>(n_pos * S * S);
  double sum = 0.0;
  for (std::int64_t r = 0; r < R; ++r) {
    if (!positive[static_cast<std::size_t>(r)]) continue;
    int ch = roi_classes[static_cast<std::size_t>(r)] - 1;
    const Tensor& t = targets[static_cast<std::size_t>(r)];
    for (std::int64_t i = 0; i < S * S; ++i) {
      double x = logits[((r * C + ch) * S * S) + i];
      double tv = t[i];
      // stable bce-with-logits
      sum += std::max(x, 0.0) - x * tv + std::log1p(std::exp(-std::abs(x)));
    }
  }

  auto classes = roi_classes;
  auto pos = positive;
  auto tgts = targets;
  return g.make(Tensor::scalar(sum * inv), {mask_logits}, [classes, pos, tgts, inv](Node& n) {
    Node* lp = n.parents[0];
    if (!lp->requires_grad) return;
    const Tensor& logits = lp->val();
    Tensor& dl = lp->grad();
    const std::int64_t R = logits.dim(0), C = logits.dim(1), S = logits.dim(2);
    double gv = n.grad()[0] * inv;
    for (std::int64_t r = 0; r < R; ++r) {
      if (!pos[static_cast<std::size_t>(r)]) continue;
      int ch = classes[static_cast<std::size_t>(r)] - 1;
      const Tensor& t = tgts[static_cast<std::size_t>(r)];
      for (std::int64_t i = 0; i < S * S; ++i) {
        double x = logits[((r * C + ch) * S * S) + i];
        double sig = 1.0 / (1.0 + std::exp(-x));
        dl[((r * C + ch) * S * S) + i] += gv * (sig - t[i]);
      }
    }
  });
}

voxelio::BinaryMask paste_detection_mask(const Detection& det, int rows, int cols,
                                         double threshold) {
  voxelio::BinaryMask out;
  out.rows = rows;
  out.cols = cols;
  out.pixels.assign(static_cast<std::size_t>(rows) * cols, 0);
  const Tensor& m = det.mask;
  const int S = static_cast<int>(m.dim(0));
  double bw = det.box.width(), bh = det.box.height();
  if (bw <= 0 || bh <= 0) return out;
  int r0 = std::max(0, static_cast<int>(std::floor(det.box.y0)));
  int r1 = std::min(rows - 1, static_cast<int>(std::ceil(det.box.y1)) - 1);
  int c0 = std::max(0, static_cast<int>(std::floor(det.box.x0)));
  int c1 = std::min(cols - 1, static_cast<int>(std::ceil(det.box.x1)) - 1);
  for (int r = r0; r <= r1; ++r) {
    double my = (r + 0.5 - det.box.y0) / bh * S - 0.5;
    for (int c = c0; c <= c1; ++c) {
      double mx = (c + 0.5 - det.box.x0) / bw * S - 0.5;
      int x0 = static_cast<int>(std::floor(mx));
      int y0 = static_cast<int>(std::floor(my));
      double tx = mx - x0, ty = my - y0;
      auto sample = [&m, S](int y, int x) -> double {
        if (y < 0 || y >= S || x < 0 || x >= S) return 0.0;
        return m.at2(y, x);
      };
      double v = (1 - ty) * ((1 - tx) * sample(y0, x0) + tx * sample(y0, x0 + 1)) +
                 ty * ((1 - tx) * sample(y0 + 1, x0) + tx * sample(y0 + 1, x0 + 1));
      if (v >= threshold) out.at(r, c) = 1;
    }
  }
  return out;
}

// ---- InstanceSegmentor -------------------------------------------------------

InstanceSegmentor::InstanceSegmentor(const DetectorConfig& cfg, Rng& init_rng) : cfg_(cfg) {
  int in_ch = cfg.fusion == FusionScheme::input ? 2 : 1;
  int b = cfg.base_channels;
  double slope = cfg.leaky_slope;
  auto make_stages = [&](const std::string& prefix) {
    std::vector<ConvBlock> stages;
    stages.push_back(make_block(store_, prefix + ".conv1", in_ch, b, 1, slope, true, init_rng));
    stages.push_back(make_block(store_, prefix + ".conv2", b, 2 * b, 2, slope, true, init_rng));
    stages.push_back(make_block(store_, prefix + ".conv3", 2 * b, 4 * b, 2, slope, true, init_rng));
    stages.push_back(make_block(store_, prefix + ".conv4", 4 * b, 4 * b, 2, slope, true, init_rng));
    return stages;
  };
  stages_ = make_stages("bb");
  feat_channels_ = 4 * b;
  if (cfg.fusion == FusionScheme::feature) {
    stages_secondary_ = make_stages("bb2");
    fuse_reduce_ = make_conv(store_, "fuse_reduce", 2 * feat_channels_, feat_channels_, 1, 1, 0,
                             slope, init_rng);
  }

  int A = static_cast<int>(cfg.anchor_sizes.size());
  rpn_conv_ = make_block(store_, "rpn.conv", feat_channels_, feat_channels_, 1, slope, false,
                         init_rng);
  rpn_obj_ = make_conv(store_, "rpn.obj", feat_channels_, A, 1, 1, 0, slope, init_rng);
  rpn_box_ = make_conv(store_, "rpn.box", feat_channels_, 4 * A, 1, 1, 0, slope, init_rng);

  head_fc_ = make_fc(store_, "head.fc", feat_channels_ * cfg.pool_size * cfg.pool_size,
                     cfg.head_width, init_rng);
  head_cls_ = make_fc(store_, "head.cls", cfg.head_width, cfg.num_classes + 1, init_rng);
  head_box_ = make_fc(store_, "head.box", cfg.head_width, 4 * cfg.num_classes, init_rng);

  mask_conv1_ = make_block(store_, "mask.conv1", feat_channels_, cfg.mask_channels, 1, slope,
                           false, init_rng);
  mask_conv2_ = make_block(store_, "mask.conv2", cfg.mask_channels, cfg.mask_channels, 1, slope,
                           false, init_rng);
  mask_out_ = make_conv(store_, "mask.out", cfg.mask_channels, cfg.num_classes, 1, 1, 0, slope,
                        init_rng);
}

Node* InstanceSegmentor::backbone_forward(Graph& g, Node* x, const std::vector<ConvBlock>& stages) {
  Node* h = x;
  for (const auto& s : stages) h = s.forward(g, h);
  return h;
}

Node* InstanceSegmentor::features(Graph& g, const FusedInput& input) {
  if (cfg_.fusion == FusionScheme::feature) {
    if (input.scheme != FusionScheme::feature)
      throw std::invalid_argument("detector: feature-fusion model expects a dual-branch input");
    Node* a = backbone_forward(g, g.input(input.primary), stages_);
    Node* b = backbone_forward(g, g.input(input.secondary), stages_secondary_);
    Node* cat = nn::concat_channels(g, a, b);
    return nn::leaky_relu(g, fuse_reduce_.forward(g, cat), cfg_.leaky_slope);
  }
  int expect = cfg_.fusion == FusionScheme::input ? 2 : 1;
  if (input.primary.dim(1) != expect)
    throw std::invalid_argument("detector: expected " + std::to_string(expect) +
                                "-channel input, got " + input.primary.shape_str());
  return backbone_forward(g, g.input(input.primary), stages_);
}

std::vector<Box> InstanceSegmentor::make_anchors(std::int64_t fh, std::int64_t fw) const {
  std::vector<Box> anchors;
  anchors.reserve(static_cast<std::size_t>(fh * fw * cfg_.anchor_sizes.size()));
  double stride = static_cast<double>(feature_stride());
  for (std::size_t k = 0; k < cfg_.anchor_sizes.size(); ++k) {
    double s = cfg_.anchor_sizes[k];
    for (std::int64_t i = 0; i < fh; ++i) {
      for (std::int64_t j = 0; j < fw; ++j) {
        double cx = (static_cast<double>(j) + 0.5) * stride;
        double cy = (static_cast<double>(i) + 0.5) * stride;
        anchors.push_back({cx - 0.5 * s, cy - 0.5 * s, cx + 0.5 * s, cy + 0.5 * s});
      }
    }
  }
  return anchors;
}

InstanceSegmentor::RpnOut InstanceSegmentor::rpn_forward(Graph& g, Node* feat) {
  Node* h = rpn_conv_.forward(g, feat);
  RpnOut out;
  out.objectness = rpn_obj_.forward(g, h);
  out.deltas = rpn_box_.forward(g, h);
  return out;
}

std::vector<Box> InstanceSegmentor::decode_proposals(const Tensor& obj, const Tensor& deltas,
                                                     const std::vector<Box>& anchors,
                                                     std::int64_t img_h, std::int64_t img_w,
                                                     int post_nms) const {
  const std::int64_t A = obj.dim(1), fh = obj.dim(2), fw = obj.dim(3);
  const std::int64_t plane = fh * fw;
  std::vector<Box> boxes;
  std::vector<double> scores;
  boxes.reserve(static_cast<std::size_t>(A * plane));
  for (std::int64_t k = 0; k < A; ++k) {
    for (std::int64_t p = 0; p < plane; ++p) {
      const Box& a = anchors[static_cast<std::size_t>(k * plane + p)];
      double dx = deltas[(4 * k + 0) * plane + p];
      double dy = deltas[(4 * k + 1) * plane + p];
      double dw = deltas[(4 * k + 2) * plane + p];
      double dh = deltas[(4 * k + 3) * plane + p];
      Box b = voxelio::clip_to_image(decode_box(a, dx, dy, dw, dh), img_h, img_w);
      if (b.width() < 2.0 || b.height() < 2.0) continue;
      boxes.push_back(b);
      scores.push_back(obj[k * plane + p]);
    }
  }
  // pre-NMS top-k
  std::vector<int> order(boxes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&scores](int a, int b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  if (static_cast<int>(order.size()) > cfg_.pre_nms_top) order.resize(cfg_.pre_nms_top);
  std::vector<Box> cand;
  std::vector<double> cand_scores;
  for (int i : order) {
    cand.push_back(boxes[static_cast<std::size_t>(i)]);
    cand_scores.push_back(scores[static_cast<std::size_t>(i)]);
  }
  std::vector<int> keep = nms(cand, cand_scores, cfg_.rpn_nms_iou);
  if (static_cast<int>(keep.size()) > post_nms) keep.resize(post_nms);
  std::vector<Box> out;
  for (int i : keep) out.push_back(cand[static_cast<std::size_t>(i)]);
  return out;
}

namespace {

// Mean of stable binary cross entropy with logits over a subset of flat
// positions of a [1,C,H,W] node.
Node* bce_logits_subset(Graph& g, Node* logits, std::vector<std::int64_t> idx,
                        std::vector<double> targets) {
  if (idx.empty()) return g.input(Tensor::scalar(0.0));
  const Tensor& x = logits->val();
  double sum = 0.0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    double v = x[idx[k]];
    sum += std::max(v, 0.0) - v * targets[k] + std::log1p(std::exp(-std::abs(v)));
  }
  double inv = 1.0 / static_cast<double>(idx.size());
  return g.make(Tensor::scalar(sum * inv), {logits},
                [idx = std::move(idx), targets = std::move(targets), inv](Node& n) {
                  Node* lp = n.parents[0];
                  if (!lp->requires_grad) return;
                  const Tensor& x = lp->val();
                  Tensor& dx = lp->grad();
                  double gv = n.grad()[0] * inv;
                  for (std::size_t k = 0; k < idx.size(); ++k) {
                    double sig = 1.0 / (1.0 + std::exp(-x[idx[k]]));
                    dx[idx[k]] += gv * (sig - targets[k]);
                  }
                });
}

// Mean smooth-L1 (beta = 1) over (flat index, target) pairs of any node.
Node* smooth_l1_subset(Graph& g, Node* values, std::vector<std::int64_t> idx,
                       std::vector<double> targets) {
  if (idx.empty()) return g.input(Tensor::scalar(0.0));
  const Tensor& x = values->val();
  double sum = 0.0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    double d = x[idx[k]] - targets[k];
    double a = std::abs(d);
    sum += a < 1.0 ? 0.5 * d * d : a - 0.5;
  }
  double inv = 1.0 / static_cast<double>(idx.size());
  return g.make(Tensor::scalar(sum * inv), {values},
                [idx = std::move(idx), targets = std::move(targets), inv](Node& n) {
                  Node* vp = n.parents[0];
                  if (!vp->requires_grad) return;
                  const Tensor& x = vp->val();
                  Tensor& dx = vp->grad();
                  double gv = n.grad()[0] * inv;
                  for (std::size_t k = 0; k < idx.size(); ++k) {
                    double d = x[idx[k]] - targets[k];
                    double grad = std::abs(d) < 1.0 ? d : (d > 0 ? 1.0 : -1.0);
                    dx[idx[k]] += gv * grad;
                  }
                });
}

}  // namespace

InstanceSegmentor::StepLosses InstanceSegmentor::training_losses(
    Graph& g, const FusedInput& input, const std::vector<GtInstance>& gts, Rng& sample_rng,
    std::vector<std::string>* warnings) {
  const std::int64_t img_h = input.primary.dim(2), img_w = input.primary.dim(3);
  Node* feat = features(g, input);
  RpnOut rpn = rpn_forward(g, feat);
  const std::int64_t fh = rpn.objectness->val().dim(2), fw = rpn.objectness->val().dim(3);
  const std::int64_t plane = fh * fw;
  std::vector<Box> anchors = make_anchors(fh, fw);

  // Anchor coverage warning: every gt should overlap some anchor reasonably.
  if (warnings) {
    for (const auto& gt : gts) {
      double best = 0.0;
      for (const auto& a : anchors) best = std::max(best, iou(a, gt.box));
      if (best < 0.1)
        warnings->push_back("anchor set covers no configured size near a ground-truth box");
    }
  }

  // ---- RPN targets
  std::vector<int> rpn_label(anchors.size(), -1);  // 1 fg, 0 bg, -1 ignore
  std::vector<int> rpn_match(anchors.size(), -1);
  if (!gts.empty()) {
    std::vector<double> best_per_gt(gts.size(), 0.0);
    std::vector<int> best_anchor(gts.size(), -1);
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      double best = 0.0;
      int best_gt = -1;
      for (std::size_t gi = 0; gi < gts.size(); ++gi) {
        double v = iou(anchors[i], gts[gi].box);
        if (v > best) {
          best = v;
          best_gt = static_cast<int>(gi);
        }
        if (v > best_per_gt[gi]) {
          best_per_gt[gi] = v;
          best_anchor[gi] = static_cast<int>(i);
        }
      }
      if (best >= cfg_.rpn_fg_iou) {
        rpn_label[i] = 1;
        rpn_match[i] = best_gt;
      } else if (best < cfg_.rpn_bg_iou) {
        rpn_label[i] = 0;
      }
    }
    // every gt claims its best anchor
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      if (best_anchor[gi] >= 0) {
        rpn_label[static_cast<std::size_t>(best_anchor[gi])] = 1;
        rpn_match[static_cast<std::size_t>(best_anchor[gi])] = static_cast<int>(gi);
      }
    }
  } else {
    for (auto& l : rpn_label) l = 0;
  }

  std::vector<int> fg, bg;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    if (rpn_label[i] == 1) fg.push_back(static_cast<int>(i));
    else if (rpn_label[i] == 0) bg.push_back(static_cast<int>(i));
  }
  sample_rng.shuffle(fg);
  sample_rng.shuffle(bg);
  int want_fg = std::min<int>(static_cast<int>(std::lround(cfg_.rpn_batch * cfg_.rpn_positive_fraction)),
                              static_cast<int>(fg.size()));
  int want_bg = std::min<int>(cfg_.rpn_batch - want_fg, static_cast<int>(bg.size()));

  std::vector<std::int64_t> obj_idx;
  std::vector<double> obj_t;
  std::vector<std::int64_t> box_idx;
  std::vector<double> box_t;
  for (int k = 0; k < want_fg; ++k) {
    std::size_t i = static_cast<std::size_t>(fg[static_cast<std::size_t>(k)]);
    std::int64_t a = static_cast<std::int64_t>(i) / plane;  // anchor scale index
    std::int64_t p = static_cast<std::int64_t>(i) % plane;
    obj_idx.push_back(a * plane + p);
    obj_t.push_back(1.0);
    auto enc = encode_box(anchors[i], gts[static_cast<std::size_t>(rpn_match[i])].box);
    for (int q = 0; q < 4; ++q) {
      box_idx.push_back((4 * a + q) * plane + p);
      box_t.push_back(enc[static_cast<std::size_t>(q)]);
    }
  }
  for (int k = 0; k < want_bg; ++k) {
    std::size_t i = static_cast<std::size_t>(bg[static_cast<std::size_t>(k)]);
    std::int64_t a = static_cast<std::int64_t>(i) / plane;
    std::int64_t p = static_cast<std::int64_t>(i) % plane;
    obj_idx.push_back(a * plane + p);
    obj_t.push_back(0.0);
  }

  Node* rpn_obj_loss = bce_logits_subset(g, rpn.objectness, std::move(obj_idx), std::move(obj_t));
  Node* rpn_box_loss = smooth_l1_subset(g, rpn.deltas, std::move(box_idx), std::move(box_t));

  // ---- proposals and ROI sampling
  std::vector<Box> proposals = decode_proposals(rpn.objectness->val(), rpn.deltas->val(), anchors,
                                                img_h, img_w, cfg_.post_nms_train);
  if (cfg_.add_gt_proposals)
    for (const auto& gt : gts) proposals.push_back(gt.box);

  RoiBatch batch = sample_rois(proposals, gts, cfg_.positive_fraction, cfg_.fg_iou,
                               cfg_.roi_batch, sample_rng, warnings);

  StepLosses out;
  out.sampled_pos = batch.num_positive();
  out.sampled_neg = static_cast<int>(batch.rois.size()) - out.sampled_pos;

  Node* cls_loss = g.input(Tensor::scalar(0.0));
  Node* box_loss = g.input(Tensor::scalar(0.0));
  Node* mask_loss = g.input(Tensor::scalar(0.0));

  if (!batch.rois.empty()) {
    std::vector<nn::Roi> pool_rois;
    for (const auto& b : batch.rois) pool_rois.push_back({0, b.x0, b.y0, b.x1, b.y1});
    double scale = 1.0 / feature_stride();
    Node* pooled = nn::roi_align(g, feat, pool_rois, cfg_.pool_size, scale);
    const std::int64_t R = static_cast<std::int64_t>(batch.rois.size());
    Node* flat = g.make(
        pooled->val().reshaped({R, feat_channels_ * cfg_.pool_size * cfg_.pool_size}), {pooled},
        [](Node& n) {
          if (!n.parents[0]->requires_grad) return;
          n.parents[0]->grad().add_scaled(n.grad().reshaped(n.parents[0]->val().shape()), 1.0);
        });
    Node* hidden = nn::leaky_relu(g, head_fc_.forward(g, flat), cfg_.leaky_slope);
    Node* cls_logits = head_cls_.forward(g, hidden);
    Node* box_deltas = head_box_.forward(g, hidden);

    // classification: softmax CE over C+1, uniform weights
    Tensor roi_labels({R, 1, 1});
    for (std::int64_t r = 0; r < R; ++r)
      roi_labels[r] = static_cast<double>(batch.labels[static_cast<std::size_t>(r)]);
    Node* cls_logits4 = g.make(
        cls_logits->val().reshaped({R, cfg_.num_classes + 1, 1, 1}), {cls_logits}, [](Node& n) {
          if (!n.parents[0]->requires_grad) return;
          n.parents[0]->grad().add_scaled(n.grad().reshaped(n.parents[0]->val().shape()), 1.0);
        });
    cls_loss = losses::weighted_cross_entropy(g, cls_logits4, roi_labels,
                                              losses::ClassWeights::uniform(cfg_.num_classes + 1));

    // class-specific box regression on positives
    std::vector<std::int64_t> bidx;
    std::vector<double> btgt;
    for (std::int64_t r = 0; r < R; ++r) {
      if (!batch.positive[static_cast<std::size_t>(r)]) continue;
      int cls = batch.labels[static_cast<std::size_t>(r)];
      const Box& gt_box = gts[static_cast<std::size_t>(batch.matched_gt[static_cast<std::size_t>(r)])].box;
      auto enc = encode_box(batch.rois[static_cast<std::size_t>(r)], gt_box);
      for (int q = 0; q < 4; ++q) {
        bidx.push_back(r * 4 * cfg_.num_classes + 4 * (cls - 1) + q);
        btgt.push_back(enc[static_cast<std::size_t>(q)]);
      }
    }
    box_loss = smooth_l1_subset(g, box_deltas, std::move(bidx), std::move(btgt));

    // decoupled mask head on positive ROIs
    std::vector<nn::Roi> pos_rois;
    std::vector<int> pos_classes;
    std::vector<bool> pos_flags;
    std::vector<Tensor> pos_targets;
    for (std::int64_t r = 0; r < R; ++r) {
      if (!batch.positive[static_cast<std::size_t>(r)]) continue;
      const Box& b = batch.rois[static_cast<std::size_t>(r)];
      pos_rois.push_back({0, b.x0, b.y0, b.x1, b.y1});
      pos_classes.push_back(batch.labels[static_cast<std::size_t>(r)]);
      pos_flags.push_back(true);
      const auto& gt = gts[static_cast<std::size_t>(batch.matched_gt[static_cast<std::size_t>(r)])];
      pos_targets.push_back(mask_target_for_roi(gt.mask, b, cfg_.mask_size));
    }
    if (!pos_rois.empty()) {
      Node* mlogits = mask_head(g, feat, pos_rois);
      mask_loss = mask_loss_for_rois(g, mlogits, pos_classes, pos_flags, pos_targets);
    }
  } else if (warnings) {
    warnings->push_back("empty ROI batch; heads skipped this step");
  }

  out.rpn_objectness = rpn_obj_loss->val()[0];
  out.rpn_box = rpn_box_loss->val()[0];
  out.classification = cls_loss->val()[0];
  out.box_regression = box_loss->val()[0];
  out.mask = mask_loss->val()[0];
  out.total = nn::weighted_sum(g, {rpn_obj_loss, rpn_box_loss, cls_loss, box_loss, mask_loss},
                               {1.0, 1.0, 1.0, 1.0, 1.0});
  return out;
}

Node* InstanceSegmentor::mask_head(Graph& g, Node* feat, const std::vector<nn::Roi>& rois) {
  double scale = 1.0 / feature_stride();
  Node* pooled = nn::roi_align(g, feat, rois, cfg_.mask_pool, scale);
  Node* h = mask_conv1_.forward(g, pooled);
  h = nn::nearest_upsample2x(g, h);
  h = mask_conv2_.forward(g, h);
  return mask_out_.forward(g, h);  // [R, num_classes, mask_size, mask_size]
}

std::vector<Box> InstanceSegmentor::propose(const FusedInput& input) {
  Graph g;
  const std::int64_t img_h = input.primary.dim(2), img_w = input.primary.dim(3);
  Node* feat = features(g, input);
  RpnOut rpn = rpn_forward(g, feat);
  const std::int64_t fh = rpn.objectness->val().dim(2), fw = rpn.objectness->val().dim(3);
  std::vector<Box> anchors = make_anchors(fh, fw);
  return decode_proposals(rpn.objectness->val(), rpn.deltas->val(), anchors, img_h, img_w,
                          cfg_.post_nms_test);
}

std::vector<Detection> InstanceSegmentor::infer(const FusedInput& input) {
  Graph g;
  const std::int64_t img_h = input.primary.dim(2), img_w = input.primary.dim(3);
  Node* feat = features(g, input);
  RpnOut rpn = rpn_forward(g, feat);
  const std::int64_t fh = rpn.objectness->val().dim(2), fw = rpn.objectness->val().dim(3);
  std::vector<Box> anchors = make_anchors(fh, fw);
  std::vector<Box> proposals = decode_proposals(rpn.objectness->val(), rpn.deltas->val(), anchors,
                                                img_h, img_w, cfg_.post_nms_test);
  if (proposals.empty()) return {};

  std::vector<nn::Roi> pool_rois;
  for (const auto& b : proposals) pool_rois.push_back({0, b.x0, b.y0, b.x1, b.y1});
  double scale = 1.0 / feature_stride();
  Node* pooled = nn::roi_align(g, feat, pool_rois, cfg_.pool_size, scale);
  const std::int64_t R = static_cast<std::int64_t>(proposals.size());
  Node* flat = g.make(
      pooled->val().reshaped({R, feat_channels_ * cfg_.pool_size * cfg_.pool_size}), {pooled},
      [](Node& n) {});
  Node* hidden = nn::leaky_relu(g, head_fc_.forward(g, flat), cfg_.leaky_slope);
  const Tensor& cls = head_cls_.forward(g, hidden)->val();
  const Tensor& deltas = head_box_.forward(g, hidden)->val();

  struct Cand {
    int cls;
    double score;
    Box box;
  };
  std::vector<Cand> cands;
  const int C = cfg_.num_classes;
  for (std::int64_t r = 0; r < R; ++r) {
    double m = cls.at2(r, 0);
    for (int c = 1; c <= C; ++c) m = std::max(m, cls.at2(r, c));
    double denom = 0.0;
    for (int c = 0; c <= C; ++c) denom += std::exp(cls.at2(r, c) - m);
    for (int c = 1; c <= C; ++c) {
      double p = std::exp(cls.at2(r, c) - m) / denom;
      if (p < 0.05) continue;
      double dx = deltas.at2(r, 4 * (c - 1) + 0);
      double dy = deltas.at2(r, 4 * (c - 1) + 1);
      double dw = deltas.at2(r, 4 * (c - 1) + 2);
      double dh = deltas.at2(r, 4 * (c - 1) + 3);
      Box b = voxelio::clip_to_image(decode_box(proposals[static_cast<std::size_t>(r)], dx, dy, dw, dh),
                                     img_h, img_w);
      if (b.width() < 1.0 || b.height() < 1.0) continue;
      cands.push_back({c, p, b});
    }
  }

  // per-class NMS
  std::vector<Detection> dets;
  for (int c = 1; c <= C; ++c) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (const auto& cand : cands)
      if (cand.cls == c) {
        boxes.push_back(cand.box);
        scores.push_back(cand.score);
      }
    if (boxes.empty()) continue;
    for (int keep : nms(boxes, scores, cfg_.nms_iou)) {
      Detection d;
      d.class_id = c;
      d.score = scores[static_cast<std::size_t>(keep)];
      d.box = boxes[static_cast<std::size_t>(keep)];
      dets.push_back(std::move(d));
    }
  }
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (static_cast<int>(dets.size()) > cfg_.max_detections) dets.resize(cfg_.max_detections);
  if (dets.empty()) return dets;

  // mask head on the final boxes
  std::vector<nn::Roi> mask_rois;
  for (const auto& d : dets) mask_rois.push_back({0, d.box.x0, d.box.y0, d.box.x1, d.box.y1});
  const Tensor& mlogits = mask_head(g, feat, mask_rois)->val();
  const int S = cfg_.mask_size;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    Tensor m({S, S});
    int ch = dets[i].class_id - 1;
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x)
        m.at2(y, x) = 1.0 / (1.0 + std::exp(-mlogits.at4(static_cast<std::int64_t>(i), ch, y, x)));
    dets[i].mask = std::move(m);
  }
  return dets;
}

}  // namespace oar::networks
