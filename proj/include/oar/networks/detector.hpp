#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "oar/networks/layers.hpp"
#include "oar/voxelio/annotations.hpp"

namespace oar::networks {

enum class FusionScheme { none, input, feature };

std::string to_string(FusionScheme s);
FusionScheme fusion_from_string(const std::string& s);

// Multi-modal input carrier. Input fusion concatenates the two images along
// the channel axis before the backbone; feature fusion keeps both and runs
// weight-independent branches that are concatenated after stage conv4.
struct FusedInput {
  FusionScheme scheme = FusionScheme::none;
  Tensor primary;    // [1,C,H,W]
  Tensor secondary;  // [1,1,H,W], feature fusion only
};

FusedInput fuse_inputs(const Tensor& ct, const Tensor& synth_mr, FusionScheme scheme);
FusedInput ct_only_input(const Tensor& ct);

struct GtInstance {
  int class_id = 0;
  voxelio::Box box;        // detection target (enlarged annotation box)
  voxelio::BinaryMask mask;  // full-slice raster
};

struct DetectorConfig {
  int num_classes = 10;  // foreground classes; background handled separately
  FusionScheme fusion = FusionScheme::none;
  int base_channels = 12;
  std::vector<double> anchor_sizes = {8.0, 16.0, 28.0};  // pixels, aspect 1
  double rpn_fg_iou = 0.5;
  double rpn_bg_iou = 0.3;
  double fg_iou = 0.5;
  int roi_batch = 256;
  double positive_fraction = 0.25;  // positives : negatives = 1 : 3
  int rpn_batch = 64;
  double rpn_positive_fraction = 0.25;
  int pre_nms_top = 192;
  int post_nms_train = 48;
  int post_nms_test = 24;
  double rpn_nms_iou = 0.7;
  int pool_size = 7;
  int mask_pool = 14;
  int mask_size = 28;
  int head_width = 128;
  int mask_channels = 24;
  double score_thresh = 0.5;
  double nms_iou = 0.5;
  int max_detections = 24;
  bool add_gt_proposals = true;
  double leaky_slope = 0.2;

  nlohmann::json to_json() const;
  static DetectorConfig from_json(const nlohmann::json& j);
};

struct RoiBatch {
  std::vector<voxelio::Box> rois;
  std::vector<int> labels;      // 0 background, otherwise class id
  std::vector<int> matched_gt;  // index into the ground truth, -1 for background
  std::vector<bool> positive;

  int num_positive() const {
    int n = 0;
    for (bool p : positive) n += p ? 1 : 0;
    return n;
  }
};

// Samples up to batch*positive_fraction positives (IoU >= fg_iou with some
// ground truth) and fills the remainder with negatives; deterministic under
// the rng state. Ground-truth boxes can be injected upstream as proposals.
RoiBatch sample_rois(const std::vector<voxelio::Box>& proposals,
                     const std::vector<GtInstance>& ground_truth, double positive_fraction,
                     double fg_iou, int batch, Rng& rng,
                     std::vector<std::string>* warnings = nullptr);

// Resample the full-slice ground-truth mask inside `roi` to size x size,
// binarized at 0.5.
Tensor mask_target_for_roi(const voxelio::BinaryMask& gt, const voxelio::Box& roi, int size);

// Binary cross entropy on the sigmoid mask of each positive ROI's
// ground-truth class channel only; other channels receive no gradient.
// mask_logits: [R, num_classes, S, S]; targets indexed like roi_classes.
// A positive ROI without a target is an error.
Node* mask_loss_for_rois(Graph& g, Node* mask_logits, const std::vector<int>& roi_classes,
                         const std::vector<bool>& positive, const std::vector<Tensor>& targets);

struct Detection {
  int class_id = 0;
  double score = 0.0;
  voxelio::Box box;
  Tensor mask;  // [S,S] sigmoid probabilities, resampled onto the box at paste time
};

voxelio::BinaryMask paste_detection_mask(const Detection& det, int rows, int cols,
                                         double threshold = 0.5);

// Two-stage instance segmentor on a small single-scale backbone
// (stages conv1..conv4, stride 8): anchor classification + box regression
// proposals, then per-ROI classification, class-specific box refinement, and
// a decoupled per-class sigmoid mask head at mask_size resolution.
class InstanceSegmentor {
 public:
  InstanceSegmentor(const DetectorConfig& cfg, Rng& init_rng);

  struct StepLosses {
    Node* total = nullptr;
    double rpn_objectness = 0.0;
    double rpn_box = 0.0;
    double classification = 0.0;
    double box_regression = 0.0;
    double mask = 0.0;
    int sampled_pos = 0;
    int sampled_neg = 0;
  };

  StepLosses training_losses(Graph& g, const FusedInput& input,
                             const std::vector<GtInstance>& gts, Rng& sample_rng,
                             std::vector<std::string>* warnings = nullptr);

  // Region proposals after NMS (test-time budget), best first.
  std::vector<voxelio::Box> propose(const FusedInput& input);

  std::vector<Detection> infer(const FusedInput& input);

  std::vector<Param*> params() { return store_.all(); }
  const DetectorConfig& config() const { return cfg_; }
  int feature_stride() const { return 8; }

 private:
  Node* features(Graph& g, const FusedInput& input);
  Node* backbone_forward(Graph& g, Node* x, const std::vector<ConvBlock>& stages);
  std::vector<voxelio::Box> make_anchors(std::int64_t fh, std::int64_t fw) const;
  struct RpnOut {
    Node* objectness;  // [1, A, Fh, Fw]
    Node* deltas;      // [1, 4A, Fh, Fw]
  };
  RpnOut rpn_forward(Graph& g, Node* feat);
  std::vector<voxelio::Box> decode_proposals(const Tensor& obj, const Tensor& deltas,
                                             const std::vector<voxelio::Box>& anchors,
                                             std::int64_t img_h, std::int64_t img_w,
                                             int post_nms) const;
  Node* mask_head(Graph& g, Node* feat, const std::vector<nn::Roi>& rois);

  DetectorConfig cfg_;
  ParamStore store_;
  std::vector<ConvBlock> stages_;            // primary branch
  std::vector<ConvBlock> stages_secondary_;  // feature-fusion branch
  ConvLayer fuse_reduce_;                    // 1x1 channel reduction after concat
  ConvBlock rpn_conv_;
  ConvLayer rpn_obj_, rpn_box_;
  FcLayer head_fc_, head_cls_, head_box_;
  ConvBlock mask_conv1_, mask_conv2_;
  ConvLayer mask_out_;
  int feat_channels_ = 0;
};

// Box delta encoding shared by the proposal and refinement heads.
std::array<double, 4> encode_box(const voxelio::Box& anchor, const voxelio::Box& target);
voxelio::Box decode_box(const voxelio::Box& anchor, double dx, double dy, double dw, double dh);

// Greedy NMS; returns kept indices in score order (ties broken by index).
std::vector<int> nms(const std::vector<voxelio::Box>& boxes, const std::vector<double>& scores,
                     double iou_threshold);

}  // namespace oar::networks
