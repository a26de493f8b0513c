#pragma once

#include <optional>
#include <string>

#include "oar/losses/weights.hpp"
#include "oar/nn/graph.hpp"

namespace oar::losses {

using nn::Graph;
using nn::Node;
using nn::Tensor;

// ---- evaluation metric ------------------------------------------------------

struct DiceResult {
  double value = 0.0;
  bool both_empty = false;  // score 1.0 by convention; flagged for reporting
};

// 2|P∩T| / (|P|+|T|) on binary rasters of identical shape.
DiceResult dice_score(const Tensor& pred, const Tensor& truth);

// ---- pixel classification losses -------------------------------------------

// Mean over pixels of alpha_y * (1-p_y)^gamma * (-log p_y), p = softmax(logits).
// logits: [N,C,H,W]; labels: integer-valued [N,H,W].
// gamma = 0 gives the weighted cross entropy exactly (same code path).
Node* focal_loss(Graph& g, Node* logits, const Tensor& labels, double gamma,
                 const ClassWeights& weights);

Node* weighted_cross_entropy(Graph& g, Node* logits, const Tensor& labels,
                             const ClassWeights& weights);

// 1 - GDS with per-class weights w_c = 1/(sum_i t_ci)^2; classes absent from
// the truth are excluded from both sums. probs: [N,C,H,W] with channel sums 1.
Node* generalized_dice_loss(Graph& g, Node* probs, const Tensor& labels);

// ---- adversarial losses -----------------------------------------------------

enum class GanForm { log_form, least_squares };

// Log form operates on probability maps (a sigmoid head); values are clamped
// to [1e-7, 1-1e-7] before the log, and values outside [0,1] are an error.
// Generator uses the non-saturating surrogate -E[log D(G(x))].
Node* gan_discriminator_loss_log(Graph& g, Node* p_real, Node* p_fake);
Node* gan_generator_loss_log(Graph& g, Node* p_fake);

// Least-squares form operates on raw score maps:
// D: E[(s_real-1)^2] + E[s_fake^2];  G: E[(s_fake-1)^2].
Node* gan_discriminator_loss_ls(Graph& g, Node* s_real, Node* s_fake);
Node* gan_generator_loss_ls(Graph& g, Node* s_fake);

struct GanLossPair {
  Node* generator;
  Node* discriminator;
};

GanLossPair gan_losses(Graph& g, Node* d_real, Node* d_fake, GanForm form);

// ---- cycle / content losses -------------------------------------------------

// mean|rec_s - x_s|*(1 + M_organ) + mean|rec_t - x_t|. The mask weights only
// the source-reconstruction term (annotations exist on the source side only);
// organ pixels there count exactly twice. organ_mask: same shape as x_s with
// values in {0,1}, or nullptr for the plain two-sided L1 cycle loss.
Node* content_consistency_loss(Graph& g, Node* rec_s, Node* x_s, Node* rec_t, Node* x_t,
                               const Tensor* organ_mask);

// ---- task loss ----------------------------------------------------------------

// Anything that maps an input batch to per-pixel class logits.
class PixelClassifier {
 public:
  virtual ~PixelClassifier() = default;
  virtual Node* forward(Graph& g, Node* input) = 0;
};

// Weighted cross entropy of the classifier's prediction on the channel
// concatenation (source image, synthesized image) against the source labels.
// Gradients reach the synthesized image through the concatenation.
Node* task_loss(Graph& g, Node* synth, Node* x_s, const Tensor& labels, PixelClassifier& subnet,
                const ClassWeights& weights);

// ---- objective composition ----------------------------------------------------

struct LossBreakdown {
  double gan_forward = 0.0;   // source->target GAN term
  double gan_backward = 0.0;  // target->source GAN term
  double content = 0.0;
  double task = 0.0;
  double total = 0.0;
  double lambda_content = 10.0;
  double lambda_task = 1.0;

  static std::string csv_header();
  std::string csv_row(std::int64_t step) const;
};

// total = gan_forward + gan_backward + lambda_content*content + lambda_task*task.
// Throws naming the offending term if any part is non-finite.
LossBreakdown total_objective(double gan_forward, double gan_backward, double content, double task,
                              double lambda_content, double lambda_task);

Node* total_objective_node(Graph& g, Node* gan_forward, Node* gan_backward, Node* content,
                           Node* task, double lambda_content, double lambda_task);

}  // namespace oar::losses
