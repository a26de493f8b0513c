#include "oar/losses/losses.hpp"

#include <cmath>
#include <sstream>

#include "oar/common/csv.hpp"
#include "oar/nn/ops.hpp"

namespace oar::losses {

namespace {

constexpr double kProbClamp = 1e-7;
constexpr double kSaturated = 1.0 - 1e-15;

void check_labels(const Tensor& logits, const Tensor& labels) {
  if (logits.ndim() != 4) throw std::invalid_argument("loss: logits must be [N,C,H,W]");
  if (labels.ndim() != 3) throw std::invalid_argument("loss: labels must be [N,H,W]");
  if (logits.dim(0) != labels.dim(0) || logits.dim(2) != labels.dim(1) ||
      logits.dim(3) != labels.dim(2))
    throw std::invalid_argument("loss: logits " + logits.shape_str() + " vs labels " +
                                labels.shape_str());
}

int label_at(const Tensor& labels, std::int64_t i, std::int64_t num_classes) {
  double v = labels[i];
  int c = static_cast<int>(v);
  if (static_cast<double>(c) != v || c < 0 || c >= num_classes)
    throw std::invalid_argument("loss: label value " + std::to_string(v) + " outside [0," +
                                std::to_string(num_classes) + ")");
  return c;
}

}  // namespace

DiceResult dice_score(const Tensor& pred, const Tensor& truth) {
  if (!pred.same_shape(truth))
    throw std::invalid_argument("dice_score: shape mismatch " + pred.shape_str() + " vs " +
                                truth.shape_str());
  double inter = 0.0, psum = 0.0, tsum = 0.0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    double p = pred[i], t = truth[i];
    if ((p != 0.0 && p != 1.0) || (t != 0.0 && t != 1.0))
      throw std::invalid_argument("dice_score: masks must be binary");
    inter += p * t;
    psum += p;
    tsum += t;
  }
  DiceResult r;
  if (psum + tsum == 0.0) {
    r.value = 1.0;  // perfect-agreement convention for two empty masks
    r.both_empty = true;
  } else {
    r.value = 2.0 * inter / (psum + tsum);
  }
  return r;
}

Node* focal_loss(Graph& g, Node* logits, const Tensor& labels, double gamma,
                 const ClassWeights& weights) {
  if (gamma < 0.0) throw std::invalid_argument("focal_loss: gamma must be >= 0");
  const Tensor& z = logits->val();
  check_labels(z, labels);
  if (!nn::all_finite(z)) throw std::invalid_argument("focal_loss: non-finite logits");
  const std::int64_t N = z.dim(0), C = z.dim(1), H = z.dim(2), W = z.dim(3);
  if (weights.num_classes() < C)
    throw std::invalid_argument("focal_loss: weights cover fewer classes than logits");
  const std::int64_t plane = H * W;
  const std::int64_t npix = N * plane;

  double sum = 0.0;
  std::vector<double> zbuf(static_cast<std::size_t>(C));
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t hw = 0; hw < plane; ++hw) {
      int y = label_at(labels, n * plane + hw, C);
      double alpha = weights.weight(y);
      double m = -1e300;
      for (std::int64_t c = 0; c < C; ++c) {
        zbuf[static_cast<std::size_t>(c)] = z[(n * C + c) * plane + hw];
        m = std::max(m, zbuf[static_cast<std::size_t>(c)]);
      }
      double se = 0.0;
      for (std::int64_t c = 0; c < C; ++c) se += std::exp(zbuf[static_cast<std::size_t>(c)] - m);
      double lse = m + std::log(se);
      double logp = zbuf[static_cast<std::size_t>(y)] - lse;
      double p = std::exp(logp);
      if (gamma == 0.0) {
        sum += alpha * (-logp);
      } else if (p < kSaturated) {
        sum += alpha * std::pow(1.0 - p, gamma) * (-logp);
      }
      // saturated pixels contribute 0 when gamma > 0
    }
  }
  double value = sum / static_cast<double>(npix);

  Tensor labels_copy = labels;
  ClassWeights w = weights;
  return g.make(Tensor::scalar(value), {logits}, [labels_copy, w, gamma](Node& node) {
    Node* lp = node.parents[0];
    if (!lp->requires_grad) return;
    const Tensor& z = lp->val();
    Tensor& dz = lp->grad();
    const std::int64_t N = z.dim(0), C = z.dim(1), plane = z.dim(2) * z.dim(3);
    const double gscale = node.grad()[0] / static_cast<double>(N * plane);
    std::vector<double> prob(static_cast<std::size_t>(C));
    for (std::int64_t n = 0; n < N; ++n) {
      for (std::int64_t hw = 0; hw < plane; ++hw) {
        int y = static_cast<int>(labels_copy[n * plane + hw]);
        double alpha = w.weight(y);
        double m = -1e300;
        for (std::int64_t c = 0; c < C; ++c)
          m = std::max(m, z[(n * C + c) * plane + hw]);
        double se = 0.0;
        for (std::int64_t c = 0; c < C; ++c) {
          prob[static_cast<std::size_t>(c)] = std::exp(z[(n * C + c) * plane + hw] - m);
          se += prob[static_cast<std::size_t>(c)];
        }
        for (std::int64_t c = 0; c < C; ++c) prob[static_cast<std::size_t>(c)] /= se;
        double py = prob[static_cast<std::size_t>(y)];
        if (gamma == 0.0) {
          for (std::int64_t c = 0; c < C; ++c) {
            double delta = (c == y) ? 1.0 : 0.0;
            dz[(n * C + c) * plane + hw] +=
                gscale * alpha * (prob[static_cast<std::size_t>(c)] - delta);
          }
        } else if (py < kSaturated) {
          double onem = 1.0 - py;
          double logp = std::log(py);
          double factor =
              gamma * std::pow(onem, gamma - 1.0) * py * logp - std::pow(onem, gamma);
          for (std::int64_t c = 0; c < C; ++c) {
            double delta = (c == y) ? 1.0 : 0.0;
            dz[(n * C + c) * plane + hw] +=
                gscale * alpha * factor * (delta - prob[static_cast<std::size_t>(c)]);
          }
        }
      }
    }
  });
}

Node* weighted_cross_entropy(Graph& g, Node* logits, const Tensor& labels,
                             const ClassWeights& weights) {
  return focal_loss(g, logits, labels, 0.0, weights);
}

Node* generalized_dice_loss(Graph& g, Node* probs, const Tensor& labels) {
  const Tensor& p = probs->val();
  check_labels(p, labels);
  const std::int64_t N = p.dim(0), C = p.dim(1), plane = p.dim(2) * p.dim(3);

  // Channel sums must form a distribution at each pixel.
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t hw = 0; hw < plane; ++hw) {
      double s = 0.0;
      for (std::int64_t c = 0; c < C; ++c) s += p[(n * C + c) * plane + hw];
      if (std::abs(s - 1.0) > 1e-3)
        throw std::invalid_argument("generalized_dice_loss: probs not normalized (sum " +
                                    std::to_string(s) + ")");
    }

  std::vector<double> tsum(static_cast<std::size_t>(C), 0.0);
  std::vector<double> inter(static_cast<std::size_t>(C), 0.0);
  std::vector<double> punion(static_cast<std::size_t>(C), 0.0);
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t hw = 0; hw < plane; ++hw) {
      int y = label_at(labels, n * plane + hw, C);
      tsum[static_cast<std::size_t>(y)] += 1.0;
      for (std::int64_t c = 0; c < C; ++c) {
        double pv = p[(n * C + c) * plane + hw];
        double tv = (c == y) ? 1.0 : 0.0;
        inter[static_cast<std::size_t>(c)] += pv * tv;
        punion[static_cast<std::size_t>(c)] += pv + tv;
      }
    }

  auto class_w = std::make_shared<std::vector<double>>(static_cast<std::size_t>(C), 0.0);
  auto& wc = *class_w;
  double num = 0.0, den = 0.0;
  for (std::int64_t c = 0; c < C; ++c) {
    if (tsum[static_cast<std::size_t>(c)] > 0.0) {
      wc[static_cast<std::size_t>(c)] =
          1.0 / (tsum[static_cast<std::size_t>(c)] * tsum[static_cast<std::size_t>(c)]);
      num += wc[static_cast<std::size_t>(c)] * inter[static_cast<std::size_t>(c)];
      den += wc[static_cast<std::size_t>(c)] * punion[static_cast<std::size_t>(c)];
    }
  }
  double value = den > 0.0 ? 1.0 - 2.0 * num / den : 0.0;

  Tensor labels_copy = labels;
  return g.make(Tensor::scalar(value), {probs},
                [labels_copy, class_w, num, den](Node& node) {
                  Node* pp = node.parents[0];
                  if (!pp->requires_grad || den <= 0.0) return;
                  const Tensor& p = pp->val();
                  Tensor& dp = pp->grad();
                  const std::int64_t N = p.dim(0), C = p.dim(1), plane = p.dim(2) * p.dim(3);
                  const auto& wc = *class_w;
                  double gv = node.grad()[0];
                  for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t hw = 0; hw < plane; ++hw) {
                      int y = static_cast<int>(labels_copy[n * plane + hw]);
                      for (std::int64_t c = 0; c < C; ++c) {
                        double w = wc[static_cast<std::size_t>(c)];
                        if (w == 0.0) continue;
                        double tv = (c == y) ? 1.0 : 0.0;
                        // d(1-2A/B)/dp = -2 (w t B - A w) / B^2
                        dp[(n * C + c) * plane + hw] +=
                            gv * (-2.0) * w * (tv * den - num) / (den * den);
                      }
                    }
                });
}

// ---- adversarial ------------------------------------------------------------

namespace {

// mean over elements of -log(clamp(p)) with optional (1-p) flip.
Node* neg_log_mean(Graph& g, Node* p, bool one_minus) {
  const Tensor& pv = p->val();
  for (std::int64_t i = 0; i < pv.numel(); ++i)
    if (pv[i] < 0.0 || pv[i] > 1.0)
      throw std::invalid_argument("gan loss (log form): probability outside [0,1]");
  double sum = 0.0;
  for (std::int64_t i = 0; i < pv.numel(); ++i) {
    double q = one_minus ? 1.0 - pv[i] : pv[i];
    q = std::min(std::max(q, kProbClamp), 1.0 - kProbClamp);
    sum += -std::log(q);
  }
  double inv = 1.0 / static_cast<double>(pv.numel());
  return g.make(Tensor::scalar(sum * inv), {p}, [one_minus, inv](Node& node) {
    Node* pp = node.parents[0];
    if (!pp->requires_grad) return;
    const Tensor& pv = pp->val();
    Tensor& dp = pp->grad();
    double gv = node.grad()[0] * inv;
    for (std::int64_t i = 0; i < pv.numel(); ++i) {
      double q = one_minus ? 1.0 - pv[i] : pv[i];
      if (q < kProbClamp || q > 1.0 - kProbClamp) continue;  // clamped: no gradient
      double d = -1.0 / q;
      dp[i] += gv * (one_minus ? -d : d);
    }
  });
}

// mean over elements of (s - target)^2.
Node* squared_err_mean(Graph& g, Node* s, double target) {
  const Tensor& sv = s->val();
  double sum = 0.0;
  for (std::int64_t i = 0; i < sv.numel(); ++i) {
    double d = sv[i] - target;
    sum += d * d;
  }
  double inv = 1.0 / static_cast<double>(sv.numel());
  return g.make(Tensor::scalar(sum * inv), {s}, [target, inv](Node& node) {
    Node* sp = node.parents[0];
    if (!sp->requires_grad) return;
    const Tensor& sv = sp->val();
    Tensor& ds = sp->grad();
    double gv = node.grad()[0] * inv;
    for (std::int64_t i = 0; i < sv.numel(); ++i) ds[i] += gv * 2.0 * (sv[i] - target);
  });
}

}  // namespace

Node* gan_discriminator_loss_log(Graph& g, Node* p_real, Node* p_fake) {
  Node* a = neg_log_mean(g, p_real, false);
  Node* b = neg_log_mean(g, p_fake, true);
  return nn::weighted_sum(g, {a, b}, {1.0, 1.0});
}

Node* gan_generator_loss_log(Graph& g, Node* p_fake) { return neg_log_mean(g, p_fake, false); }

Node* gan_discriminator_loss_ls(Graph& g, Node* s_real, Node* s_fake) {
  Node* a = squared_err_mean(g, s_real, 1.0);
  Node* b = squared_err_mean(g, s_fake, 0.0);
  return nn::weighted_sum(g, {a, b}, {1.0, 1.0});
}

Node* gan_generator_loss_ls(Graph& g, Node* s_fake) { return squared_err_mean(g, s_fake, 1.0); }

GanLossPair gan_losses(Graph& g, Node* d_real, Node* d_fake, GanForm form) {
  GanLossPair pair{};
  if (form == GanForm::log_form) {
    pair.discriminator = gan_discriminator_loss_log(g, d_real, d_fake);
    pair.generator = gan_generator_loss_log(g, d_fake);
  } else {
    pair.discriminator = gan_discriminator_loss_ls(g, d_real, d_fake);
    pair.generator = gan_generator_loss_ls(g, d_fake);
  }
  return pair;
}

// ---- content consistency ------------------------------------------------------

Node* content_consistency_loss(Graph& g, Node* rec_s, Node* x_s, Node* rec_t, Node* x_t,
                               const Tensor* organ_mask) {
  const Tensor& rs = rec_s->val();
  const Tensor& xs = x_s->val();
  const Tensor& rt = rec_t->val();
  const Tensor& xt = x_t->val();
  if (!rs.same_shape(xs))
    throw std::invalid_argument("content_consistency_loss: source shapes differ");
  if (!rt.same_shape(xt))
    throw std::invalid_argument("content_consistency_loss: target shapes differ");
  if (organ_mask) {
    if (!organ_mask->same_shape(xs))
      throw std::invalid_argument("content_consistency_loss: organ mask shape mismatch");
    for (std::int64_t i = 0; i < organ_mask->numel(); ++i)
      if ((*organ_mask)[i] != 0.0 && (*organ_mask)[i] != 1.0)
        throw std::invalid_argument("content_consistency_loss: mask must be binary");
  }

  double ssum = 0.0;
  for (std::int64_t i = 0; i < rs.numel(); ++i) {
    double weight = 1.0 + (organ_mask ? (*organ_mask)[i] : 0.0);
    ssum += std::abs(rs[i] - xs[i]) * weight;
  }
  double tsum = 0.0;
  for (std::int64_t i = 0; i < rt.numel(); ++i) tsum += std::abs(rt[i] - xt[i]);
  const double inv_s = 1.0 / static_cast<double>(rs.numel());
  const double inv_t = 1.0 / static_cast<double>(rt.numel());
  double value = ssum * inv_s + tsum * inv_t;

  std::shared_ptr<Tensor> mask = organ_mask ? std::make_shared<Tensor>(*organ_mask) : nullptr;
  return g.make(Tensor::scalar(value), {rec_s, x_s, rec_t, x_t},
                [mask, inv_s, inv_t](Node& node) {
                  double gv = node.grad()[0];
                  Node* rsN = node.parents[0];
                  Node* xsN = node.parents[1];
                  Node* rtN = node.parents[2];
                  Node* xtN = node.parents[3];
                  const Tensor& rs = rsN->val();
                  const Tensor& xs = xsN->val();
                  for (std::int64_t i = 0; i < rs.numel(); ++i) {
                    double weight = 1.0 + (mask ? (*mask)[i] : 0.0);
                    double d = rs[i] - xs[i];
                    double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                    double gr = gv * inv_s * weight * s;
                    if (rsN->requires_grad) rsN->grad()[i] += gr;
                    if (xsN->requires_grad) xsN->grad()[i] -= gr;
                  }
                  const Tensor& rt = rtN->val();
                  const Tensor& xt = xtN->val();
                  for (std::int64_t i = 0; i < rt.numel(); ++i) {
                    double d = rt[i] - xt[i];
                    double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                    double gr = gv * inv_t * s;
                    if (rtN->requires_grad) rtN->grad()[i] += gr;
                    if (xtN->requires_grad) xtN->grad()[i] -= gr;
                  }
                });
}

// ---- task loss -----------------------------------------------------------------

Node* task_loss(Graph& g, Node* synth, Node* x_s, const Tensor& labels, PixelClassifier& subnet,
                const ClassWeights& weights) {
  Node* joint = nn::concat_channels(g, x_s, synth);
  Node* logits = subnet.forward(g, joint);
  return weighted_cross_entropy(g, logits, labels, weights);
}

// ---- objective composition ------------------------------------------------------

std::string LossBreakdown::csv_header() {
  return "step,gan_forward,gan_backward,content,task,total,lambda_content,lambda_task";
}

std::string LossBreakdown::csv_row(std::int64_t step) const {
  std::ostringstream os;
  os << step << ',' << fmt_double(gan_forward) << ',' << fmt_double(gan_backward) << ','
     << fmt_double(content) << ',' << fmt_double(task) << ',' << fmt_double(total) << ','
     << fmt_double(lambda_content) << ',' << fmt_double(lambda_task);
  return os.str();
}

namespace {
void check_finite_term(double v, const char* name) {
  if (!std::isfinite(v))
    throw std::invalid_argument(std::string("total_objective: non-finite term '") + name + "'");
}
}  // namespace

LossBreakdown total_objective(double gan_forward, double gan_backward, double content, double task,
                              double lambda_content, double lambda_task) {
  check_finite_term(gan_forward, "gan_forward");
  check_finite_term(gan_backward, "gan_backward");
  check_finite_term(content, "content");
  check_finite_term(task, "task");
  LossBreakdown b;
  b.gan_forward = gan_forward;
  b.gan_backward = gan_backward;
  b.content = content;
  b.task = task;
  b.lambda_content = lambda_content;
  b.lambda_task = lambda_task;
  b.total = gan_forward + gan_backward + lambda_content * content + lambda_task * task;
  return b;
}

Node* total_objective_node(Graph& g, Node* gan_forward, Node* gan_backward, Node* content,
                           Node* task, double lambda_content, double lambda_task) {
  check_finite_term(gan_forward->val()[0], "gan_forward");
  check_finite_term(gan_backward->val()[0], "gan_backward");
  check_finite_term(content->val()[0], "content");
  check_finite_term(task->val()[0], "task");
  return nn::weighted_sum(g, {gan_forward, gan_backward, content, task},
                          {1.0, 1.0, lambda_content, lambda_task});
}

}  // namespace oar::losses
