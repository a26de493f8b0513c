#pragma once

#include <string>
#include <vector>

#include "oar/nn/graph.hpp"

namespace oar::nn {

// Optimizers own per-parameter slot state keyed by position, so the parameter
// list must be stable for the lifetime of the optimizer (and across
// checkpoint/restore).
class Adam {
 public:
  Adam(std::vector<Param*> params, double lr, double beta1 = 0.5, double beta2 = 0.999,
       double eps = 1e-8);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void zero_grad();
  void step();

  // Slot state as named tensors for checkpointing.
  std::vector<std::pair<std::string, Tensor*>> state_tensors();
  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }

 private:
  std::vector<Param*> params_;
  std::vector<Tensor> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

class SgdMomentum {
 public:
  SgdMomentum(std::vector<Param*> params, double lr, double momentum = 0.9);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void zero_grad();
  void step();

  std::vector<std::pair<std::string, Tensor*>> state_tensors();

 private:
  std::vector<Param*> params_;
  std::vector<Tensor> velocity_;
  double lr_, momentum_;
};

}  // namespace oar::nn
