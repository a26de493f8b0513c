#include "oar/nn/optim.hpp"

#include <cmath>

namespace oar::nn {

Adam::Adam(std::vector<Param*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Param* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::zero_grad() {
  for (Param* p : params_) p->zero_grad();
}

void Adam::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::int64_t j = 0; j < p.value.numel(); ++j) {
      double grad = p.grad[j];
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * grad;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * grad * grad;
      double mhat = m[j] / bc1;
      double vhat = v[j] / bc2;
      p.value[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

std::vector<std::pair<std::string, Tensor*>> Adam::state_tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back("adam.m." + params_[i]->name, &m_[i]);
    out.emplace_back("adam.v." + params_[i]->name, &v_[i]);
  }
  return out;
}

SgdMomentum::SgdMomentum(std::vector<Param*> params, double lr, double momentum)
    : params_(std::move(params)), lr_(lr), momentum_(momentum) {
  velocity_.reserve(params_.size());
  for (Param* p : params_) velocity_.emplace_back(p->value.shape());
}

void SgdMomentum::zero_grad() {
  for (Param* p : params_) p->zero_grad();
}

void SgdMomentum::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    Tensor& vel = velocity_[i];
    for (std::int64_t j = 0; j < p.value.numel(); ++j) {
      vel[j] = momentum_ * vel[j] + p.grad[j];
      p.value[j] -= lr_ * vel[j];
    }
  }
}

std::vector<std::pair<std::string, Tensor*>> SgdMomentum::state_tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t i = 0; i < params_.size(); ++i)
    out.emplace_back("sgd.vel." + params_[i]->name, &velocity_[i]);
  return out;
}

}  // namespace oar::nn
