#pragma once

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "oar/nn/tensor.hpp"

namespace oar::nn {

class Graph;

// Trainable parameter. Owned by a network module; gradients accumulate here
// when the parameter participates in a Graph and backward() runs.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor(value.shape());
  }

  void zero_grad() { grad.fill(0.0); }
};

// One vertex of the per-step computation tape. Values of op outputs live in
// `storage`; parameter leaves alias the external Param so no copies happen.
struct Node {
  Tensor storage;
  const Tensor* vptr = nullptr;
  Tensor grad_local;
  Tensor* gptr = nullptr;  // parameter leaves accumulate into Param::grad
  bool requires_grad = false;
  bool grad_touched = false;
  std::vector<Node*> parents;
  std::function<void(Node&)> backward;

  const Tensor& val() const { return *vptr; }

  Tensor& grad() {
    if (!grad_touched) {
      if (gptr == nullptr) {
        grad_local = Tensor(vptr->shape());
        gptr = &grad_local;
      }
      grad_touched = true;
    }
    return *gptr;
  }
};

// Reverse-mode tape. Nodes only reference earlier nodes, so creation order is
// a valid topological order and backward() is a single reverse sweep. One
// Graph per optimization step; dropping it frees all activations.
class Graph {
 public:
  // Constant leaf (no gradient).
  Node* input(Tensor value) {
    Node& n = nodes_.emplace_back();
    n.storage = std::move(value);
    n.vptr = &n.storage;
    return &n;
  }

  // Parameter leaf; gradient accumulates into p.grad.
  Node* param(Param& p) {
    Node& n = nodes_.emplace_back();
    n.vptr = &p.value;
    n.gptr = &p.grad;
    n.requires_grad = true;
    return &n;
  }

  // Leaf that owns its value but still receives a gradient (used by the
  // finite-difference harness and for probing input sensitivities).
  Node* leaf_with_grad(Tensor value) {
    Node& n = nodes_.emplace_back();
    n.storage = std::move(value);
    n.vptr = &n.storage;
    n.requires_grad = true;
    return &n;
  }

  Node* make(Tensor value, std::vector<Node*> parents, std::function<void(Node&)> back) {
    Node& n = nodes_.emplace_back();
    n.storage = std::move(value);
    n.vptr = &n.storage;
    n.parents = std::move(parents);
    for (Node* p : n.parents) {
      if (p && p->requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
    if (n.requires_grad) n.backward = std::move(back);
    return &n;
  }

  // Seeds d(root)/d(root) = 1 and sweeps the tape. Root must be scalar.
  void backward(Node* root) {
    if (root->val().numel() != 1)
      throw std::invalid_argument("Graph::backward: root must be a scalar");
    root->grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node& n = *it;
      if (n.backward && n.grad_touched) n.backward(n);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::deque<Node> nodes_;
};

}  // namespace oar::nn
