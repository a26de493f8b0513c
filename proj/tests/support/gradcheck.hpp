#pragma once

#include <cmath>
#include <functional>

#include "oar/common/rng.hpp"
#include "oar/nn/graph.hpp"
#include "oar/nn/ops.hpp"

namespace oar::test {

struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
};

// Central finite differences against the tape's analytic gradient.
// `build` must construct the scalar under test from a fresh graph and leaf.
inline GradCheckResult grad_check(
    const std::function<nn::Node*(nn::Graph&, nn::Node*)>& build, const nn::Tensor& x0,
    double eps = 1e-5) {
  using nn::Graph;
  using nn::Node;
  using nn::Tensor;

  Tensor analytic;
  {
    Graph g;
    Node* leaf = g.leaf_with_grad(x0);
    Node* out = build(g, leaf);
    g.backward(out);
    analytic = leaf->grad();
  }

  auto eval = [&](const Tensor& x) {
    Graph g;
    Node* leaf = g.input(x);
    Node* out = build(g, leaf);
    return out->val()[0];
  };

  GradCheckResult r;
  Tensor xp = x0, xm = x0;
  for (std::int64_t i = 0; i < x0.numel(); ++i) {
    double orig = x0[i];
    xp[i] = orig + eps;
    xm[i] = orig - eps;
    double fd = (eval(xp) - eval(xm)) / (2.0 * eps);
    xp[i] = orig;
    xm[i] = orig;
    double a = analytic[i];
    double abs_err = std::abs(a - fd);
    double denom = std::max({std::abs(a), std::abs(fd), 1e-6});
    r.max_abs_err = std::max(r.max_abs_err, abs_err);
    r.max_rel_err = std::max(r.max_rel_err, abs_err / denom);
  }
  return r;
}

inline nn::Tensor random_tensor(std::vector<std::int64_t> shape, Rng& rng, double scale = 1.0) {
  nn::Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, scale);
  return t;
}

}  // namespace oar::test
