#include "oar/nn/ops.hpp"

#include <Eigen/Core>

#include <cmath>
#include <memory>
#include <stdexcept>

namespace oar::nn {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
}

}  // namespace

Node* add(Graph& g, Node* a, Node* b) {
  check_same_shape(a->val(), b->val(), "add");
  Tensor out = a->val();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += b->val()[i];
  return g.make(std::move(out), {a, b}, [](Node& n) {
    for (Node* p : n.parents)
      if (p->requires_grad) p->grad().add_scaled(n.grad(), 1.0);
  });
}

Node* sub(Graph& g, Node* a, Node* b) {
  check_same_shape(a->val(), b->val(), "sub");
  Tensor out = a->val();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= b->val()[i];
  return g.make(std::move(out), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->grad().add_scaled(n.grad(), 1.0);
    if (n.parents[1]->requires_grad) n.parents[1]->grad().add_scaled(n.grad(), -1.0);
  });
}

Node* mul(Graph& g, Node* a, Node* b) {
  check_same_shape(a->val(), b->val(), "mul");
  Tensor out = a->val();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b->val()[i];
  return g.make(std::move(out), {a, b}, [](Node& n) {
    const Tensor& av = n.parents[0]->val();
    const Tensor& bv = n.parents[1]->val();
    if (n.parents[0]->requires_grad) {
      Tensor& da = n.parents[0]->grad();
      for (std::int64_t i = 0; i < av.numel(); ++i) da[i] += n.grad()[i] * bv[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor& db = n.parents[1]->grad();
      for (std::int64_t i = 0; i < bv.numel(); ++i) db[i] += n.grad()[i] * av[i];
    }
  });
}

Node* scale(Graph& g, Node* a, double s) {
  Tensor out = a->val();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
  return g.make(std::move(out), {a}, [s](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->grad().add_scaled(n.grad(), s);
  });
}

Node* weighted_sum(Graph& g, const std::vector<Node*>& parts, const std::vector<double>& coeffs) {
  if (parts.size() != coeffs.size() || parts.empty())
    throw std::invalid_argument("weighted_sum: parts/coeffs mismatch");
  double v = 0.0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i]->val().numel() != 1)
      throw std::invalid_argument("weighted_sum: parts must be scalars");
    v += coeffs[i] * parts[i]->val()[0];
  }
  return g.make(Tensor::scalar(v), parts, [coeffs](Node& n) {
    double gv = n.grad()[0];
    for (std::size_t i = 0; i < n.parents.size(); ++i)
      if (n.parents[i]->requires_grad) n.parents[i]->grad()[0] += coeffs[i] * gv;
  });
}

Node* mean_all(Graph& g, Node* a) {
  double s = 0.0;
  const Tensor& v = a->val();
  for (std::int64_t i = 0; i < v.numel(); ++i) s += v[i];
  double inv = 1.0 / static_cast<double>(v.numel());
  return g.make(Tensor::scalar(s * inv), {a}, [inv](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor& da = n.parents[0]->grad();
    double gv = n.grad()[0] * inv;
    for (std::int64_t i = 0; i < da.numel(); ++i) da[i] += gv;
  });
}

// ---- conv2d ----------------------------------------------------------------

namespace {

// cols has shape [C*kh*kw, OH*OW] row-major.
void im2col(const Tensor& x, std::int64_t n, int kh, int kw, int stride, int pad, PadMode mode,
            std::int64_t oh, std::int64_t ow, double* cols) {
  const std::int64_t C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const bool rep = mode == PadMode::replicate;
  for (std::int64_t c = 0; c < C; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        double* row = cols + ((c * kh + i) * kw + j) * oh * ow;
        for (std::int64_t y = 0; y < oh; ++y) {
          std::int64_t sy = y * stride - pad + i;
          if (sy < 0 || sy >= H) {
            if (!rep) {
              for (std::int64_t z = 0; z < ow; ++z) row[y * ow + z] = 0.0;
              continue;
            }
            sy = std::clamp<std::int64_t>(sy, 0, H - 1);
          }
          const double* src = &x.at4(n, c, sy, 0);
          for (std::int64_t z = 0; z < ow; ++z) {
            std::int64_t sx = z * stride - pad + j;
            if (sx >= 0 && sx < W)
              row[y * ow + z] = src[sx];
            else
              row[y * ow + z] = rep ? src[std::clamp<std::int64_t>(sx, 0, W - 1)] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, std::int64_t n, int kh, int kw, int stride, int pad,
                PadMode mode, std::int64_t oh, std::int64_t ow, Tensor& dx) {
  const std::int64_t C = dx.dim(1), H = dx.dim(2), W = dx.dim(3);
  const bool rep = mode == PadMode::replicate;
  for (std::int64_t c = 0; c < C; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        const double* row = cols + ((c * kh + i) * kw + j) * oh * ow;
        for (std::int64_t y = 0; y < oh; ++y) {
          std::int64_t sy = y * stride - pad + i;
          if (sy < 0 || sy >= H) {
            if (!rep) continue;
            sy = std::clamp<std::int64_t>(sy, 0, H - 1);
          }
          double* dst = &dx.at4(n, c, sy, 0);
          for (std::int64_t z = 0; z < ow; ++z) {
            std::int64_t sx = z * stride - pad + j;
            if (sx >= 0 && sx < W)
              dst[sx] += row[y * ow + z];
            else if (rep)
              dst[std::clamp<std::int64_t>(sx, 0, W - 1)] += row[y * ow + z];
          }
        }
      }
    }
  }
}

}  // namespace

Node* conv2d(Graph& g, Node* x, Node* w, Node* b, int stride, int pad, PadMode mode) {
  const Tensor& xv = x->val();
  const Tensor& wv = w->val();
  if (xv.ndim() != 4 || wv.ndim() != 4)
    throw std::invalid_argument("conv2d: expects x[N,C,H,W], w[K,C,kh,kw]");
  if (xv.dim(1) != wv.dim(1))
    throw std::invalid_argument("conv2d: input channels mismatch: x " + xv.shape_str() + " w " +
                                wv.shape_str());
  const std::int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const std::int64_t K = wv.dim(0);
  const int kh = static_cast<int>(wv.dim(2)), kw = static_cast<int>(wv.dim(3));
  const std::int64_t OH = (H + 2 * pad - kh) / stride + 1;
  const std::int64_t OW = (W + 2 * pad - kw) / stride + 1;
  if (OH <= 0 || OW <= 0) throw std::invalid_argument("conv2d: output would be empty");
  if (b && b->val().numel() != K) throw std::invalid_argument("conv2d: bias size mismatch");

  const std::int64_t CKK = C * kh * kw;
  Tensor out({N, K, OH, OW});
  std::vector<double> cols(static_cast<std::size_t>(CKK * OH * OW));
  CMapR Wm(wv.data(), K, CKK);
  for (std::int64_t n = 0; n < N; ++n) {
    im2col(xv, n, kh, kw, stride, pad, mode, OH, OW, cols.data());
    CMapR Cm(cols.data(), CKK, OH * OW);
    MapR Om(&out.at4(n, 0, 0, 0), K, OH * OW);
    Om.noalias() = Wm * Cm;
    if (b) {
      for (std::int64_t k = 0; k < K; ++k) Om.row(k).array() += b->val()[k];
    }
  }

  std::vector<Node*> parents = b ? std::vector<Node*>{x, w, b} : std::vector<Node*>{x, w};
  return g.make(std::move(out), std::move(parents), [stride, pad, kh, kw, mode](Node& n) {
    Node* xp = n.parents[0];
    Node* wp = n.parents[1];
    Node* bp = n.parents.size() > 2 ? n.parents[2] : nullptr;
    const Tensor& xv = xp->val();
    const Tensor& wv = wp->val();
    const Tensor& go = n.grad();
    const std::int64_t N = xv.dim(0), C = xv.dim(1);
    const std::int64_t K = wv.dim(0);
    const std::int64_t OH = go.dim(2), OW = go.dim(3);
    const std::int64_t CKK = C * kh * kw;

    std::vector<double> cols(static_cast<std::size_t>(CKK * OH * OW));
    CMapR Wm(wv.data(), K, CKK);
    for (std::int64_t s = 0; s < N; ++s) {
      CMapR Gm(&go.at4(s, 0, 0, 0), K, OH * OW);
      if (wp->requires_grad || bp) {
        if (wp->requires_grad) {
          im2col(xv, s, kh, kw, stride, pad, mode, OH, OW, cols.data());
          CMapR Cm(cols.data(), CKK, OH * OW);
          MapR dWm(wp->grad().data(), K, CKK);
          dWm.noalias() += Gm * Cm.transpose();
        }
        if (bp && bp->requires_grad) {
          Tensor& db = bp->grad();
          for (std::int64_t k = 0; k < K; ++k) db[k] += Gm.row(k).sum();
        }
      }
      if (xp->requires_grad) {
        std::vector<double> dcols(static_cast<std::size_t>(CKK * OH * OW));
        MapR Dm(dcols.data(), CKK, OH * OW);
        Dm.noalias() = Wm.transpose() * Gm;
        col2im_add(dcols.data(), s, kh, kw, stride, pad, mode, OH, OW, xp->grad());
      }
    }
  });
}

Node* fc(Graph& g, Node* x, Node* w, Node* b) {
  const Tensor& xv = x->val();
  const Tensor& wv = w->val();
  if (xv.ndim() != 2 || wv.ndim() != 2 || xv.dim(1) != wv.dim(1))
    throw std::invalid_argument("fc: expects x[N,D], w[O,D] with matching D");
  const std::int64_t N = xv.dim(0), D = xv.dim(1), O = wv.dim(0);
  if (b && b->val().numel() != O) throw std::invalid_argument("fc: bias size mismatch");
  Tensor out({N, O});
  CMapR Xm(xv.data(), N, D);
  CMapR Wm(wv.data(), O, D);
  MapR Ym(out.data(), N, O);
  Ym.noalias() = Xm * Wm.transpose();
  if (b)
    for (std::int64_t r = 0; r < N; ++r)
      for (std::int64_t c = 0; c < O; ++c) out.at2(r, c) += b->val()[c];

  std::vector<Node*> parents = b ? std::vector<Node*>{x, w, b} : std::vector<Node*>{x, w};
  return g.make(std::move(out), std::move(parents), [](Node& n) {
    Node* xp = n.parents[0];
    Node* wp = n.parents[1];
    Node* bp = n.parents.size() > 2 ? n.parents[2] : nullptr;
    const Tensor& xv = xp->val();
    const Tensor& wv = wp->val();
    const std::int64_t N = xv.dim(0), D = xv.dim(1), O = wv.dim(0);
    CMapR Gm(n.grad().data(), N, O);
    if (xp->requires_grad) {
      CMapR Wm(wv.data(), O, D);
      MapR dXm(xp->grad().data(), N, D);
      dXm.noalias() += Gm * Wm;
    }
    if (wp->requires_grad) {
      CMapR Xm(xv.data(), N, D);
      MapR dWm(wp->grad().data(), O, D);
      dWm.noalias() += Gm.transpose() * Xm;
    }
    if (bp && bp->requires_grad) {
      Tensor& db = bp->grad();
      for (std::int64_t r = 0; r < N; ++r)
        for (std::int64_t c = 0; c < O; ++c) db[c] += Gm(r, c);
    }
  });
}

Node* instance_norm(Graph& g, Node* x, Node* gamma, Node* beta, double eps) {
  const Tensor& xv = x->val();
  if (xv.ndim() != 4) throw std::invalid_argument("instance_norm: expects NCHW");
  const std::int64_t N = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
  if (gamma->val().numel() != C || beta->val().numel() != C)
    throw std::invalid_argument("instance_norm: gamma/beta size mismatch");

  auto xhat = std::make_shared<Tensor>(xv.shape());
  auto inv_std = std::make_shared<Tensor>(Tensor({N, C}));
  Tensor out(xv.shape());
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      const double* src = &xv.at4(n, c, 0, 0);
      double m = 0.0;
      for (std::int64_t i = 0; i < HW; ++i) m += src[i];
      m /= static_cast<double>(HW);
      double var = 0.0;
      for (std::int64_t i = 0; i < HW; ++i) {
        double d = src[i] - m;
        var += d * d;
      }
      var /= static_cast<double>(HW);
      double is = 1.0 / std::sqrt(var + eps);
      inv_std->at2(n, c) = is;
      double gm = gamma->val()[c], bt = beta->val()[c];
      double* xh = &xhat->at4(n, c, 0, 0);
      double* dst = &out.at4(n, c, 0, 0);
      for (std::int64_t i = 0; i < HW; ++i) {
        xh[i] = (src[i] - m) * is;
        dst[i] = gm * xh[i] + bt;
      }
    }
  }

  return g.make(std::move(out), {x, gamma, beta}, [xhat, inv_std](Node& n) {
    Node* xp = n.parents[0];
    Node* gp = n.parents[1];
    Node* bp = n.parents[2];
    const Tensor& go = n.grad();
    const std::int64_t N = go.dim(0), C = go.dim(1), HW = go.dim(2) * go.dim(3);
    for (std::int64_t s = 0; s < N; ++s) {
      for (std::int64_t c = 0; c < C; ++c) {
        const double* gy = &go.at4(s, c, 0, 0);
        const double* xh = &xhat->at4(s, c, 0, 0);
        double sum_gy = 0.0, sum_gy_xh = 0.0;
        for (std::int64_t i = 0; i < HW; ++i) {
          sum_gy += gy[i];
          sum_gy_xh += gy[i] * xh[i];
        }
        if (gp->requires_grad) gp->grad()[c] += sum_gy_xh;
        if (bp->requires_grad) bp->grad()[c] += sum_gy;
        if (xp->requires_grad) {
          double gm = gp->val()[c];
          double is = inv_std->at2(s, c);
          double mean_gy = sum_gy / static_cast<double>(HW);
          double mean_gy_xh = sum_gy_xh / static_cast<double>(HW);
          double* dx = &xp->grad().at4(s, c, 0, 0);
          for (std::int64_t i = 0; i < HW; ++i)
            dx[i] += gm * is * (gy[i] - mean_gy - xh[i] * mean_gy_xh);
        }
      }
    }
  });
}

Node* leaky_relu(Graph& g, Node* x, double slope) {
  Tensor out = x->val();
  for (std::int64_t i = 0; i < out.numel(); ++i)
    if (out[i] < 0.0) out[i] *= slope;
  return g.make(std::move(out), {x}, [slope](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    const Tensor& xv = n.parents[0]->val();
    Tensor& dx = n.parents[0]->grad();
    const Tensor& go = n.grad();
    for (std::int64_t i = 0; i < xv.numel(); ++i)
      dx[i] += go[i] * (xv[i] >= 0.0 ? 1.0 : slope);
  });
}

Node* tanh_act(Graph& g, Node* x) {
  Tensor out = x->val();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
  return g.make(std::move(out), {x}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor& dx = n.parents[0]->grad();
    const Tensor& y = n.val();
    const Tensor& go = n.grad();
    for (std::int64_t i = 0; i < y.numel(); ++i) dx[i] += go[i] * (1.0 - y[i] * y[i]);
  });
}

Node* sigmoid_act(Graph& g, Node* x) {
  Tensor out = x->val();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  return g.make(std::move(out), {x}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor& dx = n.parents[0]->grad();
    const Tensor& y = n.val();
    const Tensor& go = n.grad();
    for (std::int64_t i = 0; i < y.numel(); ++i) dx[i] += go[i] * y[i] * (1.0 - y[i]);
  });
}

Node* nearest_upsample2x(Graph& g, Node* x) {
  const Tensor& xv = x->val();
  if (xv.ndim() != 4) throw std::invalid_argument("nearest_upsample2x: expects NCHW");
  const std::int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor out({N, C, 2 * H, 2 * W});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t h = 0; h < H; ++h) {
        const double* src = &xv.at4(n, c, h, 0);
        double* d0 = &out.at4(n, c, 2 * h, 0);
        double* d1 = &out.at4(n, c, 2 * h + 1, 0);
        for (std::int64_t w = 0; w < W; ++w) {
          d0[2 * w] = d0[2 * w + 1] = src[w];
          d1[2 * w] = d1[2 * w + 1] = src[w];
        }
      }
  return g.make(std::move(out), {x}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor& dx = n.parents[0]->grad();
    const Tensor& go = n.grad();
    const std::int64_t N = dx.dim(0), C = dx.dim(1), H = dx.dim(2), W = dx.dim(3);
    for (std::int64_t s = 0; s < N; ++s)
      for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t h = 0; h < H; ++h) {
          double* d = &dx.at4(s, c, h, 0);
          const double* g0 = &go.at4(s, c, 2 * h, 0);
          const double* g1 = &go.at4(s, c, 2 * h + 1, 0);
          for (std::int64_t w = 0; w < W; ++w)
            d[w] += g0[2 * w] + g0[2 * w + 1] + g1[2 * w] + g1[2 * w + 1];
        }
  });
}

Node* concat_channels(Graph& g, Node* a, Node* b) {
  const Tensor& av = a->val();
  const Tensor& bv = b->val();
  if (av.ndim() != 4 || bv.ndim() != 4 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) ||
      av.dim(3) != bv.dim(3))
    throw std::invalid_argument("concat_channels: incompatible shapes " + av.shape_str() + " vs " +
                                bv.shape_str());
  const std::int64_t N = av.dim(0), Ca = av.dim(1), Cb = bv.dim(1), H = av.dim(2), W = av.dim(3);
  Tensor out({N, Ca + Cb, H, W});
  const std::int64_t plane = H * W;
  for (std::int64_t n = 0; n < N; ++n) {
    std::copy_n(&av.at4(n, 0, 0, 0), Ca * plane, &out.at4(n, 0, 0, 0));
    std::copy_n(&bv.at4(n, 0, 0, 0), Cb * plane, &out.at4(n, Ca, 0, 0));
  }
  return g.make(std::move(out), {a, b}, [Ca, Cb, plane](Node& n) {
    const Tensor& go = n.grad();
    const std::int64_t N = go.dim(0);
    for (std::int64_t s = 0; s < N; ++s) {
      if (n.parents[0]->requires_grad) {
        double* da = &n.parents[0]->grad().at4(s, 0, 0, 0);
        const double* src = &go.at4(s, 0, 0, 0);
        for (std::int64_t i = 0; i < Ca * plane; ++i) da[i] += src[i];
      }
      if (n.parents[1]->requires_grad) {
        double* db = &n.parents[1]->grad().at4(s, 0, 0, 0);
        const double* src = &go.at4(s, Ca, 0, 0);
        for (std::int64_t i = 0; i < Cb * plane; ++i) db[i] += src[i];
      }
    }
  });
}

// ---- roi_align ---------------------------------------------------------------

namespace {

struct BilinearTap {
  std::int64_t idx[4];
  double w[4];
  bool valid = false;
};

BilinearTap bilinear_tap(double y, double x, std::int64_t H, std::int64_t W) {
  BilinearTap t;
  if (y < -1.0 || y > static_cast<double>(H) || x < -1.0 || x > static_cast<double>(W)) return t;
  if (y < 0) y = 0;
  if (x < 0) x = 0;
  std::int64_t y_low = static_cast<std::int64_t>(y);
  std::int64_t x_low = static_cast<std::int64_t>(x);
  std::int64_t y_high, x_high;
  if (y_low >= H - 1) {
    y_high = y_low = H - 1;
    y = static_cast<double>(y_low);
  } else {
    y_high = y_low + 1;
  }
  if (x_low >= W - 1) {
    x_high = x_low = W - 1;
    x = static_cast<double>(x_low);
  } else {
    x_high = x_low + 1;
  }
  double ly = y - static_cast<double>(y_low), lx = x - static_cast<double>(x_low);
  double hy = 1.0 - ly, hx = 1.0 - lx;
  t.idx[0] = y_low * W + x_low;
  t.idx[1] = y_low * W + x_high;
  t.idx[2] = y_high * W + x_low;
  t.idx[3] = y_high * W + x_high;
  t.w[0] = hy * hx;
  t.w[1] = hy * lx;
  t.w[2] = ly * hx;
  t.w[3] = ly * lx;
  t.valid = true;
  return t;
}

}  // namespace

Node* roi_align(Graph& g, Node* feat, const std::vector<Roi>& rois, int out_size,
                double spatial_scale, int sampling_ratio) {
  const Tensor& fv = feat->val();
  if (fv.ndim() != 4) throw std::invalid_argument("roi_align: expects NCHW features");
  const std::int64_t C = fv.dim(1), H = fv.dim(2), W = fv.dim(3);
  const std::int64_t R = static_cast<std::int64_t>(rois.size());
  const int P = out_size, S = sampling_ratio;

  // Precompute taps so forward and backward agree exactly.
  auto taps = std::make_shared<std::vector<BilinearTap>>(
      static_cast<std::size_t>(R) * P * P * S * S);
  auto batch_of = std::make_shared<std::vector<int>>(rois.size());
  Tensor out({R, C, P, P});
  const double inv_samples = 1.0 / static_cast<double>(S * S);

  for (std::int64_t r = 0; r < R; ++r) {
    const Roi& roi = rois[static_cast<std::size_t>(r)];
    (*batch_of)[static_cast<std::size_t>(r)] = roi.batch;
    // Aligned mapping: image edge coords -> continuous feature coords.
    double fy0 = roi.y0 * spatial_scale - 0.5;
    double fx0 = roi.x0 * spatial_scale - 0.5;
    double fh = (roi.y1 - roi.y0) * spatial_scale;
    double fw = (roi.x1 - roi.x0) * spatial_scale;
    double bin_h = fh / P, bin_w = fw / P;
    for (int ph = 0; ph < P; ++ph) {
      for (int pw = 0; pw < P; ++pw) {
        for (int iy = 0; iy < S; ++iy) {
          for (int ix = 0; ix < S; ++ix) {
            double y = fy0 + (ph + (iy + 0.5) / S) * bin_h;
            double x = fx0 + (pw + (ix + 0.5) / S) * bin_w;
            std::size_t ti = ((((static_cast<std::size_t>(r) * P + ph) * P + pw) * S + iy) * S) + ix;
            (*taps)[ti] = bilinear_tap(y, x, H, W);
          }
        }
      }
    }
    for (std::int64_t c = 0; c < C; ++c) {
      const double* plane = &fv.at4(roi.batch, c, 0, 0);
      for (int ph = 0; ph < P; ++ph) {
        for (int pw = 0; pw < P; ++pw) {
          double acc = 0.0;
          for (int sidx = 0; sidx < S * S; ++sidx) {
            std::size_t ti =
                (((static_cast<std::size_t>(r) * P + ph) * P + pw) * S * S) + sidx;
            const BilinearTap& t = (*taps)[ti];
            if (!t.valid) continue;
            acc += t.w[0] * plane[t.idx[0]] + t.w[1] * plane[t.idx[1]] +
                   t.w[2] * plane[t.idx[2]] + t.w[3] * plane[t.idx[3]];
          }
          out.at4(r, c, ph, pw) = acc * inv_samples;
        }
      }
    }
  }

  return g.make(std::move(out), {feat}, [taps, batch_of, P, S, inv_samples](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Tensor& dfeat = n.parents[0]->grad();
    const Tensor& go = n.grad();
    const std::int64_t R = go.dim(0), C = go.dim(1);
    for (std::int64_t r = 0; r < R; ++r) {
      int b = (*batch_of)[static_cast<std::size_t>(r)];
      for (std::int64_t c = 0; c < C; ++c) {
        double* dplane = &dfeat.at4(b, c, 0, 0);
        for (int ph = 0; ph < P; ++ph) {
          for (int pw = 0; pw < P; ++pw) {
            double gv = go.at4(r, c, ph, pw) * inv_samples;
            if (gv == 0.0) continue;
            for (int sidx = 0; sidx < S * S; ++sidx) {
              std::size_t ti =
                  (((static_cast<std::size_t>(r) * P + ph) * P + pw) * S * S) + sidx;
              const BilinearTap& t = (*taps)[ti];
              if (!t.valid) continue;
              for (int q = 0; q < 4; ++q) dplane[t.idx[q]] += gv * t.w[q];
            }
          }
        }
      }
    }
  });
}

// ---- data-side utilities -----------------------------------------------------

namespace {

void resize_plane_bilinear(const double* src, std::int64_t h, std::int64_t w, double* dst,
                           std::int64_t oh, std::int64_t ow) {
  // Pixel-center mapping; matches the common image-resize convention.
  double sy = static_cast<double>(h) / static_cast<double>(oh);
  double sx = static_cast<double>(w) / static_cast<double>(ow);
  for (std::int64_t y = 0; y < oh; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    std::int64_t y0 = static_cast<std::int64_t>(std::floor(fy));
    double ty = fy - y0;
    std::int64_t y0c = std::max<std::int64_t>(0, std::min(h - 1, y0));
    std::int64_t y1c = std::max<std::int64_t>(0, std::min(h - 1, y0 + 1));
    for (std::int64_t x = 0; x < ow; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      std::int64_t x0 = static_cast<std::int64_t>(std::floor(fx));
      double tx = fx - x0;
      std::int64_t x0c = std::max<std::int64_t>(0, std::min(w - 1, x0));
      std::int64_t x1c = std::max<std::int64_t>(0, std::min(w - 1, x0 + 1));
      double v00 = src[y0c * w + x0c], v01 = src[y0c * w + x1c];
      double v10 = src[y1c * w + x0c], v11 = src[y1c * w + x1c];
      dst[y * ow + x] =
          (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
    }
  }
}

void resize_plane_nearest(const double* src, std::int64_t h, std::int64_t w, double* dst,
                          std::int64_t oh, std::int64_t ow) {
  double sy = static_cast<double>(h) / static_cast<double>(oh);
  double sx = static_cast<double>(w) / static_cast<double>(ow);
  for (std::int64_t y = 0; y < oh; ++y) {
    std::int64_t syi = std::min<std::int64_t>(h - 1, static_cast<std::int64_t>((y + 0.5) * sy));
    for (std::int64_t x = 0; x < ow; ++x) {
      std::int64_t sxi = std::min<std::int64_t>(w - 1, static_cast<std::int64_t>((x + 0.5) * sx));
      dst[y * ow + x] = src[syi * w + sxi];
    }
  }
}

}  // namespace

Tensor bilinear_resize(const Tensor& img, std::int64_t out_h, std::int64_t out_w) {
  if (img.ndim() == 2) {
    Tensor out({out_h, out_w});
    resize_plane_bilinear(img.data(), img.dim(0), img.dim(1), out.data(), out_h, out_w);
    return out;
  }
  if (img.ndim() == 3) {
    const std::int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
    Tensor out({C, out_h, out_w});
    for (std::int64_t c = 0; c < C; ++c)
      resize_plane_bilinear(img.data() + c * H * W, H, W, out.data() + c * out_h * out_w, out_h,
                            out_w);
    return out;
  }
  throw std::invalid_argument("bilinear_resize: expects [H,W] or [C,H,W]");
}

Tensor nearest_resize(const Tensor& img, std::int64_t out_h, std::int64_t out_w) {
  if (img.ndim() == 2) {
    Tensor out({out_h, out_w});
    resize_plane_nearest(img.data(), img.dim(0), img.dim(1), out.data(), out_h, out_w);
    return out;
  }
  if (img.ndim() == 3) {
    const std::int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
    Tensor out({C, out_h, out_w});
    for (std::int64_t c = 0; c < C; ++c)
      resize_plane_nearest(img.data() + c * H * W, H, W, out.data() + c * out_h * out_w, out_h,
                           out_w);
    return out;
  }
  throw std::invalid_argument("nearest_resize: expects [H,W] or [C,H,W]");
}

Tensor flip_horizontal(const Tensor& img) {
  Tensor out(img.shape());
  if (img.ndim() == 2) {
    const std::int64_t H = img.dim(0), W = img.dim(1);
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) out.at2(y, x) = img.at2(y, W - 1 - x);
    return out;
  }
  if (img.ndim() == 3) {
    const std::int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x) out.at3(c, y, x) = img.at3(c, y, W - 1 - x);
    return out;
  }
  throw std::invalid_argument("flip_horizontal: expects [H,W] or [C,H,W]");
}

}  // namespace oar::nn
