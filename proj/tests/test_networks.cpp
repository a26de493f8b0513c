#include <doctest.h>

#include <cmath>
#include <complex>
#include <filesystem>

#include "oar/networks/detector.hpp"
#include "oar/networks/unet.hpp"
#include "oar/nn/optim.hpp"
#include "support/gradcheck.hpp"

using namespace oar;
using namespace oar::networks;
using nn::Graph;
using nn::Node;
using nn::Tensor;
using voxelio::Box;

namespace {

NetworkSpec desk_generator_spec(int base = 8) {
  NetworkSpec s;
  s.kind = NetworkKind::generator;
  s.base_channels = base;
  return s;
}

// Energy fraction at the stride-2 lattice frequencies (Nyquist row/column of
// the 2D spectrum), computed with a direct separable DFT.
double nyquist_energy_fraction(const Tensor& img) {
  const std::int64_t H = img.dim(0), W = img.dim(1);
  std::vector<std::complex<double>> rows_dft(static_cast<std::size_t>(H * W));
  for (std::int64_t r = 0; r < H; ++r)
    for (std::int64_t u = 0; u < W; ++u) {
      std::complex<double> acc = 0.0;
      for (std::int64_t c = 0; c < W; ++c) {
        double ang = -2.0 * 3.14159265358979323846 * u * c / W;
        acc += img.at2(r, c) * std::complex<double>(std::cos(ang), std::sin(ang));
      }
      rows_dft[static_cast<std::size_t>(r * W + u)] = acc;
    }
  double total = 0.0, lattice = 0.0;
  for (std::int64_t v = 0; v < H; ++v)
    for (std::int64_t u = 0; u < W; ++u) {
      std::complex<double> acc = 0.0;
      for (std::int64_t r = 0; r < H; ++r) {
        double ang = -2.0 * 3.14159265358979323846 * v * r / H;
        acc += rows_dft[static_cast<std::size_t>(r * W + u)] *
               std::complex<double>(std::cos(ang), std::sin(ang));
      }
      if (u == 0 && v == 0) continue;  // DC excluded
      double e = std::norm(acc);
      total += e;
      if (u == W / 2 || v == H / 2) lattice += e;
    }
  // below numerical noise there is no structure to attribute
  return total > 1e-12 ? lattice / total : 0.0;
}

std::vector<GtInstance> square_gt(int cls, int r0, int c0, int size, int img) {
  GtInstance gt;
  gt.class_id = cls;
  voxelio::BinaryMask m;
  m.rows = m.cols = img;
  m.pixels.assign(static_cast<std::size_t>(img) * img, 0);
  for (int r = r0; r < r0 + size; ++r)
    for (int c = c0; c < c0 + size; ++c) m.at(r, c) = 1;
  gt.mask = m;
  auto res = voxelio::compute_instance_bbox(m, cls, 0);
  gt.box = res.record->bbox;
  return {gt};
}

}  // namespace

TEST_CASE("generator shape contracts") {
  Rng rng(1);

  SUBCASE("desk scale 64x64") {
    UNet gen(desk_generator_spec(), rng);
    Graph g;
    Node* out = gen.forward(g, g.input(Tensor::zeros({1, 1, 64, 64})));
    CHECK(out->val().shape() == std::vector<std::int64_t>{1, 1, 64, 64});
    for (std::int64_t i = 0; i < out->val().numel(); ++i) {
      CHECK(out->val()[i] >= -1.0);
      CHECK(out->val()[i] <= 1.0);
    }
  }

  SUBCASE("default spec encoder channels are 64,128,256") {
    NetworkSpec s;
    s.kind = NetworkKind::generator;
    UNet gen(s, rng);
    CHECK(gen.encoder_channels() == std::vector<int>{64, 128, 256});
  }

  SUBCASE("paper-scale 256x256 input maps to 256x256 output") {
    NetworkSpec s = desk_generator_spec(4);  // thin net, the claim is spatial
    UNet gen(s, rng);
    Graph g;
    Node* out = gen.forward(g, g.input(Tensor::zeros({1, 1, 256, 256})));
    CHECK(out->val().shape() == std::vector<std::int64_t>{1, 1, 256, 256});
  }

  SUBCASE("input not divisible by 2^depth is rejected") {
    UNet gen(desk_generator_spec(), rng);
    Graph g;
    CHECK_THROWS(gen.forward(g, g.input(Tensor::zeros({1, 1, 60, 60}))));
  }

  SUBCASE("spatial dims preserved for random divisible sizes") {
    UNet gen(desk_generator_spec(4), rng);
    for (std::int64_t size : {16, 24, 40, 72}) {
      Graph g;
      Node* out = gen.forward(g, g.input(Tensor::zeros({1, 1, size, size})));
      CHECK(out->val().dim(2) == size);
      CHECK(out->val().dim(3) == size);
    }
  }
}

TEST_CASE("no checkerboard at initialization") {
  // Constant input through a fresh generator: stride-lattice spectral energy
  // must stay below 1e-3 of total non-DC energy.
  for (int init = 0; init < 20; ++init) {
    Rng rng(1000 + static_cast<std::uint64_t>(init));
    UNet gen(desk_generator_spec(6), rng);
    Graph g;
    Node* out = gen.forward(g, g.input(Tensor::full({1, 1, 64, 64}, 0.37)));
    Tensor img = out->val().reshaped({64, 64});
    CHECK(nyquist_energy_fraction(img) <= 1e-3);
  }
}

TEST_CASE("discriminator is a patch critic") {
  Rng rng(2);
  NetworkSpec s;
  s.kind = NetworkKind::discriminator;
  s.base_channels = 8;

  SUBCASE("score map has spatial extent > 1 (receptive-field arithmetic)") {
    PatchDiscriminator d(s, rng);
    Graph g;
    Node* out = d.forward_raw(g, g.input(Tensor::zeros({1, 1, 64, 64})));
    // depth-3 stride-2 stack: 64 / 2^3 = 8 cells per side
    CHECK(out->val().shape() == std::vector<std::int64_t>{1, 1, 8, 8});
    CHECK(out->val().dim(2) > 1);
  }

  SUBCASE("sigmoid head bounds outputs to (0,1)") {
    PatchDiscriminator d(s, rng);
    Graph g;
    Rng noise(5);
    Node* out = d.forward_prob(g, g.input(oar::test::random_tensor({1, 1, 32, 32}, noise)));
    for (std::int64_t i = 0; i < out->val().numel(); ++i) {
      CHECK(out->val()[i] > 0.0);
      CHECK(out->val()[i] < 1.0);
    }
  }

  SUBCASE("translation by the patch stride shifts the interior score map") {
    NetworkSpec plain = s;
    plain.norm = NormMode::none;  // normalization is global, not translation-local
    PatchDiscriminator d(plain, rng);
    Rng noise(7);
    Tensor base = oar::test::random_tensor({1, 1, 64, 64}, noise);
    Tensor shifted = Tensor::zeros({1, 1, 64, 64});
    for (std::int64_t r = 0; r < 64; ++r)
      for (std::int64_t c = 8; c < 64; ++c) shifted.at4(0, 0, r, c) = base.at4(0, 0, r, c - 8);
    Graph g;
    const Tensor& a = d.forward_raw(g, g.input(base))->val();
    const Tensor& b = d.forward_raw(g, g.input(shifted))->val();
    // interior cells far from the borders: map_b[r][c] == map_a[r][c-1]
    for (std::int64_t r = 3; r <= 4; ++r)
      for (std::int64_t c = 3; c <= 4; ++c)
        CHECK(b.at4(0, 0, r, c) == doctest::Approx(a.at4(0, 0, r, c - 1)).epsilon(1e-9));
  }
}

TEST_CASE("segmentation subnetwork shape contracts") {
  Rng rng(3);
  NetworkSpec s;
  s.kind = NetworkKind::seg_subnet;
  s.in_channels = 2;
  s.out_channels = 11;
  s.base_channels = 8;
  UNet net(s, rng);
  Graph g;
  Rng noise(9);
  Node* out = net.forward(g, g.input(oar::test::random_tensor({1, 2, 64, 64}, noise)));
  CHECK(out->val().shape() == std::vector<std::int64_t>{1, 11, 64, 64});
  CHECK(nn::all_finite(out->val()));

  NetworkSpec ct_only = s;
  ct_only.in_channels = 1;
  UNet baseline(ct_only, rng);
  Graph g2;
  Node* out2 = baseline.forward(g2, g2.input(Tensor::zeros({1, 1, 32, 32})));
  CHECK(out2->val().dim(1) == 11);
}

TEST_CASE("fuse_inputs") {
  Tensor ct = Tensor::full({64, 64}, 0.1);
  Tensor mr = Tensor::full({64, 64}, 0.9);

  SUBCASE("input fusion concatenates along channels") {
    auto fused = fuse_inputs(ct, mr, FusionScheme::input);
    CHECK(fused.primary.shape() == std::vector<std::int64_t>{1, 2, 64, 64});
    CHECK(fused.primary.at4(0, 0, 5, 5) == doctest::Approx(0.1));
    CHECK(fused.primary.at4(0, 1, 5, 5) == doctest::Approx(0.9));
  }

  SUBCASE("feature fusion keeps both branches") {
    auto fused = fuse_inputs(ct, mr, FusionScheme::feature);
    CHECK(fused.primary.shape() == std::vector<std::int64_t>{1, 1, 64, 64});
    CHECK(fused.secondary.shape() == std::vector<std::int64_t>{1, 1, 64, 64});
  }

  SUBCASE("degenerate duplication is fine; shape mismatch is not") {
    auto fused = fuse_inputs(ct, ct, FusionScheme::input);
    CHECK(fused.primary.dim(1) == 2);
    CHECK_THROWS(fuse_inputs(ct, Tensor::zeros({32, 32}), FusionScheme::input));
  }
}

TEST_CASE("box encode/decode round-trip and IoU oracle") {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    Box anchor{rng.uniform(0, 20), rng.uniform(0, 20), 0, 0};
    anchor.x1 = anchor.x0 + rng.uniform(4, 20);
    anchor.y1 = anchor.y0 + rng.uniform(4, 20);
    Box target{rng.uniform(0, 20), rng.uniform(0, 20), 0, 0};
    target.x1 = target.x0 + rng.uniform(4, 20);
    target.y1 = target.y0 + rng.uniform(4, 20);
    auto enc = encode_box(anchor, target);
    Box dec = decode_box(anchor, enc[0], enc[1], enc[2], enc[3]);
    CHECK(dec.x0 == doctest::Approx(target.x0).epsilon(1e-9));
    CHECK(dec.y1 == doctest::Approx(target.y1).epsilon(1e-9));
  }

  // IoU against a pixel-counting oracle on integer boxes
  for (int trial = 0; trial < 50; ++trial) {
    Box a{double(rng.uniform_int(0, 20)), double(rng.uniform_int(0, 20)), 0, 0};
    a.x1 = a.x0 + rng.uniform_int(1, 12);
    a.y1 = a.y0 + rng.uniform_int(1, 12);
    Box b{double(rng.uniform_int(0, 20)), double(rng.uniform_int(0, 20)), 0, 0};
    b.x1 = b.x0 + rng.uniform_int(1, 12);
    b.y1 = b.y0 + rng.uniform_int(1, 12);
    std::int64_t inter = 0, uni = 0;
    for (int y = 0; y < 40; ++y)
      for (int x = 0; x < 40; ++x) {
        bool in_a = x >= a.x0 && x < a.x1 && y >= a.y0 && y < a.y1;
        bool in_b = x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1;
        inter += in_a && in_b;
        uni += in_a || in_b;
      }
    double want = uni > 0 ? static_cast<double>(inter) / uni : 0.0;
    CHECK(voxelio::iou(a, b) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("sample_rois") {
  auto gts = square_gt(3, 20, 20, 12, 64);
  const Box& gt_box = gts[0].box;

  auto jitter = [&](double d) {
    return Box{gt_box.x0 + d, gt_box.y0, gt_box.x1 + d, gt_box.y1};
  };

  SUBCASE("abundant positives: exactly 64 positives, 192 negatives") {
    std::vector<Box> proposals;
    for (int i = 0; i < 100; ++i) proposals.push_back(jitter(i * 0.01));
    for (int i = 0; i < 400; ++i)
      proposals.push_back(Box{1.0 + (i % 7), 1.0 + (i % 5), 8.0 + (i % 7), 8.0 + (i % 5)});
    Rng rng(1);
    auto batch = sample_rois(proposals, gts, 0.25, 0.5, 256, rng);
    CHECK(batch.rois.size() == 256);
    CHECK(batch.num_positive() == 64);
  }

  SUBCASE("scarce positives: negatives fill the remainder") {
    std::vector<Box> proposals;
    for (int i = 0; i < 10; ++i) proposals.push_back(jitter(i * 0.01));
    for (int i = 0; i < 400; ++i)
      proposals.push_back(Box{1.0 + (i % 7), 1.0 + (i % 5), 8.0 + (i % 7), 8.0 + (i % 5)});
    Rng rng(2);
    auto batch = sample_rois(proposals, gts, 0.25, 0.5, 256, rng);
    CHECK(batch.rois.size() == 256);
    CHECK(batch.num_positive() == 10);
  }

  SUBCASE("deterministic under the seed") {
    std::vector<Box> proposals;
    for (int i = 0; i < 300; ++i)
      proposals.push_back(jitter(static_cast<double>(i % 30)));
    Rng r1(7), r2(7);
    auto a = sample_rois(proposals, gts, 0.25, 0.5, 64, r1);
    auto b = sample_rois(proposals, gts, 0.25, 0.5, 64, r2);
    REQUIRE(a.rois.size() == b.rois.size());
    for (std::size_t i = 0; i < a.rois.size(); ++i) {
      CHECK(a.rois[i].x0 == b.rois[i].x0);
      CHECK(a.labels[i] == b.labels[i]);
    }
  }

  SUBCASE("no proposals -> empty batch with warning") {
    Rng rng(3);
    std::vector<std::string> warnings;
    auto batch = sample_rois({}, gts, 0.25, 0.5, 256, rng, &warnings);
    CHECK(batch.rois.empty());
    CHECK(!warnings.empty());
  }
}

TEST_CASE("mask loss decouples classes") {
  const int R = 3, C = 5, S = 8;

  SUBCASE("perfect GT-channel logits ignore garbage in other channels") {
    Tensor logits({R, C, S, S});
    std::vector<int> classes = {2, 0, 4};
    std::vector<bool> positive = {true, false, true};
    std::vector<Tensor> targets(R);
    Rng rng(5);
    for (int r = 0; r < R; ++r) {
      targets[static_cast<std::size_t>(r)] = Tensor({S, S});
      for (int i = 0; i < S * S; ++i)
        targets[static_cast<std::size_t>(r)][i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    }
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < S * S; ++i) {
          bool is_gt = classes[static_cast<std::size_t>(r)] - 1 == c;
          double t = targets[static_cast<std::size_t>(r)][i];
          logits[(static_cast<std::int64_t>(r) * C + c) * S * S + i] =
              is_gt ? (t > 0.5 ? 60.0 : -60.0) : rng.normal(0.0, 5.0);
        }
    Graph g;
    Node* loss = mask_loss_for_rois(g, g.leaf_with_grad(logits), classes, positive, targets);
    CHECK(loss->val()[0] < 1e-12);
  }

  SUBCASE("all-background batch -> zero loss") {
    Tensor logits({2, C, S, S});
    Graph g;
    Node* loss = mask_loss_for_rois(g, g.input(logits), {0, 0}, {false, false}, {});
    CHECK(loss->val()[0] == 0.0);
  }

  SUBCASE("uniform 0.5 prediction -> ln 2") {
    Tensor logits({1, C, S, S});  // zeros -> sigmoid 0.5
    Tensor target({S, S});
    for (int i = 0; i < S * S; i += 2) target[i] = 1.0;
    Graph g;
    Node* loss = mask_loss_for_rois(g, g.input(logits), {1}, {true}, {target});
    CHECK(loss->val()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }

  SUBCASE("zero gradient to non-GT channels, numerically") {
    Rng rng(11);
    Tensor logits = oar::test::random_tensor({2, C, S, S}, rng);
    std::vector<int> classes = {3, 1};
    std::vector<bool> positive = {true, true};
    std::vector<Tensor> targets(2, Tensor({S, S}));
    Graph g;
    Node* leaf = g.leaf_with_grad(logits);
    Node* loss = mask_loss_for_rois(g, leaf, classes, positive, targets);
    g.backward(loss);
    const Tensor& grad = leaf->grad();
    double max_other = 0.0, max_gt = 0.0;
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < C; ++c) {
        bool is_gt = classes[static_cast<std::size_t>(r)] - 1 == c;
        for (int i = 0; i < S * S; ++i) {
          double v = std::abs(grad[(static_cast<std::int64_t>(r) * C + c) * S * S + i]);
          if (is_gt)
            max_gt = std::max(max_gt, v);
          else
            max_other = std::max(max_other, v);
        }
      }
    CHECK(max_other <= 1e-12);
    CHECK(max_gt > 0.0);
  }

  SUBCASE("positive ROI without a target is an error") {
    Tensor logits({1, C, S, S});
    Graph g;
    CHECK_THROWS(mask_loss_for_rois(g, g.input(logits), {2}, {true}, {}));
  }

  SUBCASE("gradient on the GT channel matches finite differences") {
    Rng rng(21);
    std::vector<int> classes = {2};
    std::vector<bool> positive = {true};
    std::vector<Tensor> targets = {Tensor({S, S})};
    for (int i = 0; i < S * S; i += 3) targets[0][i] = 1.0;
    Tensor logits0 = oar::test::random_tensor({1, C, S, S}, rng);
    auto r = oar::test::grad_check(
        [&](Graph& g, Node* leaf) {
          return mask_loss_for_rois(g, leaf, classes, positive, targets);
        },
        logits0);
    CHECK(r.max_rel_err < 1e-6);
  }
}

TEST_CASE("instance segmentor end-to-end shapes and a tiny training smoke") {
  DetectorConfig cfg;
  cfg.num_classes = 5;
  cfg.base_channels = 8;
  cfg.roi_batch = 32;
  cfg.rpn_batch = 32;
  cfg.head_width = 64;
  cfg.mask_channels = 12;
  Rng init(41);
  InstanceSegmentor det(cfg, init);

  // image with one bright 12x12 square of class 2
  auto gts = square_gt(2, 24, 28, 12, 64);
  Tensor img = Tensor::full({64, 64}, -0.5);
  for (int r = 24; r < 36; ++r)
    for (int c = 28; c < 40; ++c) img.at2(r, c) = 0.8;
  FusedInput input = ct_only_input(img);

  SUBCASE("training losses are finite and ROI counts respect the ratio") {
    Graph g;
    Rng sample(5);
    std::vector<std::string> warnings;
    auto losses = det.training_losses(g, input, gts, sample, &warnings);
    CHECK(std::isfinite(losses.total->val()[0]));
    CHECK(losses.sampled_pos >= 1);
    CHECK(losses.sampled_pos <= cfg.roi_batch / 4);
  }

  SUBCASE("a few SGD steps reduce the loss and yield an overlapping proposal") {
    nn::SgdMomentum opt(det.params(), 0.002, 0.9);
    Rng sample(6);
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 60; ++step) {
      Graph g;
      auto losses = det.training_losses(g, input, gts, sample);
      if (step == 0) first = losses.total->val()[0];
      last = losses.total->val()[0];
      opt.zero_grad();
      g.backward(losses.total);
      opt.step();
    }
    CHECK(last < first);

    auto proposals = det.propose(input);
    bool overlapping = false;
    for (const auto& p : proposals)
      if (voxelio::iou(p, gts[0].box) >= 0.5) overlapping = true;
    CHECK(overlapping);

    auto dets = det.infer(input);
    for (const auto& d : dets) {
      CHECK(d.mask.shape() == std::vector<std::int64_t>{28, 28});
      CHECK(d.score >= 0.0);
      CHECK(d.score <= 1.0);
    }
  }

  SUBCASE("fusion variants produce identically-shaped predictions") {
    DetectorConfig ci = cfg;
    ci.fusion = FusionScheme::input;
    DetectorConfig cf = cfg;
    cf.fusion = FusionScheme::feature;
    Rng r1(1), r2(2);
    InstanceSegmentor det_i(ci, r1);
    InstanceSegmentor det_f(cf, r2);
    Tensor mr = Tensor::full({64, 64}, 0.2);
    auto fused_i = fuse_inputs(img, mr, FusionScheme::input);
    auto fused_f = fuse_inputs(img, mr, FusionScheme::feature);
    Graph g1, g2;
    Rng s1(3), s2(3);
    auto li = det_i.training_losses(g1, fused_i, gts, s1);
    auto lf = det_f.training_losses(g2, fused_f, gts, s2);
    CHECK(std::isfinite(li.total->val()[0]));
    CHECK(std::isfinite(lf.total->val()[0]));
    auto di = det_i.infer(fused_i);
    auto df = det_f.infer(fused_f);
    for (const auto& d : di) CHECK(d.mask.numel() == 28 * 28);
    for (const auto& d : df) CHECK(d.mask.numel() == 28 * 28);
  }
}

TEST_CASE("mask target resampling and pasting") {
  voxelio::BinaryMask gt;
  gt.rows = gt.cols = 64;
  gt.pixels.assign(64 * 64, 0);
  for (int r = 20; r < 30; ++r)
    for (int c = 20; c < 30; ++c) gt.at(r, c) = 1;

  Box roi{20, 20, 30, 30};
  Tensor target = mask_target_for_roi(gt, roi, 28);
  // roi exactly covers the square -> everything foreground
  double frac = 0.0;
  for (std::int64_t i = 0; i < target.numel(); ++i) frac += target[i];
  frac /= static_cast<double>(target.numel());
  CHECK(frac > 0.9);

  Detection det;
  det.class_id = 1;
  det.score = 1.0;
  det.box = roi;
  det.mask = Tensor::full({28, 28}, 0.9);
  auto pasted = paste_detection_mask(det, 64, 64);
  CHECK(voxelio::mask_area(pasted) >= 90);
  CHECK(pasted.at(25, 25) == 1);
  CHECK(pasted.at(5, 5) == 0);
}

TEST_CASE("params save/load and hashing") {
  Rng rng(51);
  UNet a(desk_generator_spec(4), rng);
  auto path = std::filesystem::temp_directory_path() / "oar_net_ckpt.bin";
  std::uint64_t h0 = params_hash(a.params());
  save_params(path, {{"kind", "generator"}}, a.params(), nn::BlobDtype::f64);

  // perturb, then restore
  for (nn::Param* p : a.params())
    for (std::int64_t i = 0; i < p->value.numel(); ++i) p->value[i] += 0.125;
  CHECK(params_hash(a.params()) != h0);

  auto ckpt = nn::load_checkpoint(path);
  CHECK(ckpt.meta["kind"] == "generator");
  load_params(ckpt, a.params());
  CHECK(params_hash(a.params()) == h0);
  std::filesystem::remove(path);
}

TEST_CASE("network spec round-trips through JSON") {
  NetworkSpec s;
  s.kind = NetworkKind::seg_subnet;
  s.in_channels = 2;
  s.out_channels = 11;
  s.base_channels = 16;
  auto j = s.to_json();
  auto back = NetworkSpec::from_json(j);
  CHECK(back.kind == NetworkKind::seg_subnet);
  CHECK(back.in_channels == 2);
  CHECK(back.out_channels == 11);
  CHECK(back.base_channels == 16);
}

TEST_CASE("gradients flow through the full UNet") {
  Rng rng(61);
  NetworkSpec s;
  s.kind = NetworkKind::seg_subnet;
  s.in_channels = 1;
  s.out_channels = 3;
  s.base_channels = 2;
  s.depth = 2;
  UNet net(s, rng);
  Tensor labels({1, 8, 8});
  for (std::int64_t i = 0; i < 64; ++i) labels[i] = static_cast<double>(i % 3);
  Tensor x0 = oar::test::random_tensor({1, 1, 8, 8}, rng);
  auto r = oar::test::grad_check(
      [&](Graph& g, Node* leaf) {
        Node* logits = net.forward(g, leaf);
        return losses::weighted_cross_entropy(g, logits, labels,
                                              losses::ClassWeights::uniform(3));
      },
      x0, 1e-5);
  CHECK(r.max_rel_err < 1e-4);
}
