#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oar/nn/checkpoint.hpp"
#include "oar/nn/graph.hpp"
#include "oar/nn/ops.hpp"
#include "oar/nn/optim.hpp"
#include "support/gradcheck.hpp"

using namespace oar;
using namespace oar::nn;
using oar::test::grad_check;
using oar::test::random_tensor;

TEST_CASE("conv2d forward matches direct summation") {
  Rng rng(11);
  Tensor x = random_tensor({1, 2, 5, 5}, rng);
  Tensor w = random_tensor({3, 2, 3, 3}, rng);
  Tensor b = random_tensor({3}, rng);
  Graph g;
  Node* out = conv2d(g, g.input(x), g.input(w), g.input(b), 1, 1);
  REQUIRE(out->val().shape() == std::vector<std::int64_t>{1, 3, 5, 5});

  // direct dense loop
  for (int k = 0; k < 3; ++k)
    for (int oy = 0; oy < 5; ++oy)
      for (int ox = 0; ox < 5; ++ox) {
        double acc = b[k];
        for (int c = 0; c < 2; ++c)
          for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
              int sy = oy - 1 + i, sx = ox - 1 + j;
              if (sy < 0 || sy >= 5 || sx < 0 || sx >= 5) continue;
              acc += x.at4(0, c, sy, sx) * w.at4(k, c, i, j);
            }
        CHECK(out->val().at4(0, k, oy, ox) == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("conv2d stride-2 output size") {
  Rng rng(3);
  Tensor x = random_tensor({1, 1, 8, 8}, rng);
  Tensor w = random_tensor({4, 1, 3, 3}, rng);
  Graph g;
  Node* out = conv2d(g, g.input(x), g.input(w), nullptr, 2, 1);
  CHECK(out->val().shape() == std::vector<std::int64_t>{1, 4, 4, 4});
}

TEST_CASE("gradient checks for primitive ops") {
  Rng rng(29);

  SUBCASE("conv2d wrt input") {
    Tensor w = random_tensor({2, 2, 3, 3}, rng, 0.5);
    Tensor b = random_tensor({2}, rng, 0.5);
    Tensor x0 = random_tensor({1, 2, 6, 6}, rng);
    auto r = grad_check(
        [&](Graph& g, Node* leaf) {
          Node* out = conv2d(g, leaf, g.input(w), g.input(b), 2, 1);
          return mean_all(g, mul(g, out, out));
        },
        x0);
    CHECK(r.max_rel_err < 1e-6);
  }

  SUBCASE("conv2d wrt weights") {
    Tensor x = random_tensor({2, 2, 5, 5}, rng);
    Tensor w0 = random_tensor({3, 2, 3, 3}, rng, 0.5);
    auto r = grad_check(
        [&](Graph& g, Node* leaf) {
          Node* out = conv2d(g, g.input(x), leaf, nullptr, 1, 1);
          return mean_all(g, mul(g, out, out));
        },
        w0);
    CHECK(r.max_rel_err < 1e-6);
  }

  SUBCASE("fc wrt both") {
    Tensor x0 = random_tensor({3, 4}, rng);
    Tensor w = random_tensor({5, 4}, rng, 0.5);
    Tensor b = random_tensor({5}, rng, 0.5);
    auto rx = grad_check(
        [&](Graph& g, Node* leaf) {
          Node* out = fc(g, leaf, g.input(w), g.input(b));
          return mean_all(g, mul(g, out, out));
        },
        x0);
    CHECK(rx.max_rel_err < 1e-6);
    auto rw = grad_check(
        [&](Graph& g, Node* leaf) {
          Node* out = fc(g, g.input(x0), leaf, g.input(b));
          return mean_all(g, mul(g, out, out));
        },
        w);
    CHECK(rw.max_rel_err < 1e-6);
  }

  SUBCASE("instance_norm wrt input and affine") {
    Tensor x0 = random_tensor({2, 3, 4, 4}, rng);
    Tensor gamma = random_tensor({3}, rng, 0.5);
    Tensor beta = random_tensor({3}, rng, 0.5);
    auto rx = grad_check(
        [&](Graph& g, Node* leaf) {
          Node* out = instance_norm(g, leaf, g.input(gamma), g.input(beta));
          return mean_all(g, mul(g, out, out));
        },
        x0, 1e-5);
    CHECK(rx.max_rel_err < 1e-4);
    auto rg = grad_check(
        [&](Graph& g, Node* leaf) {
          Node* out = instance_norm(g, g.input(x0), leaf, g.input(beta));
          return mean_all(g, mul(g, out, out));
        },
        gamma);
    CHECK(rg.max_rel_err < 1e-6);
  }

  SUBCASE("activations") {
    Tensor x0 = random_tensor({1, 2, 3, 3}, rng);
    for (auto act : {0, 1, 2}) {
      auto r = grad_check(
          [&](Graph& g, Node* leaf) {
            Node* out = act == 0   ? leaky_relu(g, leaf)
                        : act == 1 ? tanh_act(g, leaf)
                                   : sigmoid_act(g, leaf);
            return mean_all(g, mul(g, out, out));
          },
          x0);
      CHECK(r.max_rel_err < 1e-5);
    }
  }

  SUBCASE("nearest upsample and concat") {
    Tensor x0 = random_tensor({1, 2, 3, 3}, rng);
    Tensor other = random_tensor({1, 1, 6, 6}, rng);
    auto r = grad_check(
        [&](Graph& g, Node* leaf) {
          Node* up = nearest_upsample2x(g, leaf);
          Node* cat = concat_channels(g, up, g.input(other));
          return mean_all(g, mul(g, cat, cat));
        },
        x0);
    CHECK(r.max_rel_err < 1e-6);
  }

  SUBCASE("roi_align") {
    Tensor x0 = random_tensor({1, 2, 8, 8}, rng);
    std::vector<Roi> rois = {{0, 4.0, 2.0, 20.0, 18.0}, {0, 0.0, 0.0, 30.0, 30.0}};
    auto r = grad_check(
        [&](Graph& g, Node* leaf) {
          Node* out = roi_align(g, leaf, rois, 4, 0.25, 2);
          return mean_all(g, mul(g, out, out));
        },
        x0);
    CHECK(r.max_rel_err < 1e-5);
  }
}

TEST_CASE("nearest upsample duplicates pixels") {
  Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  Graph g;
  Node* up = nearest_upsample2x(g, g.input(x));
  CHECK(up->val().at4(0, 0, 0, 0) == 1);
  CHECK(up->val().at4(0, 0, 0, 1) == 1);
  CHECK(up->val().at4(0, 0, 1, 0) == 1);
  CHECK(up->val().at4(0, 0, 2, 3) == 4);
  CHECK(up->val().at4(0, 0, 3, 3) == 4);
}

TEST_CASE("roi_align pools a constant region to the constant") {
  Tensor x = Tensor::full({1, 1, 8, 8}, 3.5);
  Graph g;
  std::vector<Roi> rois = {{0, 8.0, 8.0, 24.0, 24.0}};
  Node* out = roi_align(g, g.input(x), rois, 2, 0.25, 2);
  for (std::int64_t i = 0; i < out->val().numel(); ++i)
    CHECK(out->val()[i] == doctest::Approx(3.5).epsilon(1e-12));
}

TEST_CASE("bilinear and nearest resize basics") {
  Tensor img = Tensor::from({2, 2}, {0.0, 1.0, 2.0, 3.0});
  Tensor up = bilinear_resize(img, 4, 4);
  CHECK(up.dim(0) == 4);
  CHECK(up.at2(0, 0) == doctest::Approx(0.0));
  CHECK(up.at2(3, 3) == doctest::Approx(3.0));
  Tensor same = bilinear_resize(img, 2, 2);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(same[i] == doctest::Approx(img[i]));

  Tensor nn_up = nearest_resize(img, 4, 4);
  CHECK(nn_up.at2(0, 0) == 0.0);
  CHECK(nn_up.at2(0, 3) == 1.0);
  CHECK(nn_up.at2(3, 0) == 2.0);
}

TEST_CASE("flip_horizontal is an involution") {
  Rng rng(5);
  Tensor img = random_tensor({3, 4, 5}, rng);
  Tensor twice = flip_horizontal(flip_horizontal(img));
  for (std::int64_t i = 0; i < img.numel(); ++i) CHECK(twice[i] == img[i]);
}

TEST_CASE("Adam minimizes a quadratic") {
  Param p("p", Tensor::from({2}, {5.0, -3.0}));
  Adam opt({&p}, 0.1, 0.9, 0.999);
  for (int i = 0; i < 500; ++i) {
    opt.zero_grad();
    for (int j = 0; j < 2; ++j) p.grad[j] = 2.0 * p.value[j];
    opt.step();
  }
  CHECK(std::abs(p.value[0]) < 1e-2);
  CHECK(std::abs(p.value[1]) < 1e-2);
}

TEST_CASE("SGD momentum matches hand-computed updates") {
  Param p("p", Tensor::from({1}, {1.0}));
  SgdMomentum opt({&p}, 0.1, 0.9);
  // grad is constantly 1: v1 = 1, x1 = 1 - 0.1; v2 = 1.9, x2 = x1 - 0.19
  p.grad[0] = 1.0;
  opt.step();
  CHECK(p.value[0] == doctest::Approx(0.9).epsilon(1e-12));
  p.grad[0] = 1.0;
  opt.step();
  CHECK(p.value[0] == doctest::Approx(0.9 - 0.19).epsilon(1e-12));
}

TEST_CASE("checkpoint round-trips f64 exactly and f32 approximately") {
  Rng rng(77);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({7}, rng);
  nlohmann::json meta = {{"kind", "test"}, {"step", 42}};
  auto path64 = std::filesystem::temp_directory_path() / "oar_ckpt_test64.bin";
  auto path32 = std::filesystem::temp_directory_path() / "oar_ckpt_test32.bin";

  save_checkpoint(path64, meta, {{"a", &a}, {"b", &b}}, BlobDtype::f64);
  Checkpoint c64 = load_checkpoint(path64);
  CHECK(c64.meta["kind"] == "test");
  for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(c64.require("a")[i] == a[i]);
  for (std::int64_t i = 0; i < b.numel(); ++i) CHECK(c64.require("b")[i] == b[i]);

  save_checkpoint(path32, meta, {{"a", &a}}, BlobDtype::f32);
  Checkpoint c32 = load_checkpoint(path32);
  for (std::int64_t i = 0; i < a.numel(); ++i)
    CHECK(c32.require("a")[i] == doctest::Approx(a[i]).epsilon(1e-6));

  std::filesystem::remove(path64);
  std::filesystem::remove(path32);
}

TEST_CASE("graph backward accumulates into shared parameters") {
  Param w("w", Tensor::from({1}, {2.0}));
  Graph g;
  Node* wn = g.param(w);
  Node* x = g.input(Tensor::scalar(3.0));
  Node* y = mul(g, wn, x);        // y = 6
  Node* z = mul(g, y, wn);        // z = w^2 * x = 12, dz/dw = 2*w*x = 12
  g.backward(z);
  CHECK(w.grad[0] == doctest::Approx(12.0).epsilon(1e-12));
}

TEST_CASE("rng child streams are deterministic and serializable") {
  Rng a(123);
  Rng b(123);
  for (int i = 0; i < 10; ++i) CHECK(a.uniform() == b.uniform());
  std::string state = a.serialize();
  double next = a.uniform();
  Rng c;
  c.deserialize(state);
  CHECK(c.uniform() == next);
  CHECK(a.child(7).uniform() != a.child(8).uniform());
}
