#include <doctest.h>

#include <cmath>
#include <functional>

#include "arcgen/nn.hpp"
#include "arcgen/rng.hpp"

using namespace arcgen;
using namespace arcgen::nn;

namespace {

Tensor random_tensor(std::vector<int> dims, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(dims));
  for (auto& v : t.v) v = rng.normal(0.0, scale);
  return t;
}

// Scalar objective L = sum_i c_i * layer(x)_i with fixed random c. Checks
// d L / d x and d L / d params against central finite differences. make_rng
// returns the rng passed to forward so stochastic layers can replay the same
// masks on every call.
void check_layer_gradients(Layer& layer, Tensor x, bool train,
                           std::function<Rng()> make_rng, double h = 1e-6,
                           double tol = 1e-5) {
  Rng crng(1234);
  Rng fwd0 = make_rng();
  Tensor y0 = layer.forward(x, train, &fwd0);
  std::vector<double> c(y0.v.size());
  for (auto& v : c) v = crng.normal();

  auto objective = [&](const Tensor& in) {
    Rng r = make_rng();
    Tensor y = layer.forward(in, train, &r);
    double acc = 0;
    for (size_t i = 0; i < y.v.size(); ++i) acc += c[i] * y.v[i];
    return acc;
  };

  // analytic gradients
  for (Param* p : layer.params()) std::fill(p->grad.begin(), p->grad.end(), 0.0);
  {
    Rng r = make_rng();
    layer.forward(x, train, &r);
  }
  Tensor gy(y0.dims);
  gy.v = c;
  Tensor gx = layer.backward(gy);

  for (size_t k = 0; k < x.v.size(); ++k) {
    Tensor xp = x, xm = x;
    xp.v[k] += h;
    xm.v[k] -= h;
    double fd = (objective(xp) - objective(xm)) / (2 * h);
    CHECK(gx.v[k] == doctest::Approx(fd).epsilon(tol).scale(1.0));
  }
  for (Param* p : layer.params()) {
    if (!p->trainable) continue;
    for (size_t k = 0; k < p->value.size(); ++k) {
      double saved = p->value[k];
      p->value[k] = saved + h;
      double fp = objective(x);
      p->value[k] = saved - h;
      double fm = objective(x);
      p->value[k] = saved;
      double fd = (fp - fm) / (2 * h);
      CHECK(p->grad[k] == doctest::Approx(fd).epsilon(tol).scale(1.0));
    }
  }
}

std::function<Rng()> no_rng() {
  return [] { return Rng(0); };
}

}  // namespace

TEST_CASE("dense gradients match finite differences") {
  Rng rng(1);
  Dense layer(5, 4);
  kaiming_init(layer.weight(), 5, rng);
  check_layer_gradients(layer, random_tensor({3, 5}, rng), false, no_rng());
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(2);
  Conv2D layer(2, 3, 3, 1);
  kaiming_init(*layer.params()[0], 18, rng);
  check_layer_gradients(layer, random_tensor({2, 5, 4, 2}, rng), false, no_rng());
}

TEST_CASE("conv2d 1x1 (pointwise) gradients match finite differences") {
  Rng rng(3);
  Conv2D layer(3, 2, 1, 0);
  kaiming_init(*layer.params()[0], 3, rng);
  check_layer_gradients(layer, random_tensor({2, 3, 3, 3}, rng), false, no_rng());
}

TEST_CASE("depthwise conv gradients match finite differences") {
  Rng rng(4);
  DepthwiseConv2D layer(3, 3, 1);
  kaiming_init(*layer.params()[0], 9, rng);
  check_layer_gradients(layer, random_tensor({2, 4, 4, 3}, rng), false, no_rng());
}

TEST_CASE("maxpool gradients match finite differences") {
  Rng rng(5);
  MaxPool2D layer(2);
  // distinct values keep the argmax stable under the probe step
  Tensor x({2, 4, 4, 2});
  for (size_t i = 0; i < x.v.size(); ++i)
    x.v[i] = static_cast<double>((i * 37) % 64) + 0.01 * rng.uniform();
  check_layer_gradients(layer, x, false, no_rng());
}

TEST_CASE("relu gradients match finite differences away from the kink") {
  Rng rng(6);
  ReLU layer;
  Tensor x = random_tensor({3, 7}, rng);
  for (auto& v : x.v)
    if (std::abs(v) < 1e-3) v = 0.5;  // step over the nondifferentiable point
  check_layer_gradients(layer, x, false, no_rng());
}

TEST_CASE("batchnorm gradients match finite differences (train and eval)") {
  Rng rng(7);
  BatchNorm layer(3);
  // nudge the affine parameters off their init
  auto params = layer.params();
  for (auto& v : params[0]->value) v = 1.3;
  for (auto& v : params[1]->value) v = -0.2;
  check_layer_gradients(layer, random_tensor({4, 3, 2, 3}, rng), true, no_rng(), 1e-6,
                        1e-4);
  for (auto& v : params[2]->value) v = 0.1;
  for (auto& v : params[3]->value) v = 1.7;
  check_layer_gradients(layer, random_tensor({4, 3, 2, 3}, rng), false, no_rng());
}

TEST_CASE("dropout gradients match finite differences with replayed masks") {
  Rng rng(8);
  Dropout layer(0.5);
  check_layer_gradients(layer, random_tensor({3, 10}, rng), true,
                        [] { return Rng(99); });
  // eval mode is the identity
  Tensor x = random_tensor({2, 4}, rng);
  Tensor y = layer.forward(x, false, nullptr);
  CHECK(y.v == x.v);
}

TEST_CASE("softmax gradients match finite differences and rows sum to one") {
  Rng rng(9);
  Softmax layer;
  Tensor x = random_tensor({3, 6}, rng);
  Tensor y = layer.forward(x, false, nullptr);
  for (int i = 0; i < 3; ++i) {
    double sum = 0;
    for (int j = 0; j < 6; ++j) sum += y.row(i)[j];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  check_layer_gradients(layer, x, false, no_rng());
}

TEST_CASE("residual wrapper gradients match finite differences") {
  Rng rng(10);
  auto body = std::make_unique<Sequential>();
  auto c1 = std::make_unique<Conv2D>(2, 2, 3, 1);
  kaiming_init(*c1->params()[0], 18, rng);
  body->add(std::move(c1));
  body->add(std::make_unique<ReLU>());
  Residual layer(std::move(body));
  check_layer_gradients(layer, random_tensor({2, 4, 4, 2}, rng), false, no_rng());
}

TEST_CASE("gradient reversal: forward identity, backward negation") {
  GradientReversal grl;
  Tensor x({1, 2});
  x.v = {1.5, -2.0};
  Tensor y = grl.forward(x, false, nullptr);
  CHECK(y.v == std::vector<double>{1.5, -2.0});
  Tensor g({1, 2});
  g.v = {0.25, -4.0};
  Tensor gx = grl.backward(g);
  CHECK(gx.v == std::vector<double>{-0.25, 4.0});
}

TEST_CASE("gradient reversal composed with a square objective vs finite differences") {
  // f(x) = sum(grl(x)^2): the composed analytic gradient is -2x, i.e. the
  // negation of the finite-difference gradient of sum(x^2).
  Rng rng(11);
  const double h = 1e-4;
  for (int probe = 0; probe < 100; ++probe) {
    Tensor x = random_tensor({1, 16}, rng);
    GradientReversal grl;
    Tensor y = grl.forward(x, false, nullptr);
    Tensor gy({1, 16});
    for (int k = 0; k < 16; ++k) gy.v[static_cast<size_t>(k)] = 2.0 * y.v[static_cast<size_t>(k)];
    Tensor gx = grl.backward(gy);
    for (int k = 0; k < 16; ++k) {
      double fd;
      {
        double saved = x.v[static_cast<size_t>(k)];
        double fp = 0, fm = 0;
        x.v[static_cast<size_t>(k)] = saved + h;
        for (double v : x.v) fp += v * v;
        x.v[static_cast<size_t>(k)] = saved - h;
        for (double v : x.v) fm += v * v;
        x.v[static_cast<size_t>(k)] = saved;
        fd = (fp - fm) / (2 * h);
      }
      double rel = std::abs(gx.v[static_cast<size_t>(k)] + fd) /
                   std::max(1e-12, std::abs(fd));
      CHECK(rel < 1e-4);
    }
  }
}

TEST_CASE("softmax cross entropy: value and gradient") {
  Tensor logits({2, 3});
  logits.v = {1.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  auto lg = softmax_cross_entropy(logits, {0, 1});
  double l0 = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
  double l1 = -std::log(1.0 / 3.0);
  CHECK(lg.loss == doctest::Approx((l0 + l1) / 2).epsilon(1e-12));

  Rng rng(12);
  Tensor x = random_tensor({4, 5}, rng);
  std::vector<int> labels{0, 2, 4, 1};
  auto base = softmax_cross_entropy(x, labels);
  const double h = 1e-6;
  for (size_t k = 0; k < x.v.size(); ++k) {
    Tensor xp = x, xm = x;
    xp.v[k] += h;
    xm.v[k] -= h;
    double fd = (softmax_cross_entropy(xp, labels).loss -
                 softmax_cross_entropy(xm, labels).loss) /
                (2 * h);
    CHECK(base.grad.v[k] == doctest::Approx(fd).epsilon(1e-4).scale(1.0));
  }
}

TEST_CASE("bce with logits: value and gradient") {
  Tensor s({2, 1});
  s.v = {0.0, 2.0};
  auto lg = bce_with_logits(s, {1.0, 0.0});
  CHECK(lg.loss ==
        doctest::Approx((std::log(2.0) + std::log(1.0 + std::exp(2.0))) / 2)
            .epsilon(1e-12));
  const double h = 1e-6;
  Rng rng(13);
  Tensor x = random_tensor({5, 1}, rng);
  std::vector<double> labels{1, 0, 1, 1, 0};
  auto base = bce_with_logits(x, labels);
  for (size_t k = 0; k < x.v.size(); ++k) {
    Tensor xp = x, xm = x;
    xp.v[k] += h;
    xm.v[k] -= h;
    double fd =
        (bce_with_logits(xp, labels).loss - bce_with_logits(xm, labels).loss) / (2 * h);
    CHECK(base.grad.v[k] == doctest::Approx(fd).epsilon(1e-4).scale(1.0));
  }
}

TEST_CASE("global norm clip caps the gradient norm") {
  Param p;
  p.init("p", ParamKind::weight, {4});
  p.grad = {3.0, 4.0, 0.0, 0.0};
  std::vector<Param*> ps{&p};
  CHECK(global_grad_norm(ps) == doctest::Approx(5.0));
  clip_global_norm(ps, 1.0);
  CHECK(global_grad_norm(ps) == doctest::Approx(1.0).epsilon(1e-12));
  clip_global_norm(ps, 10.0);  // below the cap: unchanged
  CHECK(global_grad_norm(ps) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("adam with amsgrad minimizes a quadratic; subset steps only touch the subset") {
  Param a, b;
  a.init("a", ParamKind::weight, {1});
  b.init("b", ParamKind::weight, {1});
  a.value[0] = 5.0;
  b.value[0] = 5.0;
  OptimConfig cfg;
  cfg.kind = "adam";
  cfg.amsgrad = true;
  cfg.lr = 0.1;
  Optimizer opt(cfg, {&a, &b});
  std::vector<Param*> only_a{&a};
  for (int i = 0; i < 200; ++i) {
    a.grad[0] = 2.0 * a.value[0];
    b.grad[0] = 2.0 * b.value[0];
    opt.step(1.0, &only_a);
  }
  CHECK(std::abs(a.value[0]) < 0.1);
  CHECK(b.value[0] == 5.0);
}

TEST_CASE("param index encode/decode round trips") {
  Rng rng(14);
  Dense d1(3, 2, "x");
  kaiming_init(d1.weight(), 3, rng);
  std::string bytes;
  append_params(bytes, d1.params());
  Dense d2(3, 2, "x");
  size_t off = 0;
  read_params(bytes, off, d2.params());
  // float32 payload: values agree to float precision
  for (size_t i = 0; i < d1.weight().value.size(); ++i)
    CHECK(d2.weight().value[i] ==
          static_cast<double>(static_cast<float>(d1.weight().value[i])));
}
