#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "mpnflow/checkpoint.hpp"
#include "mpnflow/error.hpp"
#include "mpnflow/kernels.hpp"
#include "mpnflow/layers.hpp"
#include "mpnflow/optim.hpp"
#include "mpnflow/tensor.hpp"

using namespace mpnflow;
using namespace mpnflow::tk;

namespace {

std::vector<double> randn(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

std::vector<double> as_vector(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST_CASE("serial and OpenMP kernels agree bit for bit") {
  const int saved = kernels::max_threads();
  kernels::set_threads(4);
  const std::size_t r = 37, k = 19, n = 23;
  auto a = randn(r * k, 1), b = randn(k * n, 2), bt = randn(n * k, 3), ar = randn(r * n, 4);
  std::vector<double> s(r * n, 0.5), p(r * n, 0.5);
  kernels::serial::gemm_nn(a, b, s, r, k, n);
  kernels::parallel::gemm_nn(a, b, p, r, k, n);
  CHECK(s == p);
  std::vector<double> s2(k * n, 0.0), p2(k * n, 0.0);
  kernels::serial::gemm_tn(a, ar, s2, r, k, n);
  kernels::parallel::gemm_tn(a, ar, p2, r, k, n);
  CHECK(s2 == p2);
  std::vector<double> s3(r * k, 0.0), p3(r * k, 0.0);
  kernels::serial::gemm_nt(ar, bt, s3, r, n, k);
  kernels::parallel::gemm_nt(ar, bt, p3, r, n, k);
  CHECK(s3 == p3);

  kernels::ConvGeometry g{3, 5, 4, 2, 3};
  auto img = randn(g.pixels() * g.in_channels, 5);
  std::vector<double> cs(g.pixels() * g.patch()), cp(g.pixels() * g.patch());
  kernels::serial::im2col(img, cs, g);
  kernels::parallel::im2col(img, cp, g);
  CHECK(cs == cp);
  std::vector<double> bs(img.size(), 0.0), bp(img.size(), 0.0);
  kernels::serial::col2im(cs, bs, g);
  kernels::parallel::col2im(cs, bp, g);
  CHECK(bs == bp);
  kernels::set_threads(saved);
}

TEST_CASE("order-invariant sum") {
  std::vector<double> v{1e16, 1.0, -1e16, 3.5, 2.25};
  std::vector<double> w{2.25, -1e16, 3.5, 1.0, 1e16};
  CHECK(kernels::order_invariant_sum(v) == kernels::order_invariant_sum(w));
}

TEST_CASE("gradients of sum and dot") {
  Tensor x = Tensor::parameter({3}, {1.0, -2.0, 0.5});
  {
    Tape t;
    Tensor l = sum(x);
    t.backward(l);
  }
  CHECK(as_vector(Tensor::constant({3}, {x.grad().begin(), x.grad().end()})) ==
        std::vector<double>{1, 1, 1});
  x.zero_grad();
  {
    Tape t;
    Tensor l = dot(x, x);
    CHECK(l.item() == doctest::Approx(5.25));
    t.backward(l);
  }
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == -4.0);
  CHECK(x.grad()[2] == 1.0);
}

TEST_CASE("backward misuse") {
  Tensor x = Tensor::parameter({2}, {1.0, 2.0});
  Tape t;
  Tensor y = scale(x, 2.0);
  CHECK_THROWS_AS(t.backward(y), ShapeError);
  CHECK_THROWS_AS(t.backward(Tensor::scalar(1.0)), std::logic_error);
}

TEST_CASE("dense layers") {
  std::mt19937_64 rng(0);
  DenseStack id({3, 3}, Activation::identity, rng);
  auto w = id.weight(0).mutable_values();
  for (std::size_t i = 0; i < 9; ++i) w[i] = (i % 4 == 0) ? 1.0 : 0.0;
  Tensor x = Tensor::constant({2, 3}, {1, -2, 3, 0.5, 0, -7});
  CHECK(as_vector(id.forward(x)) == as_vector(x));

  DenseStack r({3, 3}, Activation::relu, rng);
  Tensor neg = Tensor::constant({1, 3}, {-1, -2, -3});
  for (double& v : r.weight(0).mutable_values()) v = std::abs(v);
  Tensor dead = r.forward(neg);
  for (double v : dead.values()) CHECK(v == 0.0);

  // 2 -> 2 -> 1: h = relu(x W0 + b0), y = h W1 + b1
  DenseStack two({2, 2, 1}, Activation::identity, rng);
  auto w0 = two.weight(0).mutable_values();
  w0[0] = 0.5, w0[1] = -1.0, w0[2] = 0.25, w0[3] = 2.0;
  two.bias(0).mutable_values()[0] = 0.1;
  two.bias(0).mutable_values()[1] = -0.2;
  two.weight(1).mutable_values()[0] = 3.0;
  two.weight(1).mutable_values()[1] = -0.5;
  two.bias(1).mutable_values()[0] = 0.05;
  // x = (2, 1): pre = (1 + 0.25 + 0.1, -2 + 2 - 0.2) = (1.35, -0.2) -> (1.35, 0)
  Tensor y = two.forward(Tensor::constant({1, 2}, {2.0, 1.0}));
  CHECK(y.item() == doctest::Approx(3.0 * 1.35 + 0.05).epsilon(1e-14));
}

TEST_CASE("convolutions") {
  std::mt19937_64 rng(1);
  SUBCASE("1x1 kernel equals a pixelwise dense map") {
    Tensor x = Tensor::constant({2, 3, 3, 2}, randn(36, 7));
    Tensor k = Tensor::constant({1, 1, 2, 3}, randn(6, 8));
    Tensor b = Tensor::constant({3}, {0.1, 0.2, -0.3});
    Tensor c = conv2d(x, k, b);
    Tensor d = affine(Tensor::constant({18, 2}, as_vector(x)), Tensor::constant({2, 3}, as_vector(k)), b);
    CHECK(c.shape() == Shape{2, 3, 3, 3});
    auto cv = as_vector(c), dv = as_vector(d);
    for (std::size_t i = 0; i < cv.size(); ++i) CHECK(cv[i] == doctest::Approx(dv[i]).epsilon(1e-14));
  }
  SUBCASE("delta kernel is the identity") {
    Tensor x = Tensor::constant({1, 4, 5, 1}, randn(20, 9));
    std::vector<double> kd(9, 0.0);
    kd[4] = 1.0;
    Tensor c = conv2d(x, Tensor::constant({3, 3, 1, 1}, kd), Tensor());
    CHECK(as_vector(c) == as_vector(x));
  }
  SUBCASE("3x3 all-ones kernel gives zero-padded window sums") {
    std::vector<double> g(16);
    for (int i = 0; i < 16; ++i) g[i] = i + 1;
    Tensor c = conv2d(Tensor::constant({1, 4, 4, 1}, g), Tensor::constant({3, 3, 1, 1}, std::vector<double>(9, 1.0)),
                      Tensor());
    std::vector<double> expect{14, 24, 30, 22, 33, 54, 63, 45, 57, 90, 99, 69, 46, 72, 78, 54};
    CHECK(as_vector(c) == expect);
  }
  SUBCASE("shape errors") {
    Tensor x = Tensor::constant({1, 4, 4, 2}, std::vector<double>(32, 0.0));
    CHECK_THROWS_AS(conv2d(x, Tensor::constant({3, 3, 1, 1}, std::vector<double>(9, 0.0)), Tensor()),
                    ShapeError);
  }
}

TEST_CASE("segment operations") {
  Tensor x = Tensor::constant({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  std::vector<std::size_t> seg{0, 2, 0, 2};
  Tensor s = segment_sum(x, seg, 4);
  CHECK(as_vector(s) == std::vector<double>{6, 8, 0, 0, 10, 12, 0, 0});

  std::vector<std::size_t> idx{3, 0, 3};
  CHECK(as_vector(gather_items(x, idx)) == std::vector<double>{7, 8, 1, 2, 7, 8});

  Tensor logits = Tensor::constant({3}, {std::log(2.0), 0.0, 5.0});
  std::vector<std::size_t> two{0, 0, 1};
  Tensor a = segment_softmax(logits, two, 2);
  CHECK(a.at(0) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(a.at(1) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(a.at(2) == 1.0);

  Tensor eq = segment_softmax(Tensor::constant({2}, {0.3, 0.3}), std::vector<std::size_t>{0, 0}, 1);
  CHECK(eq.at(0) == 0.5);
  CHECK(eq.at(1) == 0.5);

  auto big = randn(200, 3);
  for (double& v : big) v *= 30.0;
  std::vector<std::size_t> groups(200);
  for (std::size_t i = 0; i < 200; ++i) groups[i] = i % 7;
  Tensor sm = segment_softmax(Tensor::constant({200, 1}, big), groups, 7);
  std::vector<double> total(7, 0.0);
  for (std::size_t i = 0; i < 200; ++i) {
    CHECK(sm.at(i) >= 0.0);
    total[groups[i]] += sm.at(i);
  }
  for (double t : total) CHECK(std::abs(t - 1.0) <= 1e-12);
}

TEST_CASE("weighted binary cross-entropy") {
  std::vector<double> y1{1.0}, w1{1.0};
  CHECK(weighted_bce(Tensor::constant({1}, {0.5}), y1, w1).item() == doctest::Approx(0.6931).epsilon(1e-4));
  std::vector<double> p{0.9, 0.1, 0.8, 0.2}, y{1, 0, 1, 0}, w(4, 0.25);
  CHECK(weighted_bce(Tensor::constant({4}, p), y, w).item() == doctest::Approx(0.1643).epsilon(1e-3));
  std::vector<double> extreme{0.0, 1.0, 1e-300, 1.0 - 1e-17};
  std::vector<double> ye{1, 0, 1, 0};
  double v = weighted_bce(Tensor::constant({4}, extreme), ye, std::vector<double>(4, 1.0)).item();
  CHECK(std::isfinite(v));
  CHECK_THROWS_AS(weighted_bce(Tensor::constant({4}, p), y1, w1), ShapeError);
}

TEST_CASE("grad_check oracles") {
  Tensor theta = Tensor::parameter({1}, {0.7});
  ParamList q{{"theta", theta}};
  auto quad = [&]() { return dot(theta, theta); };
  CHECK(grad_check(quad, q, 1e-6).max_relative_error < 1e-8);
  GradCheckResult bad = grad_check(quad, q, 1e-6, 1e-3);
  CHECK(bad.max_relative_error > 1e-4);
  CHECK(bad.worst_param == "theta");

  std::mt19937_64 rng(3);
  DenseStack dense({4, 6, 3}, Activation::identity, rng);
  for (double& b : dense.bias(0).mutable_values()) b = 0.05;
  Tensor xd = Tensor::constant({5, 4}, randn(20, 11));
  ParamList dp;
  dense.collect("dense", dp);
  auto dl = [&]() { return sum(mul(dense.forward(xd), dense.forward(xd))); };
  CHECK(grad_check(dl, dp, 1e-6).max_relative_error < 1e-4);

  ConvStack conv({2, 3, 1}, 3, Activation::sigmoid, rng);
  for (double& b : conv.bias(0).mutable_values()) b = 0.05;
  Tensor xc = Tensor::constant({2, 4, 4, 2}, randn(64, 12));
  ParamList cp;
  conv.collect("conv", cp);
  std::vector<double> target(32), weight(32, 1.0 / 32);
  for (std::size_t i = 0; i < 32; ++i) target[i] = double(i % 3 == 0);
  auto cl = [&]() { return weighted_bce(conv.forward(xc), target, weight); };
  CHECK(grad_check(cl, cp, 1e-6).max_relative_error < 1e-4);

  // attention-style composite: softmax-weighted segment sums of gathered rows
  Tensor logit = Tensor::parameter({5, 1}, randn(5, 13));
  Tensor feat = Tensor::parameter({3, 2}, randn(6, 14));
  std::vector<std::size_t> src{0, 1, 2, 0, 1}, dst{1, 2, 0, 2, 0};
  ParamList ap{{"logit", logit}, {"feat", feat}};
  auto al = [&]() {
    Tensor a = segment_softmax(logit, dst, 3);
    Tensor m = scale_items(gather_items(feat, src), a);
    Tensor c = segment_sum(m, dst, 3);
    return sum(mul(concat_cols({c, feat}), concat_cols({feat, c})));
  };
  CHECK(grad_check(al, ap, 1e-6).max_relative_error < 1e-4);
}

TEST_CASE("Adam") {
  SUBCASE("zero gradient and zero decay leave parameters unchanged") {
    Tensor p = Tensor::parameter({3}, {1.0, -2.0, 3.0});
    ParamList ps{{"p", p}};
    AdamState st;
    for (int i = 0; i < 5; ++i) adam_step(ps, st);
    CHECK(as_vector(p) == std::vector<double>{1.0, -2.0, 3.0});
  }
  SUBCASE("first step moves by lr") {
    Tensor p = Tensor::parameter({1}, {1.0});
    p.mutable_grad()[0] = 1.0;
    ParamList ps{{"p", p}};
    AdamState st(AdamOptions{0.1});
    adam_step(ps, st);
    CHECK(p.at(0) == doctest::Approx(0.9).epsilon(1e-6));
  }
  SUBCASE("identical groups get identical updates") {
    Tensor a = Tensor::parameter({2}, {0.3, -0.4});
    Tensor b = Tensor::parameter({2}, {0.3, -0.4});
    ParamList ps{{"a", a}, {"b", b}};
    AdamState st(AdamOptions{0.01, 0.9, 0.999, 1e-8, 1e-4});
    for (int i = 0; i < 3; ++i) {
      a.mutable_grad()[0] = b.mutable_grad()[0] = 0.7 * i - 0.2;
      a.mutable_grad()[1] = b.mutable_grad()[1] = -1.1;
      adam_step(ps, st);
    }
    CHECK(as_vector(a) == as_vector(b));
  }
  SUBCASE("non-finite gradients name the group") {
    Tensor a = Tensor::parameter({1}, {0.0});
    Tensor b = Tensor::parameter({1}, {0.0});
    b.mutable_grad()[0] = NAN;
    ParamList ps{{"a", a}, {"b", b}};
    AdamState st;
    CHECK_THROWS_WITH_AS(adam_step(ps, st), doctest::Contains("b"), NumericError);
    CHECK(a.at(0) == 0.0);
  }
}

TEST_CASE("checkpoint round trip") {
  std::mt19937_64 rng(4);
  DenseStack d({3, 4, 2}, Activation::identity, rng);
  ConvStack c({2, 2, 1}, 3, Activation::sigmoid, rng);
  ParamList ps;
  d.collect("d", ps);
  c.collect("c", ps);
  auto dir = testutil::fresh_dir("ckpt");
  save_checkpoint(dir / "m.bin", ps, "{\"x\":1}");
  Checkpoint ck = load_checkpoint(dir / "m.bin");
  CHECK(ck.metadata == "{\"x\":1}");
  CHECK(ck.groups.size() == ps.size());

  std::mt19937_64 rng2(99);
  DenseStack d2({3, 4, 2}, Activation::identity, rng2);
  ConvStack c2({2, 2, 1}, 3, Activation::sigmoid, rng2);
  ParamList qs;
  d2.collect("d", qs);
  c2.collect("c", qs);
  restore(qs, ck);
  for (std::size_t i = 0; i < ps.size(); ++i) CHECK(as_vector(ps[i].tensor) == as_vector(qs[i].tensor));

  DenseStack wrong({3, 5, 2}, Activation::identity, rng2);
  ParamList ws;
  wrong.collect("d", ws);
  c2.collect("c", ws);
  CHECK_THROWS_AS(restore(ws, ck), ShapeError);

  testutil::write_file(dir / "bad.bin", "NOTACKPT");
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.bin"), ParseError);
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.bin"), IoError);
}

TEST_CASE("forward passes are deterministic") {
  std::mt19937_64 rng(5);
  ConvStack c({2, 4, 1}, 3, Activation::sigmoid, rng);
  Tensor x = Tensor::constant({3, 5, 5, 2}, randn(150, 6));
  CHECK(as_vector(c.forward(x)) == as_vector(c.forward(x)));
}
