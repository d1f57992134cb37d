#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "nasb/autograd.hpp"
#include "nasb/error.hpp"
#include "nasb/optim.hpp"
#include "nasb/rng.hpp"
#include "oracle_utils.hpp"

using namespace nasb;
using autograd::ConvSpec;
using autograd::Var;

TEST_CASE("conv2d 1x1 identity kernel reproduces the input") {
  Rng rng(7);
  Tensor x = Tensor::randn(Shape{1, 1, 5, 5}, rng);
  Tensor w(Shape{1, 1, 1, 1}, std::vector<double>{1.0});
  ConvSpec spec{1, 1, 1, 1, 1, 0, 1};
  Var out = autograd::conv2d(Var::constant(x), Var::constant(w), spec);
  for (std::int64_t i = 0; i < x.size(); ++i) CHECK(out.value()[i] == x[i]);
}

TEST_CASE("conv2d all-ones 4x4 input, 3x3 kernel, padding 1: overlap counts") {
  Tensor x = Tensor::full(Shape{1, 1, 4, 4}, 1.0);
  Tensor w = Tensor::full(Shape{1, 1, 3, 3}, 1.0);
  ConvSpec spec{1, 1, 3, 3, 1, 1, 1};
  Var out = autograd::conv2d(Var::constant(x), Var::constant(w), spec);
  CHECK(out.value().at(0, 0, 1, 1) == 9.0);  // center
  CHECK(out.value().at(0, 0, 1, 2) == 9.0);
  CHECK(out.value().at(0, 0, 0, 0) == 4.0);  // corner
  CHECK(out.value().at(0, 0, 3, 3) == 4.0);
  CHECK(out.value().at(0, 0, 0, 1) == 6.0);  // edge
}

TEST_CASE("conv2d matches the direct-sum oracle on a strided random case") {
  Rng rng(13);
  Tensor x = Tensor::randn(Shape{2, 3, 8, 8}, rng);
  Tensor w = Tensor::randn(Shape{4, 3, 3, 3}, rng);
  ConvSpec spec{3, 4, 3, 3, 2, 1, 1};
  Var out = autograd::conv2d(Var::constant(x), Var::constant(w), spec);
  Tensor expect = oracle::direct_conv2d(x, w, spec);
  REQUIRE(out.value().shape() == expect.shape());
  for (std::int64_t i = 0; i < expect.size(); ++i)
    CHECK(std::abs(out.value()[i] - expect[i]) < 1e-12);
}

TEST_CASE("conv2d matches the oracle across random shapes/strides/dilations") {
  Rng rng(99);
  for (int rep = 0; rep < 20; ++rep) {
    const std::int64_t ci = 1 + rng.uniform_int(3), co = 1 + rng.uniform_int(3);
    const std::int64_t k = 1 + 2 * rng.uniform_int(3);  // 1,3,5
    const std::int64_t stride = 1 + rng.uniform_int(2);
    const std::int64_t dil = 1 + rng.uniform_int(2);
    const std::int64_t pad = rng.uniform_int(3);
    const std::int64_t hw = 6 + rng.uniform_int(5);
    ConvSpec spec{ci, co, k, k, stride, pad, dil};
    if (spec.out_h(hw) < 1) continue;
    Tensor x = Tensor::randn(Shape{2, ci, hw, hw}, rng);
    Tensor w = Tensor::randn(Shape{co, ci, k, k}, rng);
    Var out = autograd::conv2d(Var::constant(x), Var::constant(w), spec);
    Tensor expect = oracle::direct_conv2d(x, w, spec);
    REQUIRE(out.value().shape() == expect.shape());
    double worst = 0;
    for (std::int64_t i = 0; i < expect.size(); ++i)
      worst = std::max(worst, std::abs(out.value()[i] - expect[i]));
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("conv2d is linear in the input") {
  Rng rng(5);
  Tensor x = Tensor::randn(Shape{1, 2, 6, 6}, rng);
  Tensor y = Tensor::randn(Shape{1, 2, 6, 6}, rng);
  Tensor w = Tensor::randn(Shape{3, 2, 3, 3}, rng);
  ConvSpec spec{2, 3, 3, 3, 1, 1, 1};
  const double a = 1.7, b = -0.6;
  Tensor mix = x;
  mix.scale_(a);
  mix.add_scaled_(y, b);
  Var lhs = autograd::conv2d(Var::constant(mix), Var::constant(w), spec);
  Var cx = autograd::conv2d(Var::constant(x), Var::constant(w), spec);
  Var cy = autograd::conv2d(Var::constant(y), Var::constant(w), spec);
  for (std::int64_t i = 0; i < lhs.value().size(); ++i)
    CHECK(std::abs(lhs.value()[i] - (a * cx.value()[i] + b * cy.value()[i])) < 1e-10);
}

TEST_CASE("conv2d output extents obey the ConvSpec formula, below-1 errors") {
  ConvSpec spec{1, 1, 3, 3, 2, 0, 1};
  CHECK(spec.out_h(7) == 3);
  CHECK(spec.out_h(8) == 3);
  Tensor x = Tensor::full(Shape{1, 1, 2, 2}, 1.0);
  Tensor w = Tensor::full(Shape{1, 1, 3, 3}, 1.0);
  CHECK_THROWS_AS(autograd::conv2d(Var::constant(x), Var::constant(w), spec),
                  ShapeError);
}

TEST_CASE("conv2d names the offending dimension on mismatch") {
  Tensor x = Tensor::full(Shape{1, 2, 4, 4}, 1.0);
  Tensor w = Tensor::full(Shape{1, 3, 3, 3}, 1.0);
  ConvSpec spec{2, 1, 3, 3, 1, 1, 1};
  try {
    autograd::conv2d(Var::constant(x), Var::constant(w), spec);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("channel") != std::string::npos);
  }
}

TEST_CASE("backward of sum gives all-ones; unreachable params get zeros") {
  Rng rng(3);
  Var x = Var::param(Tensor::randn(Shape{2, 3}, rng));
  Var unreachable = Var::param(Tensor::randn(Shape{4}, rng));
  Var loss = autograd::sum(x);
  autograd::backward(loss);
  for (std::int64_t i = 0; i < x.value().size(); ++i) CHECK(x.grad()[i] == 1.0);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(unreachable.grad()[i] == 0.0);
}

TEST_CASE("backward rejects non-scalar losses") {
  Var x = Var::param(Tensor::full(Shape{2, 2}, 1.0));
  Var y = autograd::scale(x, 2.0);
  CHECK_THROWS_AS(autograd::backward(y), ShapeError);
}

TEST_CASE("conv weight gradient of sum equals tap-contact counts") {
  // With all-ones input and weight, d sum(conv)/d w[o,i,p,q] counts the
  // output positions whose window covers tap (p,q).
  Tensor x = Tensor::full(Shape{1, 1, 4, 4}, 1.0);
  Var w = Var::param(Tensor::full(Shape{1, 1, 3, 3}, 1.0));
  ConvSpec spec{1, 1, 3, 3, 1, 1, 1};
  Var out = autograd::conv2d(Var::constant(x), w, spec);
  autograd::backward(autograd::sum(out));

  // Direct enumeration oracle.
  Tensor counts = Tensor::zeros(Shape{1, 1, 3, 3});
  for (std::int64_t oy = 0; oy < 4; ++oy)
    for (std::int64_t ox = 0; ox < 4; ++ox)
      for (std::int64_t ky = 0; ky < 3; ++ky)
        for (std::int64_t kx = 0; kx < 3; ++kx) {
          const std::int64_t iy = oy - 1 + ky, ix = ox - 1 + kx;
          if (iy >= 0 && iy < 4 && ix >= 0 && ix < 4) counts.at(0, 0, ky, kx) += 1.0;
        }
  for (std::int64_t i = 0; i < 9; ++i) CHECK(w.grad()[i] == counts[i]);
}

TEST_CASE("finite differences: conv2d gradients w.r.t. input and weight") {
  Rng rng(17);
  Var x = Var::param(Tensor::randn(Shape{2, 2, 5, 5}, rng));
  Var w = Var::param(Tensor::randn(Shape{3, 2, 3, 3}, rng));
  ConvSpec spec{2, 3, 3, 3, 2, 1, 1};
  auto build = [&]() {
    Var out = autograd::conv2d(x, w, spec);
    return autograd::mul(out, out);  // square to make the loss nonlinear
  };
  Var loss = autograd::sum(build());
  autograd::backward(loss);
  auto rebuild = [&]() { return autograd::sum(build()).value()[0]; };
  CHECK(oracle::fd_check(x, rebuild, x.grad()) < 1e-4);
  CHECK(oracle::fd_check(w, rebuild, w.grad()) < 1e-4);
}

TEST_CASE("batch_norm: normalized input is (almost) a fixed point") {
  Rng rng(23);
  // Build a zero-mean unit-variance channel.
  Tensor x(Shape{2, 1, 4, 4});
  for (std::int64_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
  double m = 0, v = 0;
  for (std::int64_t i = 0; i < x.size(); ++i) m += x[i];
  m /= static_cast<double>(x.size());
  for (std::int64_t i = 0; i < x.size(); ++i) v += (x[i] - m) * (x[i] - m);
  v /= static_cast<double>(x.size());
  for (std::int64_t i = 0; i < x.size(); ++i) x[i] = (x[i] - m) / std::sqrt(v);

  autograd::BatchNormState st;
  Var out = autograd::batch_norm(Var::constant(x), Var::constant(Tensor::full(Shape{1}, 1.0)),
                                 Var::constant(Tensor::zeros(Shape{1})), st, true, 1e-5);
  for (std::int64_t i = 0; i < x.size(); ++i)
    CHECK(out.value()[i] == doctest::Approx(x[i]).epsilon(1e-4));
}

TEST_CASE("batch_norm: constant channel collapses to beta") {
  Tensor x = Tensor::full(Shape{3, 2, 4, 4}, 5.5);
  autograd::BatchNormState st;
  Tensor beta(Shape{2}, std::vector<double>{0.25, -1.0});
  Var out = autograd::batch_norm(Var::constant(x), Var::constant(Tensor::full(Shape{2}, 1.0)),
                                 Var::constant(beta), st, true, 1e-5);
  for (std::int64_t n = 0; n < 3; ++n)
    for (std::int64_t c = 0; c < 2; ++c)
      for (std::int64_t y = 0; y < 4; ++y)
        for (std::int64_t z = 0; z < 4; ++z)
          CHECK(out.value().at(n, c, y, z) == doctest::Approx(beta[c]).epsilon(1e-9));
}

TEST_CASE("batch_norm: train output has recomputed moments 0/1") {
  Rng rng(31);
  Tensor x = Tensor::randn(Shape{4, 3, 5, 5}, rng, 2.5);
  autograd::BatchNormState st;
  Var out = autograd::batch_norm(Var::constant(x), Var::constant(Tensor::full(Shape{3}, 1.0)),
                                 Var::constant(Tensor::zeros(Shape{3})), st, true, 1e-9);
  const std::int64_t per = 4 * 5 * 5;
  for (std::int64_t c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (std::int64_t n = 0; n < 4; ++n)
      for (std::int64_t y = 0; y < 5; ++y)
        for (std::int64_t z = 0; z < 5; ++z) m += out.value().at(n, c, y, z);
    m /= per;
    for (std::int64_t n = 0; n < 4; ++n)
      for (std::int64_t y = 0; y < 5; ++y)
        for (std::int64_t z = 0; z < 5; ++z) {
          const double d = out.value().at(n, c, y, z) - m;
          v += d * d;
        }
    v /= per;
    CHECK(std::abs(m) < 1e-10);
    CHECK(std::abs(v - 1.0) < 1e-6);
  }
}

TEST_CASE("batch_norm: eval mode uses running stats; negative eps errors") {
  Rng rng(37);
  Tensor x = Tensor::randn(Shape{2, 2, 3, 3}, rng);
  autograd::BatchNormState st;
  Var g = Var::constant(Tensor::full(Shape{2}, 1.0));
  Var b = Var::constant(Tensor::zeros(Shape{2}));
  CHECK_THROWS_AS(autograd::batch_norm(Var::constant(x), g, b, st, true, -1.0),
                  ValueError);
  // Train twice to move the running stats, then eval must differ from train.
  autograd::batch_norm(Var::constant(x), g, b, st, true);
  Var eval_out = autograd::batch_norm(Var::constant(x), g, b, st, false);
  CHECK(st.batches_seen == 1);
  CHECK(eval_out.value().size() == x.size());
}

TEST_CASE("finite differences: batch_norm train mode") {
  Rng rng(41);
  Var x = Var::param(Tensor::randn(Shape{2, 2, 3, 3}, rng));
  Var gamma = Var::param(Tensor::full(Shape{2}, 1.3));
  Var beta = Var::param(Tensor::full(Shape{2}, -0.2));
  // A fixed random mask keeps the loss sensitive to x; sum(out^2) alone is
  // exactly invariant under the batch normalization.
  Var mask = Var::constant(Tensor::randn(Shape{2, 2, 3, 3}, rng));
  auto build = [&]() {
    autograd::BatchNormState st;  // fresh stats per rebuild
    Var out = autograd::batch_norm(x, gamma, beta, st, true);
    return autograd::sum(autograd::mul(autograd::mul(out, out), mask));
  };
  Var loss = build();
  autograd::backward(loss);
  auto rebuild = [&]() { return build().value()[0]; };
  CHECK(oracle::fd_check(x, rebuild, x.grad()) < 1e-4);
  CHECK(oracle::fd_check(gamma, rebuild, gamma.grad()) < 1e-4);
  CHECK(oracle::fd_check(beta, rebuild, beta.grad()) < 1e-4);
}

TEST_CASE("max pool: constant input stays constant; spike wins its window") {
  Tensor x = Tensor::full(Shape{1, 1, 6, 6}, 3.25);
  Var out = autograd::max_pool3x3(Var::constant(x), 1, 1);
  // interior windows all see the constant
  CHECK(out.value().at(0, 0, 2, 2) == 3.25);

  Tensor spike = Tensor::zeros(Shape{1, 1, 6, 6});
  spike.at(0, 0, 2, 3) = 10.0;
  Var sp = Var::param(spike);
  Var pooled = autograd::max_pool3x3(sp, 1, 1);
  CHECK(pooled.value().at(0, 0, 2, 3) == 10.0);
  CHECK(pooled.value().at(0, 0, 1, 2) == 10.0);
  autograd::backward(autograd::sum(pooled));
  // every window containing the spike routes its gradient there
  CHECK(sp.grad().at(0, 0, 2, 3) == 9.0);
}

TEST_CASE("max pool argmax ties break to the first index in scan order") {
  Tensor x = Tensor::full(Shape{1, 1, 3, 3}, 1.0);
  Var v = Var::param(x);
  Var pooled = autograd::max_pool3x3(v, 1, 0);
  autograd::backward(autograd::sum(pooled));
  CHECK(v.grad().at(0, 0, 0, 0) == 1.0);  // first scanned cell takes it all
  CHECK(v.grad().at(0, 0, 1, 1) == 0.0);
}

TEST_CASE("pools match the per-window oracle on a random padded case") {
  Rng rng(43);
  Tensor x = Tensor::randn(Shape{1, 2, 6, 6}, rng);
  Var mx = autograd::max_pool3x3(Var::constant(x), 1, 1);
  Var av = autograd::avg_pool3x3(Var::constant(x), 1, 1);
  Tensor mo = oracle::direct_pool(x, 1, 1, true);
  Tensor ao = oracle::direct_pool(x, 1, 1, false);
  REQUIRE(mx.value().shape() == mo.shape());
  for (std::int64_t i = 0; i < mo.size(); ++i) {
    CHECK(mx.value()[i] == mo[i]);
    CHECK(av.value()[i] == doctest::Approx(ao[i]).epsilon(1e-12));
  }
  // max padding must never win even when all values are negative
  Tensor neg = Tensor::full(Shape{1, 1, 4, 4}, -2.0);
  Var mneg = autograd::max_pool3x3(Var::constant(neg), 1, 1);
  for (std::int64_t i = 0; i < mneg.value().size(); ++i)
    CHECK(mneg.value()[i] == -2.0);
}

TEST_CASE("pool output extent below 1 errors") {
  Tensor x = Tensor::full(Shape{1, 1, 2, 2}, 1.0);
  CHECK_THROWS_AS(autograd::max_pool3x3(Var::constant(x), 1, 0), ShapeError);
}

TEST_CASE("finite differences: avg pool and global avg pool") {
  Rng rng(47);
  Var x = Var::param(Tensor::randn(Shape{2, 2, 5, 5}, rng));
  auto build = [&]() {
    Var a = autograd::avg_pool3x3(x, 2, 1);
    Var g = autograd::global_avg_pool(autograd::mul(x, x));
    return autograd::add(autograd::sum(autograd::mul(a, a)), autograd::sum(g));
  };
  Var loss = build();
  autograd::backward(loss);
  auto rebuild = [&]() { return build().value()[0]; };
  CHECK(oracle::fd_check(x, rebuild, x.grad()) < 1e-4);
}

TEST_CASE("finite differences: composed conv-bn-relu-linear-cross-entropy graph") {
  Rng rng(53);
  Var x = Var::param(Tensor::randn(Shape{3, 2, 6, 6}, rng));
  Var w = Var::param(Tensor::randn(Shape{4, 2, 3, 3}, rng, 0.5));
  Var gamma = Var::param(Tensor::full(Shape{4}, 1.1));
  Var beta = Var::param(Tensor::full(Shape{4}, 0.1));
  Var head = Var::param(Tensor::randn(Shape{3, 4}, rng, 0.5));
  const std::vector<std::int64_t> labels{0, 2, 1};
  ConvSpec spec{2, 4, 3, 3, 1, 1, 1};
  auto build = [&]() {
    autograd::BatchNormState st;
    Var h = autograd::conv2d(x, w, spec);
    h = autograd::batch_norm(h, gamma, beta, st, true);
    h = autograd::relu(h);
    Var pooled = autograd::global_avg_pool(h);
    Var logits = autograd::linear(pooled, head);
    return autograd::softmax_cross_entropy(logits, labels);
  };
  Var loss = build();
  autograd::backward(loss);
  auto rebuild = [&]() { return build().value()[0]; };
  CHECK(oracle::fd_check(x, rebuild, x.grad()) < 1e-4);
  CHECK(oracle::fd_check(w, rebuild, w.grad()) < 1e-4);
  CHECK(oracle::fd_check(gamma, rebuild, gamma.grad()) < 1e-4);
  CHECK(oracle::fd_check(beta, rebuild, beta.grad()) < 1e-4);
  CHECK(oracle::fd_check(head, rebuild, head.grad()) < 1e-4);
}

TEST_CASE("finite differences: tanh, subsample and channel pad") {
  Rng rng(59);
  Var x = Var::param(Tensor::randn(Shape{2, 2, 4, 4}, rng));
  auto build = [&]() {
    Var h = autograd::tanh_op(x);
    h = autograd::subsample2(h);
    h = autograd::pad_channels(h, 3);
    return autograd::sum(autograd::mul(h, h));
  };
  Var loss = build();
  autograd::backward(loss);
  auto rebuild = [&]() { return build().value()[0]; };
  CHECK(oracle::fd_check(x, rebuild, x.grad()) < 1e-4);
}

TEST_CASE("softmax cross entropy rejects out-of-range labels") {
  Var logits = Var::constant(Tensor::full(Shape{2, 3}, 0.0));
  CHECK_THROWS_AS(autograd::softmax_cross_entropy(logits, {0, 3}), ValueError);
}

TEST_CASE("forward of identical graphs is bit-identical") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor x = Tensor::randn(Shape{2, 3, 6, 6}, rng);
    Tensor w = Tensor::randn(Shape{4, 3, 3, 3}, rng);
    ConvSpec spec{3, 4, 3, 3, 1, 1, 1};
    Var out = autograd::conv2d(Var::constant(x), Var::constant(w), spec);
    return out.value();
  };
  Tensor a = run(1234), b = run(1234);
  for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

// ---- optimizers -------------------------------------------------------------

TEST_CASE("sgd: one step with zero momentum moves by lr*grad") {
  std::vector<Var> params{Var::param(Tensor::full(Shape{3}, 1.0))};
  Var loss = autograd::sum(autograd::mul(params[0], params[0]));
  autograd::backward(loss);  // grad = 2*x = 2
  optim::SgdMomentum sgd(0.1, 0.0);
  sgd.step(params);
  for (std::int64_t i = 0; i < 3; ++i)
    CHECK(params[0].value()[i] == doctest::Approx(1.0 - 0.1 * 2.0).epsilon(1e-15));
}

TEST_CASE("adam: first step moves by about lr for large gradients") {
  std::vector<Var> params{Var::param(Tensor::full(Shape{4}, 0.0))};
  params[0].node()->accumulate(Tensor::full(Shape{4}, 123.0));
  optim::Adam adam(0.01);
  adam.step(params);
  for (std::int64_t i = 0; i < 4; ++i)
    CHECK(params[0].value()[i] == doctest::Approx(-0.01).epsilon(1e-6));
}

TEST_CASE("optimizers reject non-positive learning rates") {
  CHECK_THROWS_AS(optim::SgdMomentum(0.0, 0.9), ValueError);
  CHECK_THROWS_AS(optim::Adam(-1.0), ValueError);
}

TEST_CASE("sgd momentum on a quadratic matches the scalar recurrence") {
  // Oracle: run the update recurrence on a scalar.
  double xr = 1.0, vr = 0.0;
  for (int t = 0; t < 100; ++t) {
    const double g = xr;  // d/dx of x^2/2
    vr = 0.9 * vr + g;
    xr -= 0.1 * vr;
  }

  std::vector<Var> params{Var::param(Tensor::full(Shape{1}, 1.0))};
  optim::SgdMomentum sgd(0.1, 0.9);
  for (int t = 0; t < 100; ++t) {
    params[0].zero_grad();
    Var loss = autograd::scale(autograd::sum(autograd::mul(params[0], params[0])), 0.5);
    autograd::backward(loss);
    sgd.step(params);
  }
  CHECK(params[0].value()[0] == doctest::Approx(xr).epsilon(1e-12));
  // The recurrence itself converges; 100 steps land near 3.7e-3 and the
  // trajectory keeps shrinking afterwards.
  CHECK(std::abs(params[0].value()[0]) < 1e-2);
  double xr2 = xr, vr2 = vr;
  for (int t = 0; t < 100; ++t) {
    vr2 = 0.9 * vr2 + xr2;
    xr2 -= 0.1 * vr2;
  }
  CHECK(std::abs(xr2) < std::abs(xr));
}

TEST_CASE("adam converges on a quadratic and weight decay shrinks params") {
  std::vector<Var> params{Var::param(Tensor::full(Shape{2}, 1.0))};
  optim::Adam adam(0.05, 0.9, 0.999, 1e-8, 0.0);
  for (int t = 0; t < 300; ++t) {
    params[0].zero_grad();
    Var loss = autograd::scale(autograd::sum(autograd::mul(params[0], params[0])), 0.5);
    autograd::backward(loss);
    adam.step(params);
  }
  CHECK(std::abs(params[0].value()[0]) < 1e-2);

  std::vector<Var> decayed{Var::param(Tensor::full(Shape{1}, 1.0))};
  optim::Adam wd(0.01, 0.9, 0.999, 1e-8, 0.1);
  for (int t = 0; t < 50; ++t) {
    decayed[0].zero_grad();  // zero loss gradient; only decay acts
    wd.step(decayed);
  }
  CHECK(decayed[0].value()[0] < 1.0);
}
