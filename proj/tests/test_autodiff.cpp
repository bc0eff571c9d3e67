#include <cmath>
#include <functional>
#include <vector>

#include "acetone/autodiff.hpp"
#include "acetone/error.hpp"
#include "acetone/random.hpp"
#include "doctest.h"
#include "grad_check.hpp"

using namespace acetone;
using namespace acetone::ad;

namespace {

Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  uniform_init(t, scale, seed);
  return t;
}

// Direct six-loop convolution.
Tensor<double> naive_conv3d(const Tensor<double>& x, const Tensor<double>& w,
                            const Tensor<double>& b, int s, int p) {
  const int cin = x.dim(0), d = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(0), k = w.dim(2);
  const int od = (d + 2 * p - k) / s + 1, oh = (h + 2 * p - k) / s + 1, ow = (wd + 2 * p - k) / s + 1;
  Tensor<double> y({cout, od, oh, ow});
  for (int o = 0; o < cout; ++o)
    for (int z = 0; z < od; ++z)
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx) {
          double acc = b.data[o];
          for (int c = 0; c < cin; ++c)
            for (int kd = 0; kd < k; ++kd)
              for (int kh = 0; kh < k; ++kh)
                for (int kw = 0; kw < k; ++kw) {
                  const int iz = z * s - p + kd, iy = yy * s - p + kh, ix = xx * s - p + kw;
                  if (iz < 0 || iz >= d || iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                  acc += w.data[(((o * cin + c) * k + kd) * k + kh) * k + kw] *
                         x.data[((c * d + iz) * h + iy) * wd + ix];
                }
          y.data[((o * od + z) * oh + yy) * ow + xx] = acc;
        }
  return y;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += a.data[i] * b.data[i];
  return acc;
}

}  // namespace

TEST_CASE("conv3d forward matches the direct loop") {
  const auto x = random_tensor({2, 6, 6, 6}, 1);
  const auto w = random_tensor({3, 2, 4, 4, 4}, 2);
  const auto b = random_tensor({3}, 3);
  Graph<double> g;
  Var y = g.conv3d(g.constant(x), g.constant(w), g.constant(b), 2, 1);
  const auto ref = naive_conv3d(x, w, b, 2, 1);
  REQUIRE(g.value(y).shape == ref.shape);
  for (std::size_t i = 0; i < ref.numel(); ++i) CHECK(g.value(y).data[i] == doctest::Approx(ref.data[i]).epsilon(1e-12));
}

TEST_CASE("conv_transpose3d is the adjoint of conv3d") {
  // <convT(u; W), v> == <u, conv(v; W)> with zero bias.
  const auto u = random_tensor({3, 3, 3, 3}, 4);
  const auto v = random_tensor({2, 6, 6, 6}, 5);
  const auto w_conv = random_tensor({3, 2, 4, 4, 4}, 6);
  Tensor<double> w_t({2, 3, 4, 4, 4});
  // conv weight (Cout=3, Cin=2) reinterpreted as transposed weight (Cin=3, Cout=2).
  w_t.shape = {3, 2, 4, 4, 4};
  w_t.data = w_conv.data;
  Graph<double> g;
  Var t = g.conv_transpose3d(g.constant(u), g.constant(w_t), g.constant(Tensor<double>({2})), 2, 1);
  REQUIRE(g.value(t).shape == Shape{2, 6, 6, 6});
  const auto cv = naive_conv3d(v, w_conv, Tensor<double>({3}), 2, 1);
  CHECK(dot(g.value(t), v) == doctest::Approx(dot(u, cv)).epsilon(1e-12));
}

TEST_CASE("gradients of volumetric ops match finite differences") {
  std::vector<Parameter<double>> ps;
  ps.emplace_back("x", random_tensor({2, 4, 4, 4}, 10));
  ps.emplace_back("w1", random_tensor({3, 2, 4, 4, 4}, 11, 0.3));
  ps.emplace_back("b1", random_tensor({3}, 12, 0.3));
  ps.emplace_back("w2", random_tensor({3, 2, 4, 4, 4}, 13, 0.3));
  ps.emplace_back("b2", random_tensor({2}, 14, 0.3));
  const auto target = random_tensor({2, 4, 4, 4}, 15);
  auto build = [&](Graph<double>& g, std::vector<Var>& v) {
    Var h = g.silu(g.conv3d(v[0], v[1], v[2], 2, 1));
    Var y = g.conv_transpose3d(h, v[3], v[4], 2, 1);
    Var z = g.add(g.scale(y, 0.7), g.gelu(v[0]));
    return g.mse(z, target);
  };
  CHECK(max_relative_grad_error(ps, build) < 1e-5);
}

TEST_CASE("gradients of sequence ops match finite differences") {
  std::vector<Parameter<double>> ps;
  const int n = 5, width = 8;
  ps.emplace_back("x", random_tensor({n, width}, 20));
  ps.emplace_back("ln_g", random_tensor({width}, 21));
  ps.emplace_back("ln_b", random_tensor({width}, 22));
  ps.emplace_back("wqkv", random_tensor({3 * width, width}, 23, 0.5));
  ps.emplace_back("bqkv", random_tensor({3 * width}, 24, 0.5));
  ps.emplace_back("emb", random_tensor({6, width}, 25));
  ps.emplace_back("wout", random_tensor({6, width}, 26, 0.5));
  ps.emplace_back("bout", random_tensor({6}, 27));
  const std::vector<int> idx{1, 4, 0};
  const std::vector<int> targets{2, 5, 0, 1, 3, 3, 4, 0};
  auto build = [&](Graph<double>& g, std::vector<Var>& v) {
    Var x = g.concat_rows(v[0], g.embedding(v[5], idx));
    Var h = g.layernorm(x, v[1], v[2]);
    Var a = g.causal_attention(g.linear(h, v[3], v[4]), 2);
    Var r = g.add(x, a);
    Var logits = g.linear(g.rows(r, 0, 8), v[6], v[7]);
    Var mm = g.matmul(v[6], g.rows(g.silu(r), 0, width));
    return g.add(g.nll(g.log_softmax(logits), targets), g.scale(g.sum(mm), 0.01));
  };
  CHECK(max_relative_grad_error(ps, build) < 1e-5);
}

TEST_CASE("straight-through and clamp route gradients") {
  Graph<double> g;
  Parameter<double> e("e", Tensor<double>({4}, {0.2, -0.5, 0.7, 1.5}));
  Var ev = g.param(e);
  const Tensor<double> q({4}, {0.0, 0.0, 1.0, 1.0});
  Var st = g.straight_through(ev, q);
  CHECK(g.value(st).data == q.data);
  Var c = g.clamp_unit(ev);
  Var loss = g.add(g.sum(st), g.sum(c));
  g.backward(loss);
  CHECK(e.grad.data == std::vector<double>{2.0, 1.0, 2.0, 1.0});
}

TEST_CASE("causal attention ignores later rows") {
  auto qkv = random_tensor({4, 12}, 30);
  Graph<double> g0;
  Var a0 = g0.causal_attention(g0.constant(qkv), 2);
  for (int j = 0; j < 12; ++j) qkv.data[3 * 12 + j] += 1.0;
  Graph<double> g1;
  Var a1 = g1.causal_attention(g1.constant(qkv), 2);
  for (int i = 0; i < 3 * 4; ++i) CHECK(g0.value(a0).data[i] == g1.value(a1).data[i]);
}

TEST_CASE("shape errors are typed") {
  Graph<double> g;
  Var a = g.constant(Tensor<double>({2, 3}));
  Var b = g.constant(Tensor<double>({2, 3}));
  CHECK_THROWS_AS(g.matmul(a, b), Error);
  CHECK_THROWS_AS(g.embedding(a, {5}), Error);
}

TEST_CASE("adam moves against the gradient") {
  Parameter<double> p("p", Tensor<double>({2}, {1.0, -1.0}));
  Adam<double> opt({&p}, {.lr = 0.1});
  opt.zero_grad();
  Graph<double> g;
  Var v = g.param(p);
  g.backward(g.sum(v));
  opt.step();
  // First bias-corrected step has magnitude lr.
  CHECK(p.value.data[0] == doctest::Approx(0.9).epsilon(1e-9));
  CHECK(p.value.data[1] == doctest::Approx(-1.1).epsilon(1e-9));
}
