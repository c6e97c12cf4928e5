#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "pifield/checkpoint.hpp"
#include "pifield/nn.hpp"
#include "pifield/optim.hpp"
#include "test_util.hpp"

using namespace pifield;
using testutil::gradcheck;
using testutil::rand_tensor;
using testutil::weighted_sum;

TEST_CASE("tensor shape bookkeeping") {
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0f, 2.0f}), ShapeError);
  CHECK_THROWS_AS(Tensor({0, 3}), ShapeError);
  CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
  CHECK(t.reshaped({3, 2}).dim(0) == 3);
}

TEST_CASE("dense identity and hand arithmetic") {
  Var x = constant(Tensor({1, 2}, {1.0f, 2.0f}));
  Var W = constant(Tensor({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f}));
  Var b = constant(Tensor({2}, {0.0f, 0.0f}));
  Var y = add_bias_rows(matmul(x, W), b);
  CHECK(y->value[0] == doctest::Approx(1.0f));
  CHECK(y->value[1] == doctest::Approx(2.0f));

  Var x2 = constant(Tensor({1, 2}, {1.0f, 1.0f}));
  Var W2 = constant(Tensor({2, 1}, {2.0f, 3.0f}));
  Var b2 = constant(Tensor({1}, {1.0f}));
  Var y2 = add_bias_rows(matmul(x2, W2), b2);
  CHECK(y2->value[0] == doctest::Approx(6.0f));

  CHECK_THROWS_AS(matmul(x, constant(Tensor({3, 2}))), ShapeError);
}

TEST_CASE("dense gradients vs finite differences") {
  Rng rng(101);
  for (int it = 0; it < 5; ++it) {
    const int n = 2 + rng.next_below(3), ci = 2 + rng.next_below(3), co = 1 + rng.next_below(3);
    auto err = gradcheck(
        [&](std::vector<Var>& in) {
          return weighted_sum(add_bias_rows(matmul(in[0], in[1]), in[2]));
        },
        {rand_tensor(rng, {n, ci}), rand_tensor(rng, {ci, co}), rand_tensor(rng, {co})});
    CHECK(err < 1e-3);
  }
}

TEST_CASE("elementwise op gradients") {
  Rng rng(202);
  const Tensor x = rand_tensor(rng, {3, 4}, -0.9, 0.9);
  auto check1 = [&](const std::function<Var(const Var&)>& op) {
    auto err = gradcheck([&](std::vector<Var>& in) { return weighted_sum(op(in[0])); }, {x});
    CHECK(err < 1e-3);
  };
  check1([](const Var& v) { return sigmoid(v); });
  check1([](const Var& v) { return leaky_relu(v, 0.01f); });
  check1([](const Var& v) { return exp_v(v); });
  check1([](const Var& v) { return square(v); });
  check1([](const Var& v) { return rsqrt(v, 2.0f); });
  check1([](const Var& v) { return neg(add_scalar(mul_scalar(v, 1.7f), 0.3f)); });
  check1([](const Var& v) { return log_v(add_scalar(sigmoid(v), 0.1f)); });
  check1([](const Var& v) { return sqrt_v(add_scalar(square(v), 0.5f)); });
  check1([](const Var& v) { return rsub_scalar(1.0f, v); });

  auto err2 = gradcheck(
      [&](std::vector<Var>& in) {
        return weighted_sum(add(mul(in[0], in[1]), sub(in[0], in[1])));
      },
      {rand_tensor(rng, {2, 3}), rand_tensor(rng, {2, 3})});
  CHECK(err2 < 1e-3);
}

TEST_CASE("clamp passes gradient only inside the interval") {
  Var x = leaf(Tensor({4}, {-2.0f, -0.5f, 0.5f, 2.0f}), true);
  Var y = sum_all(clamp(x, -1.0f, 1.0f));
  backward(y);
  CHECK(x->grad[0] == 0.0f);
  CHECK(x->grad[1] == 1.0f);
  CHECK(x->grad[2] == 1.0f);
  CHECK(x->grad[3] == 0.0f);
}

TEST_CASE("softmax rows: symmetry, stability, closed form") {
  Var a = softmax_rows(constant(Tensor({1, 2}, {0.0f, 0.0f})));
  CHECK(a->value[0] == doctest::Approx(0.5));
  Var b = softmax_rows(constant(Tensor({1, 2}, {1000.0f, 1000.0f})));
  CHECK(b->value[0] == doctest::Approx(0.5));
  Var c = softmax_rows(constant(Tensor({1, 2}, {0.0f, std::log(3.0f)})));
  CHECK(c->value[0] == doctest::Approx(0.25).epsilon(1e-5));
  CHECK(c->value[1] == doctest::Approx(0.75).epsilon(1e-5));

  CHECK_THROWS_AS(
      softmax_rows(constant(Tensor({1, 2}, {std::nanf(""), 0.0f}))), ValueError);

  Rng rng(7);
  Tensor x = rand_tensor(rng, {5, 4}, -3.0, 3.0);
  Var s = softmax_rows(constant(x));
  for (int n = 0; n < 5; ++n) {
    double sum = 0.0;
    for (int m = 0; m < 4; ++m) {
      sum += s->value.at2(n, m);
      CHECK(s->value.at2(n, m) >= 0.0f);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
  auto err = gradcheck(
      [&](std::vector<Var>& in) { return weighted_sum(softmax_rows(in[0])); }, {x});
  CHECK(err < 1e-3);
}

TEST_CASE("matrix helpers: transpose, row ops, concat, slice, layer norm") {
  Rng rng(303);
  const Tensor a = rand_tensor(rng, {3, 4});
  const Tensor b = rand_tensor(rng, {3, 4});
  CHECK(gradcheck([&](std::vector<Var>& in) { return weighted_sum(transpose2d(in[0])); },
                  {a}) < 1e-3);
  CHECK(gradcheck([&](std::vector<Var>& in) { return weighted_sum(row_sum(in[0])); }, {a}) <
        1e-3);
  CHECK(gradcheck(
            [&](std::vector<Var>& in) { return weighted_sum(row_dot(in[0], in[1])); },
            {a, b}) < 1e-3);
  CHECK(gradcheck(
            [&](std::vector<Var>& in) {
              return weighted_sum(mul_col_bcast(in[0], in[1]));
            },
            {rand_tensor(rng, {3, 1}), a}) < 1e-3);
  CHECK(gradcheck(
            [&](std::vector<Var>& in) {
              return weighted_sum(concat_cols({in[0], in[1]}));
            },
            {a, rand_tensor(rng, {3, 2})}) < 1e-3);
  CHECK(gradcheck(
            [&](std::vector<Var>& in) { return weighted_sum(slice_cols(in[0], 1, 3)); },
            {a}) < 1e-3);
  CHECK(gradcheck(
            [&](std::vector<Var>& in) {
              return weighted_sum(layer_norm_rows(in[0], in[1], in[2], 1e-5f));
            },
            {a, rand_tensor(rng, {4}, 0.5, 1.5), rand_tensor(rng, {4})}) < 2e-3);

  Var ln = layer_norm_rows(constant(a), constant(Tensor::ones({4})),
                           constant(Tensor::zeros({4})), 1e-5f);
  for (int n = 0; n < 3; ++n) {
    double mu = 0.0;
    for (int m = 0; m < 4; ++m) mu += ln->value.at2(n, m);
    CHECK(std::abs(mu / 4.0) < 1e-5);
  }
}

TEST_CASE("conv2d identity and constant-input examples") {
  Tensor ones33({1, 3, 3});
  std::fill(ones33.data.begin(), ones33.data.end(), 1.0f);
  Tensor delta({1, 1, 3, 3});
  delta.data[4] = 1.0f;
  Var y = conv2d_nobias(constant(ones33), constant(delta), 1, 1);
  for (long i = 0; i < 9; ++i) CHECK(y->value[i] == doctest::Approx(1.0f));

  Tensor ones55({1, 5, 5});
  std::fill(ones55.data.begin(), ones55.data.end(), 1.0f);
  Tensor avg({1, 1, 3, 3});
  std::fill(avg.data.begin(), avg.data.end(), 1.0f / 9.0f);
  Var z = conv2d_nobias(constant(ones55), constant(avg), 1, 2);
  // Dilation 2 with same padding keeps extents; the center pixel sees all
  // nine taps in bounds.
  CHECK(z->value.dim(1) == 5);
  CHECK(z->value.data[2 * 5 + 2] == doctest::Approx(1.0f));

  CHECK_THROWS_AS(conv2d_nobias(constant(ones55), constant(Tensor({1, 1, 2, 2})), 1, 1),
                  ShapeError);
}

namespace {
// Direct nested-loop convolution with the same padding rule and summation
// order as the kernel under test.
Tensor conv_oracle(const Tensor& x, const Tensor& k, const Tensor* bias, int stride, int dil) {
  const int Ci = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int Co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const int py = dil * (kh - 1) / 2, px = dil * (kw - 1) / 2;
  const int Ho = (H + 2 * py - dil * (kh - 1) - 1) / stride + 1;
  const int Wo = (W + 2 * px - dil * (kw - 1) - 1) / stride + 1;
  Tensor out({Co, Ho, Wo});
  for (int co = 0; co < Co; ++co)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        double s = bias ? (*bias)[co] : 0.0;
        for (int ci = 0; ci < Ci; ++ci)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const int iy = oy * stride - py + ky * dil;
              const int ix = ox * stride - px + kx * dil;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              s += static_cast<double>(x.data[(static_cast<size_t>(ci) * H + iy) * W + ix]) *
                   k.data[((static_cast<size_t>(co) * Ci + ci) * kh + ky) * kw + kx];
            }
        out.data[(static_cast<size_t>(co) * Ho + oy) * Wo + ox] = static_cast<float>(s);
      }
  return out;
}
}  // namespace

TEST_CASE("conv2d matches the loop oracle") {
  Rng rng(404);
  for (int it = 0; it < 6; ++it) {
    const int ci = 1 + rng.next_below(3), co = 1 + rng.next_below(3);
    const int h = 3 + rng.next_below(4), w = 3 + rng.next_below(4);
    const int ks = 1 + 2 * rng.next_below(2);  // 1 or 3
    const int stride = 1 + rng.next_below(2), dil = 1 + rng.next_below(2);
    const Tensor x = rand_tensor(rng, {ci, h, w});
    const Tensor k = rand_tensor(rng, {co, ci, ks, ks});
    const Tensor b = rand_tensor(rng, {co});
    Var got = conv2d(constant(x), constant(k), constant(b), stride, dil);
    Tensor want = conv_oracle(x, k, &b, stride, dil);
    REQUIRE(got->value.shape == want.shape);
    for (long i = 0; i < want.numel(); ++i)
      CHECK(std::abs(got->value[i] - want[i]) <= 1e-6f);
  }
}

TEST_CASE("conv2d gradients vs finite differences") {
  Rng rng(505);
  for (int it = 0; it < 3; ++it) {
    const int stride = 1 + it % 2, dil = 1 + (it / 2) % 2;
    auto err = gradcheck(
        [&](std::vector<Var>& in) {
          return weighted_sum(conv2d(in[0], in[1], in[2], stride, dil));
        },
        {rand_tensor(rng, {2, 4, 5}), rand_tensor(rng, {2, 2, 3, 3}), rand_tensor(rng, {2})});
    CHECK(err < 1e-3);
  }
}

TEST_CASE("image ops: pooling, broadcasts, channel stats, shift, upsample") {
  Rng rng(606);
  const Tensor x = rand_tensor(rng, {3, 4, 5});
  CHECK(gradcheck(
            [&](std::vector<Var>& in) { return weighted_sum(global_avg_pool(in[0])); },
            {x}) < 1e-3);
  CHECK(gradcheck(
            [&](std::vector<Var>& in) {
              return weighted_sum(broadcast_spatial(in[0], 3, 2));
            },
            {rand_tensor(rng, {4, 1, 1})}) < 1e-3);
  CHECK(gradcheck(
            [&](std::vector<Var>& in) { return weighted_sum(channel_mean(in[0])); },
            {x}) < 1e-3);
  CHECK(gradcheck(
            [&](std::vector<Var>& in) { return weighted_sum(channel_max(in[0])); }, {x}) <
        1e-3);
  CHECK(gradcheck(
            [&](std::vector<Var>& in) {
              return weighted_sum(mul_channel_bcast(in[0], in[1]));
            },
            {rand_tensor(rng, {3, 1, 1}), x}) < 1e-3);
  CHECK(gradcheck(
            [&](std::vector<Var>& in) {
              return weighted_sum(mul_plane_bcast(in[0], in[1]));
            },
            {rand_tensor(rng, {1, 4, 5}), x}) < 1e-3);
  CHECK(gradcheck(
            [&](std::vector<Var>& in) { return weighted_sum(shift_image(in[0], 1, -1)); },
            {x}) < 1e-3);
  CHECK(gradcheck(
            [&](std::vector<Var>& in) {
              return weighted_sum(upsample2x_bilinear(in[0]));
            },
            {rand_tensor(rng, {2, 3, 3})}) < 1e-3);
  CHECK(gradcheck(
            [&](std::vector<Var>& in) {
              return weighted_sum(concat_channels({in[0], in[1]}));
            },
            {x, rand_tensor(rng, {2, 4, 5})}) < 1e-3);
  CHECK(gradcheck(
            [&](std::vector<Var>& in) {
              return weighted_sum(slice_channels(in[0], 1, 3));
            },
            {x}) < 1e-3);

  // Constant input stays constant through bilinear 2x upsampling.
  Var up = upsample2x_bilinear(constant(Tensor::full({1, 3, 3}, 2.5f)));
  for (long i = 0; i < up->value.numel(); ++i) CHECK(up->value[i] == doctest::Approx(2.5f));

  // Shift by (+1,0) moves content right and zero-fills the left column.
  Tensor img({1, 2, 3}, {1, 2, 3, 4, 5, 6});
  Var sh = shift_image(constant(img), 1, 0);
  CHECK(sh->value[0] == 0.0f);
  CHECK(sh->value[1] == 1.0f);
  CHECK(sh->value[3] == 0.0f);
  CHECK(sh->value[4] == 4.0f);

  Var cm = channel_mean(constant(Tensor({2, 1, 2}, {1, 3, 5, 7})));
  CHECK(cm->value[0] == doctest::Approx(3.0f));
  CHECK(cm->value[1] == doctest::Approx(5.0f));
  Var cx = channel_max(constant(Tensor({2, 1, 2}, {1, 8, 5, 7})));
  CHECK(cx->value[0] == doctest::Approx(5.0f));
  CHECK(cx->value[1] == doctest::Approx(8.0f));
}

TEST_CASE("bilinear sampling at pixel centers and between them") {
  // 1x2x2 map: values 0,1 / 2,3; integer coordinates are pixel centers.
  Tensor map({1, 2, 2}, {0.0f, 1.0f, 2.0f, 3.0f});
  std::vector<Vec2> pts = {{0.0, 0.0}, {1.0, 1.0}, {0.5, 0.5}, {-5.0, -5.0}};
  Var s = sample_bilinear(constant(map), pts);
  CHECK(s->value.at2(0, 0) == doctest::Approx(0.0f));
  CHECK(s->value.at2(1, 0) == doctest::Approx(3.0f));
  CHECK(s->value.at2(2, 0) == doctest::Approx(1.5f));
  CHECK(s->value.at2(3, 0) == doctest::Approx(0.0f));  // clamped to corner

  Rng rng(707);
  CHECK(gradcheck(
            [&](std::vector<Var>& in) {
              return weighted_sum(sample_bilinear(in[0], pts));
            },
            {rand_tensor(rng, {2, 3, 3})}) < 1e-3);
}

TEST_CASE("masked bilinear sampling renormalizes and flags holes") {
  Tensor map({1, 2, 2}, {10.0f, 20.0f, 30.0f, 40.0f});
  Tensor mask({2, 2}, {1.0f, 0.0f, 1.0f, 1.0f});
  std::vector<Vec2> pts = {{0.5, 0.0}, {0.0, 0.0}};
  std::vector<char> holes;
  Var s = sample_bilinear_masked(constant(map), mask, pts, &holes);
  // Corner (1,0) is masked out; remaining weight renormalizes to the (0,0)
  // corner alone.
  CHECK(s->value.at2(0, 0) == doctest::Approx(10.0f));
  CHECK(holes[0] == 0);
  CHECK(holes[1] == 0);

  Tensor all_hole({2, 2}, {0.0f, 0.0f, 0.0f, 0.0f});
  Var h = sample_bilinear_masked(constant(map), all_hole, pts, &holes);
  CHECK(holes[0] == 1);
  CHECK(h->value.at2(0, 0) == 0.0f);

  Rng rng(808);
  CHECK(gradcheck(
            [&](std::vector<Var>& in) {
              return weighted_sum(sample_bilinear_masked(in[0], mask, pts, nullptr));
            },
            {rand_tensor(rng, {2, 2, 2})}) < 1e-3);
}

TEST_CASE("smooth l1 masked: quadratic zone, linear zone, empty mask") {
  // d=0.05 with delta=0.1 is quadratic: 0.5*0.0025/0.1 = 0.0125.
  Tensor target({2}, {0.0f, 0.0f});
  Tensor mask1({2}, {1.0f, 0.0f});
  Var pred = constant(Tensor({2}, {0.05f, 9.0f}));
  Var l = smooth_l1_masked(pred, target, mask1, 0.1f);
  CHECK(l->value[0] == doctest::Approx(0.0125f));
  // d=0.5 is linear: 0.5 - 0.05 = 0.45; two valid entries average.
  Tensor mask2({2}, {1.0f, 1.0f});
  Var pred2 = constant(Tensor({2}, {0.05f, 0.5f}));
  CHECK(smooth_l1_masked(pred2, target, mask2, 0.1f)->value[0] ==
        doctest::Approx(0.5f * (0.0125f + 0.45f)));
  Tensor mask0({2}, {0.0f, 0.0f});
  CHECK(smooth_l1_masked(pred, target, mask0, 0.1f)->value[0] == 0.0f);

  Rng rng(909);
  Tensor t = rand_tensor(rng, {6});
  Tensor m({6}, {1, 1, 0, 1, 1, 1});
  CHECK(gradcheck(
            [&](std::vector<Var>& in) { return smooth_l1_masked(in[0], t, m, 0.02f); },
            {rand_tensor(rng, {6})}) < 1e-3);
}

TEST_CASE("reductions and reshape") {
  Rng rng(111);
  const Tensor x = rand_tensor(rng, {3, 4});
  CHECK(gradcheck([&](std::vector<Var>& in) { return sum_all(in[0]); }, {x}) < 1e-3);
  CHECK(gradcheck([&](std::vector<Var>& in) { return mean_all(square(in[0])); }, {x}) < 1e-3);
  CHECK(gradcheck(
            [&](std::vector<Var>& in) {
              return weighted_sum(reshape(in[0], {4, 3}));
            },
            {x}) < 1e-3);
}

TEST_CASE("backward consumes the graph exactly once") {
  Var x = leaf(Tensor({2}, {1.0f, 2.0f}), true);
  Var y = sum_all(square(x));
  backward(y);
  CHECK(x->grad[0] == doctest::Approx(2.0f));
  CHECK(x->grad[1] == doctest::Approx(4.0f));
  CHECK_THROWS_AS(backward(y), ValueError);
  // A fresh forward works again, accumulating into the same leaf.
  Var y2 = sum_all(square(x));
  backward(y2);
  CHECK(x->grad[0] == doctest::Approx(4.0f));
}

TEST_CASE("no tape is built under NoGradGuard") {
  Var x = leaf(Tensor({2}, {1.0f, 2.0f}), true);
  NoGradGuard ng;
  Var y = sum_all(square(x));
  CHECK_FALSE(y->requires_grad);
  CHECK(y->parents.empty());
}

TEST_CASE("multihead attention: single token, equivariance, divisibility") {
  Rng rng(121);
  ParamStore ps;
  auto mha = make_mha(ps, "mha", 6, 2, rng);
  CHECK_THROWS_AS(make_mha(ps, "bad", 6, 4, rng), ValueError);

  // One token: attention weight is 1, so the block reduces to o(v(x)).
  Tensor x1 = rand_tensor(rng, {1, 6});
  Var out1 = multihead_attention(mha, constant(x1));
  Var vproj = mha.o(mha.v(constant(x1)));
  for (long i = 0; i < 6; ++i)
    CHECK(out1->value[i] == doctest::Approx(vproj->value[i]).epsilon(1e-5));

  // Row permutation of the input permutes the output rows identically.
  Tensor x3 = rand_tensor(rng, {3, 6});
  Tensor x3p({3, 6});
  const int perm[3] = {2, 0, 1};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 6; ++c) x3p.at2(r, c) = x3.at2(perm[r], c);
  Var o = multihead_attention(mha, constant(x3));
  Var op = multihead_attention(mha, constant(x3p));
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 6; ++c)
      CHECK(op->value.at2(r, c) == doctest::Approx(o->value.at2(perm[r], c)).epsilon(1e-5));
}

TEST_CASE("multihead attention matches hand-rolled QKV arithmetic") {
  // C=2, one head; weights chosen small so the softmax stays well away from
  // saturation.
  ParamStore ps;
  Rng rng(131);
  auto mha = make_mha(ps, "mha", 2, 1, rng);
  auto set = [&](const Var& v, std::vector<float> vals) {
    REQUIRE(v->value.numel() == static_cast<long>(vals.size()));
    for (size_t i = 0; i < vals.size(); ++i) v->value[i] = vals[i];
  };
  set(mha.q.W, {0.3f, -0.1f, 0.2f, 0.4f});
  set(mha.q.b, {0.01f, -0.02f});
  set(mha.k.W, {-0.2f, 0.5f, 0.1f, 0.3f});
  set(mha.k.b, {0.0f, 0.05f});
  set(mha.v.W, {0.7f, 0.2f, -0.3f, 0.6f});
  set(mha.v.b, {0.1f, 0.0f});
  set(mha.o.W, {1.0f, 0.0f, 0.0f, 1.0f});
  set(mha.o.b, {0.0f, 0.0f});

  const double x[2][2] = {{0.5, -0.4}, {0.2, 0.8}};
  double Q[2][2], K[2][2], V[2][2];
  auto proj = [&](const Var& W, const Var& b, double out[2][2]) {
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c)
        out[r][c] = x[r][0] * W->value.at2(0, c) + x[r][1] * W->value.at2(1, c) + b->value[c];
  };
  proj(mha.q.W, mha.q.b, Q);
  proj(mha.k.W, mha.k.b, K);
  proj(mha.v.W, mha.v.b, V);
  const double scale = 1.0 / std::sqrt(2.0);
  double want[2][2];
  for (int r = 0; r < 2; ++r) {
    double s0 = (Q[r][0] * K[0][0] + Q[r][1] * K[0][1]) * scale;
    double s1 = (Q[r][0] * K[1][0] + Q[r][1] * K[1][1]) * scale;
    const double m = std::max(s0, s1);
    const double e0 = std::exp(s0 - m), e1 = std::exp(s1 - m);
    const double a0 = e0 / (e0 + e1), a1 = e1 / (e0 + e1);
    for (int c = 0; c < 2; ++c) want[r][c] = a0 * V[0][c] + a1 * V[1][c];
  }
  Tensor xt({2, 2}, {0.5f, -0.4f, 0.2f, 0.8f});
  Var got = multihead_attention(mha, constant(xt));
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c)
      CHECK(got->value.at2(r, c) == doctest::Approx(want[r][c]).epsilon(1e-5));
}

TEST_CASE("attention gradients vs finite differences") {
  Rng rng(141);
  auto err = gradcheck(
      [](std::vector<Var>& in) {
        MhaParams p;
        p.heads = 2;
        p.q.W = in[1], p.q.b = in[2];
        p.k.W = in[3], p.k.b = in[4];
        p.v.W = in[5], p.v.b = in[6];
        p.o.W = in[7], p.o.b = in[8];
        return weighted_sum(multihead_attention(p, in[0]));
      },
      {rand_tensor(rng, {3, 4}), rand_tensor(rng, {4, 4}), rand_tensor(rng, {4}),
       rand_tensor(rng, {4, 4}), rand_tensor(rng, {4}), rand_tensor(rng, {4, 4}),
       rand_tensor(rng, {4}), rand_tensor(rng, {4, 4}), rand_tensor(rng, {4})});
  CHECK(err < 1e-3);
}

TEST_CASE("batched attention equals the per-token-set computation") {
  Rng rng(151);
  ParamStore ps;
  auto tr = make_transformer(ps, "tr", 8, 2, 2, 2, rng);
  const int V = 3, M = 4;
  std::vector<Tensor> views;
  for (int v = 0; v < V; ++v) views.push_back(rand_tensor(rng, {M, 8}));
  std::vector<Var> xs;
  for (auto& t : views) xs.push_back(constant(t));
  auto enc = transformer_encode_batched(tr, xs);

  for (int m = 0; m < M; ++m) {
    Tensor tok({V, 8});
    for (int v = 0; v < V; ++v)
      for (int c = 0; c < 8; ++c) tok.at2(v, c) = views[v].at2(m, c);
    Var single = transformer_encode(tr, constant(tok));
    for (int v = 0; v < V; ++v)
      for (int c = 0; c < 8; ++c)
        CHECK(enc[static_cast<size_t>(v)]->value.at2(m, c) ==
              doctest::Approx(single->value.at2(v, c)).epsilon(1e-4));
  }
}

TEST_CASE("duplicated identical tokens aggregate to the single-token output") {
  Rng rng(161);
  ParamStore ps;
  auto tr = make_transformer(ps, "tr", 8, 4, 2, 2, rng);
  Tensor tok = rand_tensor(rng, {1, 8});
  Tensor dup({2, 8});
  for (int c = 0; c < 8; ++c) dup.at2(0, c) = dup.at2(1, c) = tok.at2(0, c);
  Var one = mean_of({transformer_encode(tr, constant(tok))});
  Var two = mean_of({transformer_encode(tr, constant(dup))});
  // mean over tokens of the duplicated set
  Var two_mean = mul_scalar(row_sum(transpose2d(two)), 0.5f);
  for (int c = 0; c < 8; ++c)
    CHECK(two_mean->value[c] == doctest::Approx(one->value[c]).epsilon(1e-5));
}

TEST_CASE("sgd and adam updates") {
  // Fresh state, zero gradient: parameters must not move.
  {
    ParamStore ps;
    Var p = ps.add("p", Tensor({2}, {1.0f, -2.0f}));
    Adam opt(ps, {});
    ps.zero_grad();
    opt.step();
    CHECK(p->value[0] == 1.0f);
    CHECK(p->value[1] == -2.0f);
  }
  // Scalar, g=1, lr=0.1, first step: bias correction gives exactly lr.
  {
    ParamStore ps;
    Var p = ps.add("p", Tensor({1}, {1.0f}));
    AdamConfig cfg;
    cfg.lr = 0.1f;
    Adam opt(ps, cfg);
    p->grad_buf()[0] = 1.0f;
    opt.step();
    CHECK(p->value[0] == doctest::Approx(0.9f).epsilon(1e-5));
  }
  {
    ParamStore ps;
    Var p = ps.add("p", Tensor({1}, {1.0f}));
    Sgd opt(ps, 0.5f);
    p->grad_buf()[0] = 2.0f;
    opt.step();
    CHECK(p->value[0] == doctest::Approx(0.0f));
    CHECK_THROWS_AS(Sgd(ps, 0.0f), ValueError);
  }
}

namespace {
// Tiny training loop used by the determinism and resume tests.
void run_steps(ParamStore& ps, Adam& opt, const Dense& d, int steps, uint64_t seed) {
  for (int s = 0; s < steps; ++s) {
    CounterRng cr(seed, 77);
    Tensor x({4, 3});
    for (long i = 0; i < x.numel(); ++i)
      x[i] = static_cast<float>(cr.uniform_at(static_cast<uint64_t>(s) * 100 + i, -1.0, 1.0));
    ps.zero_grad();
    Var loss = mean_all(square(d(constant(x))));
    backward(loss);
    opt.step();
  }
}
}  // namespace

TEST_CASE("identical seeds give bit-identical training trajectories") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    ParamStore ps;
    Dense d(ps, "d", 3, 2, rng);
    Adam opt(ps, {});
    run_steps(ps, opt, d, 5, seed);
    std::vector<float> flat;
    for (auto& [n, p] : ps.items())
      flat.insert(flat.end(), p->value.data.begin(), p->value.data.end());
    return flat;
  };
  auto a = run(42), b = run(42), c = run(43);
  REQUIRE(a.size() == b.size());
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
  bool differs = false;
  for (size_t i = 0; i < a.size() && !differs; ++i) differs = a[i] != c[i];
  CHECK(differs);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  Rng rng(171);
  std::vector<std::pair<std::string, Tensor>> items;
  items.emplace_back("enc.W", rand_tensor(rng, {3, 4}, -10.0, 10.0));
  items.emplace_back("enc.b", rand_tensor(rng, {4}, -1e-8, 1e-8));
  items.emplace_back("odd/name with spaces", rand_tensor(rng, {2, 2, 2}));
  const std::string path = "test_ckpt.pfw";
  save_tensors(path, items);
  auto back = load_tensors(path);
  REQUIRE(back.size() == items.size());
  for (size_t i = 0; i < items.size(); ++i) {
    CHECK(back[i].first == items[i].first);
    REQUIRE(back[i].second.shape == items[i].second.shape);
    CHECK(std::memcmp(back[i].second.data.data(), items[i].second.data.data(),
                      items[i].second.data.size() * sizeof(float)) == 0);
  }
  std::remove(path.c_str());

  CHECK_THROWS_AS(load_tensors("does_not_exist.pfw"), IoError);
  const std::string bad = "test_bad.pfw";
  {
    std::ofstream os(bad, std::ios::binary);
    os << "NOPE";
  }
  CHECK_THROWS_AS(load_tensors(bad), IoError);
  std::remove(bad.c_str());
}

TEST_CASE("param store load restores an exact snapshot") {
  Rng rng(181);
  ParamStore ps;
  Dense d(ps, "d", 3, 2, rng);
  auto snap = ps.snapshot();
  d.W->value[0] += 1.0f;
  ps.load(snap);
  CHECK(d.W->value[0] == snap.at("d.W")[0]);
  CHECK_THROWS_AS(ps.load(std::map<std::string, Tensor>{}), ValueError);
  CHECK_THROWS_AS(ps.add("d.W", Tensor({1})), ValueError);
  CHECK_THROWS_AS(ps.get("nope"), ValueError);
}

TEST_CASE("adam state round-trips through tensors") {
  Rng rng(191);
  auto make = [&](uint64_t seed) {
    struct Bundle {
      ParamStore ps;
      Dense d;
      std::unique_ptr<Adam> opt;
    };
    auto b = std::make_unique<Bundle>();
    Rng r(seed);
    b->d = Dense(b->ps, "d", 3, 2, r);
    b->opt = std::make_unique<Adam>(b->ps, AdamConfig{});
    return b;
  };
  auto a = make(9);
  run_steps(a->ps, *a->opt, a->d, 3, 9);

  std::vector<std::pair<std::string, Tensor>> items;
  for (auto& [n, p] : a->ps.items()) items.emplace_back(n, p->value);
  a->opt->state_tensors(items);
  save_tensors("test_resume.pfw", items);

  // Continue the original for 2 more steps.
  run_steps(a->ps, *a->opt, a->d, 2, 9);

  // Fresh bundle, restore, run the same 2 steps.
  auto b = make(9);
  auto state = load_tensor_map("test_resume.pfw");
  b->ps.load(state);
  b->opt->load_state(state);
  CHECK(b->opt->step_count() == 3);
  run_steps(b->ps, *b->opt, b->d, 2, 9);
  std::remove("test_resume.pfw");

  for (size_t j = 0; j < a->ps.items().size(); ++j) {
    const Tensor& ta = a->ps.items()[j].second->value;
    const Tensor& tb = b->ps.items()[j].second->value;
    CHECK(std::memcmp(ta.data.data(), tb.data.data(), ta.data.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("kaiming init stays inside the fan-in bound") {
  Rng rng(201);
  Tensor w = kaiming_uniform({16, 8}, 16, rng);
  const float bound = std::sqrt(6.0f / 16.0f);
  for (float v : w.data) {
    CHECK(v <= bound);
    CHECK(v >= -bound);
  }
  CHECK_THROWS_AS(kaiming_uniform({2, 2}, 0, rng), ValueError);
}

TEST_CASE("counter rng is a pure function of key and counter") {
  CounterRng a(5, 1), b(5, 1), c(5, 2);
  CHECK(a.u64_at(123) == b.u64_at(123));
  CHECK(a.u64_at(123) != c.u64_at(123));
  CHECK(a.u64_at(123) != a.u64_at(124));
  for (uint64_t i = 0; i < 100; ++i) {
    const double u = a.uniform_at(i);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(std::isfinite(a.normal_at(i)));
  }
  double lo = a.uniform_at(7, -2.0, 3.0);
  CHECK(lo >= -2.0);
  CHECK(lo < 3.0);
}

TEST_CASE("run of stateful rng is reproducible per seed") {
  Rng a(7), b(7), c(8);
  bool same = true, diff = false;
  for (int i = 0; i < 50; ++i) {
    const double va = a.uniform(), vb = b.uniform(), vc = c.uniform();
    same = same && (va == vb);
    diff = diff || (va != vc);
    CHECK(va >= 0.0);
    CHECK(va < 1.0);
  }
  CHECK(same);
  CHECK(diff);
  double m = 0.0;
  Rng g(12);
  for (int i = 0; i < 4000; ++i) m += g.normal();
  CHECK(std::abs(m / 4000.0) < 0.1);
}
