// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "ctcsr/autograd/conv.hpp"
#include "ctcsr/autograd/ops.hpp"
#include "oracles.hpp"

using namespace ctcsr;
using oracle::fd_check;
using oracle::leaf;
using oracle::randu;

namespace {
// Weighted reduce: multiplying by a fixed random tensor before the mean keeps
// gradient structure visible (pure mean would wash out sign errors that are
// antisymmetric across coordinates).
Var<double> probe_loss(const Var<double>& v, uint64_t salt = 17) {
  Rng rng(salt);
  auto w = make_var(randu(v->value.shape(), rng, 0.5, 1.5), false);
  return mean_all(mul(v, w));
}
}  // namespace

TEST_CASE("elementwise ops match closed forms and gradients", "[autograd]") {
  Rng rng(11);

  SECTION("add/sub/mul values") {
    auto a = leaf({2, 3}, rng);
    auto b = leaf({2, 3}, rng);
    auto s = add(a, b);
    auto d = sub(a, b);
    auto m = mul(a, b);
    for (int64_t i = 0; i < 6; ++i) {
      REQUIRE(s->value[i] == Catch::Approx(a->value[i] + b->value[i]));
      REQUIRE(d->value[i] == Catch::Approx(a->value[i] - b->value[i]));
      REQUIRE(m->value[i] == Catch::Approx(a->value[i] * b->value[i]));
    }
  }

  SECTION("binary op gradients") {
    auto a = leaf({3, 4}, rng);
    auto b = leaf({3, 4}, rng);
    auto rep = fd_check([&] { return probe_loss(mul(add(a, b), sub(a, b))); }, {a, b}, rng, 8);
    REQUIRE(rep.ok(1e-6));
  }

  SECTION("scale and neg") {
    auto a = leaf({5}, rng);
    auto rep = fd_check([&] { return probe_loss(scale(neg(a), 2.5)); }, {a}, rng, 5);
    REQUIRE(rep.ok(1e-6));
  }

  SECTION("abs: values and gradient away from kink") {
    auto a = make_var(Tensor<double>({4}, {-2.0, -0.5, 0.5, 2.0}), true);
    auto y = abs_op(a);
    REQUIRE(y->value[0] == 2.0);
    REQUIRE(y->value[1] == 0.5);
    auto rep = fd_check([&] { return probe_loss(abs_op(a)); }, {a}, rng, 4);
    REQUIRE(rep.ok(1e-6));
  }

  SECTION("leaky_relu slope 0.2") {
    auto a = make_var(Tensor<double>({2}, {-1.0, 3.0}), true);
    auto y = leaky_relu(a, 0.2);
    REQUIRE(y->value[0] == Catch::Approx(-0.2));
    REQUIRE(y->value[1] == Catch::Approx(3.0));
    auto rep = fd_check([&] { return probe_loss(leaky_relu(a, 0.2)); }, {a}, rng, 2);
    REQUIRE(rep.ok(1e-6));
  }

  SECTION("sigmoid extremes: +50 rounds to exactly 1, -50 is negligible") {
    auto a = make_var(Tensor<double>({3}, {-50.0, 0.0, 50.0}), false);
    auto y = sigmoid_op(a);
    REQUIRE(y->value[0] < 1e-21);  // ~1.93e-22, below half an ulp of any unit-scale add
    REQUIRE(y->value[0] > 0.0);
    REQUIRE(y->value[1] == 0.5);
    REQUIRE(y->value[2] == 1.0);
    Tensor<float> tf({2}, {-50.0f, 50.0f});
    auto yf = sigmoid_op(make_var(std::move(tf), false));
    REQUIRE(yf->value[0] < 1e-21f);
    REQUIRE(yf->value[1] == 1.0f);
    // the low-side gate still vanishes in a residual add: u + u*sigma(-50) == u
    float u = 0.8125f;
    REQUIRE(u + u * yf->value[0] == u);
  }

  SECTION("sigmoid/gelu/softplus gradients") {
    auto a = leaf({3, 3}, rng, -2.0, 2.0);
    auto r1 = fd_check([&] { return probe_loss(sigmoid_op(a)); }, {a}, rng, 6);
    auto r2 = fd_check([&] { return probe_loss(gelu_op(a)); }, {a}, rng, 6);
    auto r3 = fd_check([&] { return probe_loss(softplus_op(a)); }, {a}, rng, 6);
    REQUIRE(r1.ok(1e-6));
    REQUIRE(r2.ok(1e-6));
    REQUIRE(r3.ok(1e-6));
  }

  SECTION("gelu uses the exact erf form") {
    auto a = make_var(Tensor<double>({1}, {1.0}), false);
    double expect = 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));
    REQUIRE(gelu_op(a)->value[0] == Catch::Approx(expect).epsilon(1e-12));
  }

  SECTION("softplus closed forms") {
    auto a = make_var(Tensor<double>({2}, {0.0, 100.0}), false);
    auto y = softplus_op(a);
    REQUIRE(y->value[0] == Catch::Approx(std::log(2.0)).epsilon(1e-12));
    REQUIRE(y->value[1] == Catch::Approx(100.0).epsilon(1e-9));  // no overflow
  }
}

TEST_CASE("reductions and shape ops", "[autograd]") {
  Rng rng(12);

  SECTION("mean/sum values") {
    auto a = make_var(Tensor<double>({2, 2}, {1.0, 2.0, 3.0, 4.0}), true);
    REQUIRE(mean_all(a)->value[0] == Catch::Approx(2.5));
    REQUIRE(sum_all(a)->value[0] == Catch::Approx(10.0));
    auto rep = fd_check([&] { return mean_all(mul(a, a)); }, {a}, rng, 4);
    REQUIRE(rep.ok(1e-6));
  }

  SECTION("concat_ch stacks along channels and routes gradients") {
    auto a = leaf({2, 3, 4, 4}, rng);
    auto b = leaf({2, 5, 4, 4}, rng);
    auto c = concat_ch<double>({a, b});
    REQUIRE(c->value.shape() == std::vector<int>{2, 8, 4, 4});
    REQUIRE(c->value[0] == a->value[0]);
    // second image, first channel of b's block
    REQUIRE(c->value.at(1, 3, 0, 0) == b->value.at(1, 0, 0, 0));
    auto rep = fd_check([&] { return probe_loss(concat_ch<double>({a, b})); }, {a, b}, rng, 6);
    REQUIRE(rep.ok(1e-6));
  }

  SECTION("reshape preserves data and gradients") {
    auto a = leaf({2, 6}, rng);
    auto r = reshape(a, {3, 4});
    REQUIRE(r->value.shape() == std::vector<int>{3, 4});
    REQUIRE(r->value[5] == a->value[5]);
    auto rep = fd_check([&] { return probe_loss(reshape(a, {4, 3})); }, {a}, rng, 4);
    REQUIRE(rep.ok(1e-6));
  }
}

TEST_CASE("channel layer norm", "[autograd]") {
  Rng rng(13);
  int n = 2, c = 5, h = 3, w = 3;
  auto x = leaf({n, c, h, w}, rng);
  auto gamma = leaf({c}, rng, 0.5, 1.5);
  auto beta = leaf({c}, rng, -0.5, 0.5);

  SECTION("normalized statistics before affine") {
    auto ones = make_var(Tensor<double>::full({c}, 1.0), false);
    auto zeros = make_var(Tensor<double>({c}), false);
    auto y = layer_norm_ch(x, ones, zeros, 1e-6);
    // At each (n, h, w) position the channel vector is standardized.
    for (int hi = 0; hi < h; ++hi)
      for (int wi = 0; wi < w; ++wi) {
        double mu = 0, var = 0;
        for (int ci = 0; ci < c; ++ci) mu += y->value.at(0, ci, hi, wi);
        mu /= c;
        for (int ci = 0; ci < c; ++ci) {
          double d = y->value.at(0, ci, hi, wi) - mu;
          var += d * d;
        }
        REQUIRE(mu == Catch::Approx(0.0).margin(1e-10));
        // variance comes out as v/(v+eps); with eps 1e-6 that is 1 - eps/v
        REQUIRE(var / c == Catch::Approx(1.0).margin(5e-4));
      }
  }

  SECTION("gradients through x, gamma, beta") {
    auto rep = fd_check([&] { return probe_loss(layer_norm_ch(x, gamma, beta, 1e-6)); },
                        {x, gamma, beta}, rng, 8);
    REQUIRE(rep.ok(1e-5));
  }
}

TEST_CASE("softmax, bmm, temperature division", "[autograd]") {
  Rng rng(14);

  SECTION("softmax rows sum to one") {
    auto x = leaf({3, 4, 5}, rng, -3.0, 3.0);
    auto y = softmax_last(x);
    for (int i = 0; i < 12; ++i) {
      double s = 0;
      for (int j = 0; j < 5; ++j) s += y->value[i * 5 + j];
      REQUIRE(s == Catch::Approx(1.0).epsilon(1e-12));
    }
    auto rep = fd_check([&] { return probe_loss(softmax_last(x)); }, {x}, rng, 10);
    REQUIRE(rep.ok(1e-5));
  }

  SECTION("softmax is shift invariant (stable for large logits)") {
    auto x = make_var(Tensor<double>({1, 1, 3}, {1000.0, 1001.0, 1002.0}), false);
    auto y = softmax_last(x);
    auto x2 = make_var(Tensor<double>({1, 1, 3}, {0.0, 1.0, 2.0}), false);
    auto y2 = softmax_last(x2);
    for (int j = 0; j < 3; ++j) REQUIRE(y->value[j] == Catch::Approx(y2->value[j]).epsilon(1e-12));
  }

  SECTION("bmm values against loops") {
    auto a = leaf({2, 3, 4}, rng);
    auto b = leaf({2, 4, 5}, rng);
    auto c = bmm(a, b);
    REQUIRE(c->value.shape() == std::vector<int>{2, 3, 5});
    for (int bi = 0; bi < 2; ++bi)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 5; ++j) {
          double acc = 0;
          for (int k = 0; k < 4; ++k)
            acc += a->value[(int64_t(bi) * 3 + i) * 4 + k] * b->value[(int64_t(bi) * 4 + k) * 5 + j];
          REQUIRE(c->value[(int64_t(bi) * 3 + i) * 5 + j] == Catch::Approx(acc).epsilon(1e-10));
        }
  }

  SECTION("bmm trans_b multiplies by the transpose") {
    auto a = leaf({2, 3, 4}, rng);
    auto bt = leaf({2, 5, 4}, rng);
    auto c = bmm(a, bt, true);
    REQUIRE(c->value.shape() == std::vector<int>{2, 3, 5});
    double acc = 0;
    for (int k = 0; k < 4; ++k) acc += a->value[k] * bt->value[k];
    REQUIRE(c->value[0] == Catch::Approx(acc).epsilon(1e-10));
  }

  SECTION("bmm gradients both orientations") {
    auto a = leaf({2, 3, 4}, rng);
    auto b = leaf({2, 4, 3}, rng);
    auto r1 = fd_check([&] { return probe_loss(bmm(a, b)); }, {a, b}, rng, 8);
    REQUIRE(r1.ok(1e-6));
    auto bt = leaf({2, 3, 4}, rng);
    auto r2 = fd_check([&] { return probe_loss(bmm(a, bt, true)); }, {a, bt}, rng, 8);
    REQUIRE(r2.ok(1e-6));
  }

  SECTION("per-head temperature division") {
    int heads = 2;
    auto x = leaf({2 * heads, 3, 3}, rng);  // batch 2, 2 heads
    auto tau = make_var(Tensor<double>({heads}, {2.0, 4.0}), true);
    auto y = div_by_head_scalar(x, tau, heads);
    REQUIRE(y->value[0] == Catch::Approx(x->value[0] / 2.0));
    // batch entry 1 is head 1 of image 0 -> divided by tau[1] = 4
    REQUIRE(y->value[9] * 4.0 == Catch::Approx(x->value[9]));
    auto rep = fd_check([&] { return probe_loss(div_by_head_scalar(x, tau, heads)); }, {x, tau},
                        rng, 8);
    REQUIRE(rep.ok(1e-6));
  }
}

TEST_CASE("channel and spatial rescaling ops", "[autograd]") {
  Rng rng(15);

  SECTION("scale_channels multiplies each channel by its gate") {
    auto x = leaf({2, 3, 2, 2}, rng);
    auto g = leaf({2, 3}, rng, 0.2, 0.9);
    auto y = scale_channels(x, g);
    REQUIRE(y->value.at(1, 2, 1, 1) ==
            Catch::Approx(x->value.at(1, 2, 1, 1) * g->value[1 * 3 + 2]));
    auto rep = fd_check([&] { return probe_loss(scale_channels(x, g)); }, {x, g}, rng, 8);
    REQUIRE(rep.ok(1e-6));
  }

  SECTION("scale_spatial multiplies every channel by the shared map") {
    auto x = leaf({2, 3, 4, 4}, rng);
    auto m = leaf({2, 1, 4, 4}, rng, 0.1, 0.9);
    auto y = scale_spatial(x, m);
    REQUIRE(y->value.at(0, 2, 3, 1) ==
            Catch::Approx(x->value.at(0, 2, 3, 1) * m->value.at(0, 0, 3, 1)));
    auto rep = fd_check([&] { return probe_loss(scale_spatial(x, m)); }, {x, m}, rng, 8);
    REQUIRE(rep.ok(1e-6));
  }

  SECTION("global_avg_pool") {
    auto x = leaf({2, 3, 4, 4}, rng);
    auto y = global_avg_pool(x);
    REQUIRE(y->value.shape() == std::vector<int>{2, 3});
    double acc = 0;
    for (int i = 0; i < 16; ++i) acc += x->value[i];
    REQUIRE(y->value[0] == Catch::Approx(acc / 16.0));
    auto rep = fd_check([&] { return probe_loss(global_avg_pool(x)); }, {x}, rng, 6);
    REQUIRE(rep.ok(1e-6));
  }
}

TEST_CASE("convolution against the loop-nest oracle", "[autograd]") {
  Rng rng(16);

  SECTION("values: stride/pad/group matrix") {
    struct Case {
      int cin, cout, k, stride, pad, groups, h;
    };
    for (const auto& c : {Case{3, 8, 3, 1, 1, 1, 7}, Case{4, 6, 3, 2, 1, 1, 8},
                          Case{6, 6, 3, 1, 1, 6, 6}, Case{4, 8, 1, 1, 0, 1, 5},
                          Case{2, 3, 4, 2, 1, 1, 8}}) {
      auto x = leaf({2, c.cin, c.h, c.h}, rng);
      auto w = leaf({c.cout, c.cin / c.groups, c.k, c.k}, rng);
      auto b = leaf({c.cout}, rng);
      auto y = conv2d(x, w, b, c.stride, c.pad, c.groups);
      auto ref = oracle::naive_conv2d(x->value, w->value, b->value, c.stride, c.pad, c.groups);
      REQUIRE(y->value.shape() == ref.shape());
      REQUIRE(oracle::max_abs_diff(y->value, ref) < 1e-10);
    }
  }

  SECTION("gradients incl. grouped depthwise") {
    auto x = leaf({1, 4, 6, 6}, rng);
    auto w = leaf({4, 1, 3, 3}, rng);
    auto b = leaf({4}, rng);
    auto rep =
        fd_check([&] { return probe_loss(conv2d(x, w, b, 1, 1, 4)); }, {x, w, b}, rng, 10);
    REQUIRE(rep.ok(1e-5));
  }

  SECTION("strided conv gradients") {
    auto x = leaf({2, 3, 8, 8}, rng);
    auto w = leaf({5, 3, 3, 3}, rng);
    auto b = leaf({5}, rng);
    auto rep = fd_check([&] { return probe_loss(conv2d(x, w, b, 2, 1, 1)); }, {x, w, b}, rng, 10);
    REQUIRE(rep.ok(1e-5));
  }

  SECTION("transposed conv values and gradients") {
    // 6x6 kernel stride 2 pad 2: exact doubling geometry used by the decoder.
    auto x = leaf({1, 3, 5, 5}, rng);
    auto w = leaf({3, 4, 6, 6}, rng);
    auto b = leaf({4}, rng);
    auto y = conv_transpose2d(x, w, b, 2, 2);
    REQUIRE(y->value.dim(2) == 10);
    auto ref = oracle::naive_conv_transpose2d(x->value, w->value, b->value, 2, 2);
    REQUIRE(oracle::max_abs_diff(y->value, ref) < 1e-10);
    auto rep =
        fd_check([&] { return probe_loss(conv_transpose2d(x, w, b, 2, 2)); }, {x, w, b}, rng, 10);
    REQUIRE(rep.ok(1e-5));
  }

  SECTION("deconv 4x4 stride 2 pad 1 (hourglass up path)") {
    auto x = leaf({1, 2, 4, 4}, rng);
    auto w = leaf({2, 3, 4, 4}, rng);
    auto b = leaf({3}, rng);
    auto y = conv_transpose2d(x, w, b, 2, 1);
    REQUIRE(y->value.dim(2) == 8);
    auto ref = oracle::naive_conv_transpose2d(x->value, w->value, b->value, 2, 1);
    REQUIRE(oracle::max_abs_diff(y->value, ref) < 1e-10);
  }
}

TEST_CASE("resampling ops", "[autograd]") {
  Rng rng(17);

  SECTION("avg_pool2 averages 2x2 blocks") {
    auto x = leaf({1, 1, 4, 4}, rng);
    auto y = avg_pool2(x);
    REQUIRE(y->value.shape() == std::vector<int>{1, 1, 2, 2});
    REQUIRE(y->value[0] ==
            Catch::Approx(0.25 * (x->value[0] + x->value[1] + x->value[4] + x->value[5])));
    auto rep = fd_check([&] { return probe_loss(avg_pool2(x)); }, {x}, rng, 6);
    REQUIRE(rep.ok(1e-6));
  }

  SECTION("bilinear_up2 exactly doubles and preserves constants") {
    auto c = make_var(Tensor<double>::full({1, 2, 3, 3}, 0.7), true);
    auto y = bilinear_up2(c);
    REQUIRE(y->value.shape() == std::vector<int>{1, 2, 6, 6});
    for (int64_t i = 0; i < y->value.numel(); ++i)
      REQUIRE(y->value[i] == Catch::Approx(0.7).epsilon(1e-12));
    auto x = leaf({1, 2, 4, 4}, rng);
    auto rep = fd_check([&] { return probe_loss(bilinear_up2(x)); }, {x}, rng, 8);
    REQUIRE(rep.ok(1e-6));
  }

  SECTION("nearest-neighbour pair") {
    auto x = leaf({1, 1, 4, 4}, rng);
    auto up = nn_up2(x);
    REQUIRE(up->value.at(0, 0, 1, 1) == x->value.at(0, 0, 0, 0));
    REQUIRE(up->value.at(0, 0, 2, 3) == x->value.at(0, 0, 1, 1));
    auto down = nn_down2(up);
    REQUIRE(oracle::max_abs_diff(down->value, x->value) == 0.0);  // decimate inverts repeat
    auto r1 = fd_check([&] { return probe_loss(nn_up2(x)); }, {x}, rng, 6);
    auto r2 = fd_check([&] { return probe_loss(nn_down2(x)); }, {x}, rng, 6);
    REQUIRE(r1.ok(1e-6));
    REQUIRE(r2.ok(1e-6));
  }
}

TEST_CASE("backward releases intermediate buffers", "[autograd]") {
  Rng rng(18);
  auto x = leaf({4, 4}, rng);
  auto h = mul(x, x);
  auto loss = mean_all(h);
  backward(loss);
  REQUIRE(h->value.numel() == 0);     // intermediate value freed
  REQUIRE(h->grad.numel() == 0);      // intermediate grad freed
  REQUIRE(x->value.numel() == 16);    // leaves keep values
  REQUIRE(x->grad.numel() == 16);     // and their gradients
  for (int64_t i = 0; i < 16; ++i)
    REQUIRE(x->grad[i] == Catch::Approx(2.0 * x->value[i] / 16.0));
}

TEST_CASE("gradient accumulation across two uses", "[autograd]") {
  Rng rng(19);
  auto x = leaf({3}, rng);
  // loss = mean(x*x + x*x): gradient doubles.
  auto loss = mean_all(add(mul(x, x), mul(x, x)));
  backward(loss);
  for (int i = 0; i < 3; ++i) REQUIRE(x->grad[i] == Catch::Approx(4.0 * x->value[i] / 3.0));
}
