#include <cmath>
#include <cstdlib>
#include <vector>

#include "bgcut/runtime.hpp"
#include "bgcut/tape.hpp"
#include "bgcut/tensor.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace bgcut;
using testutil::conv2d_naive;
using testutil::grad_check;
using testutil::random_tensor;

namespace {

ValueT<double> no_bias_d(TapeD& tape) { return tape.constant(TensorD{}); }

}  // namespace

TEST_CASE("conv2d output extent formula") {
  for (int in : {3, 7, 8, 17})
    for (int k : {1, 3, 4})
      for (int stride : {1, 2})
        for (int pad : {0, 1})
          for (int dil : {1, 2}) {
            Conv2dSpec s{stride, pad, dil};
            const int eff = dil * (k - 1) + 1;
            if (in + 2 * pad < eff) continue;
            const int expect = (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
            CHECK(conv_out_extent(in, k, s) == expect);
          }
}

TEST_CASE("conv2d identity kernel") {
  Tape tape;
  tape.set_recording(false);
  Tensor x = Tensor::from_data({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor w = Tensor::from_data({1, 1, 1, 1}, {1});
  auto y = tape.conv2d(tape.constant(x), tape.constant(w), tape.constant(Tensor{}), Conv2dSpec{});
  REQUIRE(y.tensor.same_shape(x));
  CHECK(bitwise_equal(y.tensor, x));
}

TEST_CASE("conv2d matches direct reference over stride/pad/dilation grid") {
  Rng rng(7);
  for (int stride : {1, 2})
    for (int pad : {0, 1})
      for (int dil : {1, 2}) {
        Conv2dSpec s{stride, pad, dil};
        Tensor x = random_tensor<float>({2, 3, 8, 8}, rng);
        Tensor w = random_tensor<float>({4, 3, 3, 3}, rng);
        Tensor b = random_tensor<float>({4}, rng);
        Tape tape;
        tape.set_recording(false);
        auto fast = tape.conv2d(tape.constant(x), tape.constant(w), tape.constant(b), s);
        Tensor ref = conv2d_naive(x, w, b.data(), s);
        REQUIRE(fast.tensor.same_shape(ref));
        CHECK(max_abs_diff(fast.tensor, ref) < 1e-5f);
      }
}

TEST_CASE("conv2d_transpose shape law and exact doubling") {
  Rng rng(3);
  TensorD x = random_tensor<double>({1, 1, 4, 4}, rng);
  TensorD w = random_tensor<double>({1, 1, 4, 4}, rng);
  TapeD tape;
  tape.set_recording(false);
  auto y = tape.conv2d_transpose(tape.constant(x), tape.constant(w), no_bias_d(tape), 2, 1);
  CHECK(y.tensor.shape() == Shape{1, 1, 8, 8});
  CHECK(conv_transpose_out_extent(4, 4, 2, 1) == 8);
  CHECK(conv_transpose_out_extent(16, 4, 2, 1) == 32);
}

TEST_CASE("conv2d_transpose equals input-gradient of conv2d") {
  Rng rng(11);
  const int stride = 2, pad = 1, k = 4;
  const int cin = 3, cout = 2;  // transpose maps cin -> cout
  TensorD small = random_tensor<double>({2, cin, 5, 5}, rng);
  TensorD w = random_tensor<double>({cin, cout, k, k}, rng);

  TapeD tape;
  tape.set_recording(false);
  auto up = tape.conv2d_transpose(tape.constant(small), tape.constant(w), no_bias_d(tape), stride, pad);

  // The adjoint view: conv with weights [cin,cout,k,k] read as a [Cout=cin,
  // Cin=cout] kernel maps the large grid back to the small one, so its data
  // backward scatters `small` onto the large grid.
  TensorD gx({2, cout, up.tensor.dim(2), up.tensor.dim(3)});
  conv2d_backward_data(w, small, Conv2dSpec{stride, pad, 1}, gx);
  REQUIRE(gx.same_shape(up.tensor));
  CHECK(max_abs_diff(gx, up.tensor) < 1e-6);
}

TEST_CASE("gradient checks over randomized shapes: conv family") {
  Rng rng(21);
  int shapes_checked = 0;
  for (int trial = 0; trial < 12; ++trial) {
    std::uniform_int_distribution<int> di(3, 7), dc(1, 3), dn(1, 2);
    const int n = dn(rng), cin = dc(rng), cout = dc(rng), h = di(rng), w = di(rng);
    const int k = 1 + 2 * (trial % 2);
    Conv2dSpec spec{1 + trial % 2, trial % 2, 1 + (trial / 2) % 2};
    if (h + 2 * spec.pad < spec.dilation * (k - 1) + 1) continue;
    VariableT<double> vx(random_tensor<double>({n, cin, h, w}, rng));
    VariableT<double> vw(random_tensor<double>({cout, cin, k, k}, rng));
    VariableT<double> vb(random_tensor<double>({cout}, rng));
    auto res = grad_check({&vx, &vw, &vb}, [&](TapeD& t) {
      auto y = t.conv2d(t.leaf(vx), t.leaf(vw), t.leaf(vb), spec);
      return t.sum_all(t.mul(y, y));
    }, 1e-4, 40);
    CHECK(res.max_rel < 1e-4);
    ++shapes_checked;
  }
  for (int trial = 0; trial < 8; ++trial) {
    std::uniform_int_distribution<int> di(3, 6), dc(1, 3);
    const int cin = dc(rng), cout = dc(rng), h = di(rng), w = di(rng);
    VariableT<double> vx(random_tensor<double>({1, cin, h, w}, rng));
    VariableT<double> vw(random_tensor<double>({cin, cout, 4, 4}, rng));
    VariableT<double> vb(random_tensor<double>({cout}, rng));
    auto res = grad_check({&vx, &vw, &vb}, [&](TapeD& t) {
      auto y = t.conv2d_transpose(t.leaf(vx), t.leaf(vw), t.leaf(vb), 2, 1);
      return t.sum_all(t.mul(y, y));
    }, 1e-4, 40);
    CHECK(res.max_rel < 1e-4);
    ++shapes_checked;
  }
  CHECK(shapes_checked >= 20);
}

TEST_CASE("gradient checks: pointwise, pooling, resize, losses") {
  Rng rng(31);
  for (int trial = 0; trial < 6; ++trial) {
    std::uniform_int_distribution<int> di(2, 5);
    const int n = 1 + trial % 2, c = di(rng), h = di(rng), w = di(rng);
    VariableT<double> va(random_tensor<double>({n, c, h, w}, rng));
    VariableT<double> vb(random_tensor<double>({n, c, h, w}, rng));
    auto res = grad_check({&va, &vb}, [&](TapeD& t) {
      auto s = t.add(t.relu(t.leaf(va)), t.mul(t.leaf(vb), t.leaf(vb)));
      return t.sum_all(t.mul(s, s));
    }, 1e-4);
    CHECK(res.max_rel < 1e-4);
  }
  {
    VariableT<double> va(random_tensor<double>({2, 3, 4, 5}, rng));
    VariableT<double> vb(random_tensor<double>({2, 2, 4, 5}, rng));
    auto res = grad_check({&va, &vb}, [&](TapeD& t) {
      auto y = t.concat_channels({t.leaf(va), t.leaf(vb)});
      return t.sum_all(t.mul(y, y));
    }, 1e-4);
    CHECK(res.max_rel < 1e-4);
  }
  {
    VariableT<double> vx(random_tensor<double>({2, 3, 4, 4}, rng));
    auto res = grad_check({&vx}, [&](TapeD& t) {
      auto g = t.global_avg_pool(t.leaf(vx));
      auto u = t.upsample_tile(g, 4, 4);
      return t.sum_all(t.mul(u, u));
    }, 1e-4);
    CHECK(res.max_rel < 1e-4);
  }
  {
    VariableT<double> vx(random_tensor<double>({1, 2, 3, 3}, rng));
    auto res = grad_check({&vx}, [&](TapeD& t) {
      auto u = t.upsample_bilinear(t.leaf(vx), 7, 5);
      return t.sum_all(t.mul(u, u));
    }, 1e-4);
    CHECK(res.max_rel < 1e-4);
  }
  {
    VariableT<double> vx(random_tensor<double>({1, 2, 4, 4}, rng, 0.3, 1.7));
    TensorT<int> labels({1, 4, 4});
    for (std::int64_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 2);
    auto res = grad_check({&vx}, [&](TapeD& t) {
      return t.softmax_ce_loss(t.leaf(vx), labels, 255);
    }, 1e-4);
    CHECK(res.max_rel < 1e-4);
  }
  {
    Rng r2(5);
    VariableT<double> vx(random_tensor<double>({2, 2, 3, 3}, r2));
    TensorD target = random_tensor<double>({2, 2, 3, 3}, r2);
    auto res = grad_check({&vx}, [&](TapeD& t) {
      auto p = t.softmax_channel(t.leaf(vx));
      return t.l2_loss(p, target);
    }, 1e-4);
    CHECK(res.max_rel < 1e-6 * 100);  // softmax+l2 composite stays well inside 1e-4
  }
  {
    VariableT<double> vx(random_tensor<double>({1, 3, 4, 4}, rng));
    auto res = grad_check({&vx}, [&](TapeD& t) {
      auto p = t.zero_pad2d(t.leaf(vx), 1, 2, 0, 1);
      auto c = t.crop2d(p, 1, 0, 4, 4);
      return t.sum_all(t.mul(c, c));
    }, 1e-4);
    CHECK(res.max_rel < 1e-4);
  }
  {
    VariableT<double> vx(random_tensor<double>({2, 3, 2, 2}, rng));
    TensorD wts = random_tensor<double>({2, 3, 2, 2}, rng);
    auto res = grad_check({&vx}, [&](TapeD& t) {
      return t.weighted_sum(t.leaf(vx), wts);
    }, 1e-4);
    CHECK(res.max_rel < 1e-4);
  }
  {
    VariableT<double> vx(random_tensor<double>({2, 4, 3, 3}, rng));
    auto res = grad_check({&vx}, [&](TapeD& t) {
      auto r = t.reshape(t.leaf(vx), {1, 8, 3, 3});
      return t.sum_all(t.mul(r, r));
    }, 1e-4);
    CHECK(res.max_rel < 1e-4);
  }
  {
    VariableT<double> vx(random_tensor<double>({2, 3, 2, 2}, rng));
    auto res = grad_check({&vx}, [&](TapeD& t) {
      auto r = t.repeat_batch(t.leaf(vx), 3);
      auto s = t.scale(r, 0.5);
      return t.sum_all(t.mul(s, s));
    }, 1e-4);
    CHECK(res.max_rel < 1e-4);
  }
}

TEST_CASE("gradient check: batch_norm training mode") {
  // The probe loss must not be symmetric under the normalization (sum of
  // squares of BN output is independent of x), so weigh the output with
  // fixed random coefficients.
  Rng rng(41);
  VariableT<double> vx(random_tensor<double>({4, 3, 5, 5}, rng));
  VariableT<double> gamma(TensorD::full({3}, 1.0));
  VariableT<double> beta(TensorD::full({3}, 0.0));
  fill_uniform(gamma.value, 0.5, 1.5, rng);
  fill_uniform(beta.value, -0.5, 0.5, rng);
  TensorD wts = random_tensor<double>({4, 3, 5, 5}, rng);
  auto res = grad_check({&vx, &gamma, &beta}, [&](TapeD& t) {
    TensorD rm = TensorD::full({3}, 0.0), rv = TensorD::full({3}, 1.0);
    auto y = t.batch_norm(t.leaf(vx), gamma, beta, rm, rv, true);
    return t.weighted_sum(y, wts);
  }, 1e-4, 60);
  CHECK(res.max_rel < 1e-4);
}

TEST_CASE("batch_norm normalizes batch statistics and maintains running stats") {
  Rng rng(51);
  Tensor x = random_tensor<float>({8, 2, 6, 6}, rng, -3.0, 5.0);
  VariableT<float> gamma(Tensor::full({2}, 1.0f));
  VariableT<float> beta(Tensor::full({2}, 0.0f));
  Tensor rm = Tensor::full({2}, 0.0f), rv = Tensor::full({2}, 1.0f);
  Tape tape;
  tape.set_recording(false);
  auto y = tape.batch_norm(tape.constant(x), gamma, beta, rm, rv, true);

  const std::int64_t m = 8 * 6 * 6;
  for (int c = 0; c < 2; ++c) {
    double sum = 0, sq = 0, bsum = 0, bsq = 0;
    for (int n = 0; n < 8; ++n)
      for (int h = 0; h < 6; ++h)
        for (int w = 0; w < 6; ++w) {
          sum += y.tensor.at(n, c, h, w);
          sq += y.tensor.at(n, c, h, w) * y.tensor.at(n, c, h, w);
          bsum += x.at(n, c, h, w);
          bsq += x.at(n, c, h, w) * x.at(n, c, h, w);
        }
    CHECK(std::abs(sum / m) < 1e-5);
    CHECK(std::abs(sq / m - 1.0) < 1e-4);
    const double bmean = bsum / m;
    const double bvar = bsq / m - bmean * bmean;  // biased variance
    CHECK(rm[c] == doctest::Approx(0.9 * 0.0 + 0.1 * bmean).epsilon(1e-4));
    CHECK(rv[c] == doctest::Approx(0.9 * 1.0 + 0.1 * bvar).epsilon(1e-4));
  }

  // Inference mode uses the running stats, not the batch.
  Tensor rm2 = Tensor::full({2}, 1.0f), rv2 = Tensor::full({2}, 4.0f);
  auto z = tape.batch_norm(tape.constant(x), gamma, beta, rm2, rv2, false);
  const float expect = (x.at(0, 0, 0, 0) - 1.0f) / std::sqrt(4.0f + 1e-5f);
  CHECK(z.tensor.at(0, 0, 0, 0) == doctest::Approx(expect).epsilon(1e-5));
}

TEST_CASE("softmax_channel values and invariances") {
  Tape tape;
  tape.set_recording(false);
  Tensor x = Tensor::from_data({1, 2, 1, 2}, {2.0f, 5.0f, 0.0f, 5.0f});
  auto p = tape.softmax_channel(tape.constant(x));
  // logits (2,0)
  CHECK(p.tensor.at(0, 0, 0, 0) == doctest::Approx(0.8807970779778823).epsilon(1e-6));
  CHECK(p.tensor.at(0, 1, 0, 0) == doctest::Approx(0.11920292202211755).epsilon(1e-6));
  // equal logits
  CHECK(p.tensor.at(0, 0, 0, 1) == doctest::Approx(0.5).epsilon(1e-6));
  // per-pixel sums
  for (int w = 0; w < 2; ++w)
    CHECK(p.tensor.at(0, 0, 0, w) + p.tensor.at(0, 1, 0, w) == doctest::Approx(1.0).epsilon(1e-6));
  // shift invariance
  Tensor xs = x.clone();
  xs.at(0, 0, 0, 0) += 100.0f;
  xs.at(0, 1, 0, 0) += 100.0f;
  auto ps = tape.softmax_channel(tape.constant(xs));
  CHECK(std::abs(ps.tensor.at(0, 0, 0, 0) - p.tensor.at(0, 0, 0, 0)) < 1e-6f);
}

TEST_CASE("softmax_ce_loss values, ignore handling, empty error") {
  Tape tape;
  tape.set_recording(false);
  {
    Tensor s = Tensor::from_data({1, 2, 1, 1}, {1.0f, 0.0f});
    TensorT<int> lab = TensorT<int>::from_data({1, 1, 1}, {1});
    auto l = tape.softmax_ce_loss(tape.constant(s), lab, 255);
    CHECK(l.tensor[0] == doctest::Approx(1.3132616875182228).epsilon(1e-6));
  }
  {
    Tensor s({1, 2, 2, 2});  // uniform zero scores
    TensorT<int> lab({1, 2, 2});
    auto l = tape.softmax_ce_loss(tape.constant(s), lab, 255);
    CHECK(l.tensor[0] == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  }
  {
    Tensor s({1, 2, 2, 2});
    for (int h = 0; h < 2; ++h)
      for (int w = 0; w < 2; ++w) {
        s.at(0, 0, h, w) = 20.0f;  // strongly background, matching labels
      }
    TensorT<int> lab({1, 2, 2});
    auto l = tape.softmax_ce_loss(tape.constant(s), lab, 255);
    CHECK(l.tensor[0] < 0.01f);
  }
  {
    // Ignored pixels do not contribute: loss equals the lone counted
    // pixel's value exactly. NCHW layout: channel planes are contiguous,
    // so pixel 0 has logits (9, -4) and pixel 1 (ignored) has (0, 7).
    Tensor s = Tensor::from_data({1, 2, 1, 2}, {9.0f, 0.0f, -4.0f, 7.0f});
    TensorT<int> lab = TensorT<int>::from_data({1, 1, 2}, {0, 255});
    auto l = tape.softmax_ce_loss(tape.constant(s), lab, 255);
    CHECK(l.tensor[0] == doctest::Approx(std::log1p(std::exp(-13.0))).epsilon(1e-3));
    CHECK(l.tensor[0] < 1e-4f);
  }
  {
    Tensor s({1, 2, 1, 1});
    TensorT<int> lab = TensorT<int>::from_data({1, 1, 1}, {255});
    CHECK_THROWS_AS(tape.softmax_ce_loss(tape.constant(s), lab, 255), Error);
    try {
      tape.softmax_ce_loss(tape.constant(s), lab, 255);
    } catch (const Error& e) {
      CHECK(e.code() == Errc::empty_input);
    }
  }
}

TEST_CASE("l2_loss values") {
  Tape tape;
  tape.set_recording(false);
  Tensor a = Tensor::full({2, 3}, 1.5f);
  auto z = tape.l2_loss(tape.constant(a), a);
  CHECK(z.tensor[0] == 0.0f);
  Tensor b = Tensor::full({2, 3}, 0.5f);
  auto o = tape.l2_loss(tape.constant(a), b);
  CHECK(o.tensor[0] == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("global_avg_pool values") {
  Tape tape;
  tape.set_recording(false);
  Tensor c7 = Tensor::full({1, 1, 3, 5}, 7.0f);
  CHECK(tape.global_avg_pool(tape.constant(c7)).tensor[0] == doctest::Approx(7.0));
  Tensor q = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(tape.global_avg_pool(tape.constant(q)).tensor[0] == doctest::Approx(2.5));
}

TEST_CASE("upsample tile and bilinear") {
  Tape tape;
  tape.set_recording(false);
  Tensor one = Tensor::full({1, 1, 1, 1}, 3.0f);
  auto t4 = tape.upsample_tile(tape.constant(one), 4, 4);
  for (std::int64_t i = 0; i < t4.tensor.size(); ++i) CHECK(t4.tensor[i] == 3.0f);
  auto g = tape.global_avg_pool(t4);
  CHECK(g.tensor[0] == doctest::Approx(3.0));

  Tensor q = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  auto up = tape.upsample_bilinear(tape.constant(q), 4, 4);
  // Hand table from the align-corners-false axis weights
  // rows/cols: [1,0], [3/4,1/4], [1/4,3/4], [0,1].
  const float expect[16] = {1.0f, 1.25f, 1.75f, 2.0f,  1.5f, 1.75f, 2.25f, 2.5f,
                            2.5f, 2.75f, 3.25f, 3.5f,  3.0f, 3.25f, 3.75f, 4.0f};
  for (int i = 0; i < 16; ++i) CHECK(up.tensor[i] == doctest::Approx(expect[i]).epsilon(1e-6));

  CHECK_THROWS_AS(tape.upsample_bilinear(tape.constant(up.tensor), 2, 2), Error);
  CHECK_THROWS_AS(tape.upsample_tile(tape.constant(q), 4, 4), Error);
}

TEST_CASE("relu add concat semantics and shape errors") {
  Tape tape;
  tape.set_recording(false);
  Tensor x = Tensor::from_data({1, 1, 1, 2}, {-1.0f, 2.0f});
  auto r = tape.relu(tape.constant(x));
  CHECK(r.tensor[0] == 0.0f);
  CHECK(r.tensor[1] == 2.0f);

  Tensor a({1, 2, 3, 3}), b({1, 3, 3, 3});
  CHECK_THROWS_AS(tape.add(tape.constant(a), tape.constant(b)), Error);
  auto c = tape.concat_channels({tape.constant(a), tape.constant(b)});
  CHECK(c.tensor.shape() == Shape{1, 5, 3, 3});
  Tensor d({2, 2, 3, 3});
  CHECK_THROWS_AS(tape.concat_channels({tape.constant(a), tape.constant(d)}), Error);
}

TEST_CASE("repeat_batch pairs rows in window order") {
  Tape tape;
  tape.set_recording(false);
  Tensor x = Tensor::from_data({2, 1, 1, 1}, {10.0f, 20.0f});
  auto y = tape.repeat_batch(tape.constant(x), 3);
  REQUIRE(y.tensor.shape() == Shape{6, 1, 1, 1});
  const float expect[6] = {10, 10, 10, 20, 20, 20};
  for (int i = 0; i < 6; ++i) CHECK(y.tensor[i] == expect[i]);
}

TEST_CASE("unused variables keep exactly zero grad; grads accumulate across tapes") {
  Rng rng(61);
  VariableT<float> used(random_tensor<float>({1, 2, 3, 3}, rng));
  VariableT<float> unused(random_tensor<float>({1, 2, 3, 3}, rng));
  {
    Tape tape;
    auto lu = tape.leaf(used);
    (void)tape.leaf(unused);
    auto loss = tape.sum_all(tape.mul(lu, lu));
    tape.backward(loss);
  }
  Tensor zero = Tensor::zeros_like(unused.grad);
  CHECK(bitwise_equal(unused.grad, zero));
  Tensor first = used.grad.clone();

  // A second identical pass on a fresh tape adds the same contribution, so
  // without zero_grad() the accumulated grad is exactly double.
  {
    Tape tape;
    auto lu = tape.leaf(used);
    auto loss = tape.sum_all(tape.mul(lu, lu));
    tape.backward(loss);
  }
  Tensor doubled = first.clone();
  scale_inplace(doubled, 2.0f);
  CHECK(bitwise_equal(used.grad, doubled));

  used.zero_grad();
  CHECK(bitwise_equal(used.grad, zero));
}

TEST_CASE("forward+backward deterministic bitwise across runs and thread counts") {
  auto run = [](int threads) {
    set_max_threads(threads);
    Rng rng(99);
    VariableT<float> vx(random_tensor<float>({2, 3, 9, 9}, rng));
    VariableT<float> vw(random_tensor<float>({4, 3, 3, 3}, rng));
    Tape tape;
    auto y = tape.conv2d(tape.leaf(vx), tape.leaf(vw), tape.constant(Tensor{}), Conv2dSpec{2, 1, 1});
    auto loss = tape.sum_all(tape.mul(y, y));
    tape.backward(loss);
    return std::make_pair(y.tensor.clone(), vw.grad.clone());
  };
  auto [y1, g1] = run(1);
  auto [y1b, g1b] = run(1);
  CHECK(bitwise_equal(y1, y1b));
  CHECK(bitwise_equal(g1, g1b));
  auto [y4, g4] = run(4);
  CHECK(bitwise_equal(y1, y4));
  CHECK(bitwise_equal(g1, g4));
  set_max_threads(1);
}

TEST_CASE("finite checking flags NaN results") {
  Tape tape;
  tape.set_recording(false);
  tape.set_check_finite(true);
  Tensor x = Tensor::full({1, 1, 1, 1}, std::numeric_limits<float>::infinity());
  CHECK_THROWS_AS(tape.relu(tape.constant(x)), Error);
}
