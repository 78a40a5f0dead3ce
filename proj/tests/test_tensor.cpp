#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "gradcheck.hpp"
#include "mvpose/tensor.hpp"

using namespace mvpose;
using namespace mvpose::diff;
using mvpose::testing::grad_close;
using mvpose::testing::max_grad_error;
using mvpose::testing::numeric_partial;

TEST_CASE("backward of sum of squares") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
  Tensor loss = reduce_sum(square(x));
  CHECK(loss.item() == doctest::Approx(5.0));
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward twice requires a reset") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
  Tensor loss = reduce_sum(square(x));
  backward(loss);
  CHECK_THROWS_AS(backward(loss), BackwardTwice);
  reset_backward_guard(loss);
  backward(loss);  // gradient accumulates again
  CHECK(x.grad()[0] == doctest::Approx(4.0));
}

TEST_CASE("gradients accumulate across graphs until zeroed") {
  Tensor x = Tensor::from_data({1}, {3.0}, true);
  backward(scale(x, 2.0));
  backward(scale(x, 5.0));
  CHECK(x.grad()[0] == doctest::Approx(7.0));
  x.zero_grad();
  backward(square(x));
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("elementwise ops match finite differences") {
  std::mt19937_64 rng(11);
  Tensor a = Tensor::zeros({3, 4}, true);
  Tensor b = Tensor::zeros({3, 4}, true);
  a.fill_uniform(rng, 1.5);
  b.fill_uniform(rng, 1.5);
  for (long i = 0; i < b.size(); ++i) {
    if (std::abs(b.data()[i]) < 0.2) b.data()[i] += 0.5;  // keep div well posed
    if (std::abs(a.data()[i]) < 0.05) a.data()[i] += 0.1;  // stay off |.| kink
  }
  auto loss_fn = [&] {
    Tensor mixed = add(mul(a, b), div(square(a), b));
    mixed = sub(mixed, scale(abs_val(a), 0.3));
    mixed = add(mixed, leaky_relu(add_scalar(mixed, -0.2), 0.01));
    return reduce_mean(square(mixed));
  };
  CHECK(max_grad_error(a, loss_fn) < 1e-4);
  CHECK(max_grad_error(b, loss_fn) < 1e-4);
}

TEST_CASE("sigmoid stays strictly inside (0,1)") {
  Tensor x = Tensor::from_data({5}, {-800.0, -30.0, 0.0, 30.0, 800.0}, false);
  Tensor y = sigmoid(x);
  for (long i = 0; i < y.size(); ++i) {
    CHECK(y.data()[i] > 0.0);
    CHECK(y.data()[i] < 1.0);
  }
  CHECK(y.data()[2] == doctest::Approx(0.5));
}

TEST_CASE("matmul and structural ops match finite differences") {
  std::mt19937_64 rng(23);
  Tensor a = Tensor::zeros({4, 3}, true);
  Tensor b = Tensor::zeros({3, 5}, true);
  a.fill_uniform(rng, 1.0);
  b.fill_uniform(rng, 1.0);
  auto loss_fn = [&] {
    Tensor prod = matmul(a, b);                       // [4,5]
    Tensor left = slice_cols(prod, 0, 2);             // [4,2]
    Tensor right = slice_cols(prod, 2, 3);            // [4,3]
    Tensor gathered = row_gather(right, {1, 3, 0, 2});
    Tensor glued = concat_cols({left, gathered});     // [4,5]
    Tensor weights = reduce_mean(glued);
    Tensor scaled = scale_rows(glued, row_gather(slice_cols(prod, 4, 1), {0, 1, 2, 3}));
    return add(reduce_sum(square(scaled)), weights);
  };
  CHECK(max_grad_error(a, loss_fn) < 1e-4);
  CHECK(max_grad_error(b, loss_fn) < 1e-4);
}

TEST_CASE("segment softmax rows sum to one and differentiate") {
  std::mt19937_64 rng(37);
  Tensor x = Tensor::zeros({7, 1}, true);
  x.fill_uniform(rng, 2.0);
  const std::vector<int> offsets{0, 3, 5, 7};
  Tensor soft = segment_softmax(x, offsets);
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    double sum = 0.0;
    for (int i = offsets[s]; i < offsets[s + 1]; ++i) {
      sum += soft.data()[i];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
  Tensor mix = Tensor::zeros({7, 1}, false);
  mix.fill_uniform(rng, 1.0);
  auto loss_fn = [&] {
    Tensor sm = segment_softmax(x, offsets);
    return reduce_sum(square(mul(sm, mix)));
  };
  CHECK(max_grad_error(x, loss_fn) < 1e-4);
}

TEST_CASE("segment_sum_rows pools rows per segment") {
  Tensor x = Tensor::from_data({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8}, true);
  const std::vector<int> offsets{0, 1, 4};
  Tensor pooled = segment_sum_rows(x, offsets);
  CHECK(pooled.rows() == 2);
  CHECK(pooled.at(0, 0) == doctest::Approx(1.0));
  CHECK(pooled.at(1, 0) == doctest::Approx(15.0));
  CHECK(pooled.at(1, 1) == doctest::Approx(18.0));
  auto loss_fn = [&] {
    return reduce_sum(square(segment_sum_rows(x, offsets)));
  };
  CHECK(max_grad_error(x, loss_fn) < 1e-4);
}

TEST_CASE("soft depth floor is exact identity away from the floor") {
  Tensor z = Tensor::from_data({4}, {2000.0, 180.0, 0.5, -40.0}, true);
  Tensor safe = soft_depth_floor(z, 1.0, 1.0);
  CHECK(safe.data()[0] == 2000.0);  // bitwise identity in the far field
  CHECK(safe.data()[1] == 180.0);
  CHECK(safe.data()[2] > 1.0);
  CHECK(safe.data()[3] > 1.0 - 1e-12);
  CHECK(safe.data()[3] < 1.1);
  auto loss_fn = [&] { return reduce_sum(square(soft_depth_floor(z, 1.0, 1.0))); };
  CHECK(max_grad_error(z, loss_fn) < 1e-4);
}

TEST_CASE("barrier is exactly zero for safe depths and pushes unsafe ones") {
  Tensor z = Tensor::from_data({3}, {2500.0, 5.0, -20.0}, true);
  Tensor pen = barrier_below(z, 10.0, 2.0);
  CHECK(pen.data()[0] == 0.0);
  CHECK(pen.data()[1] > 0.0);
  CHECK(pen.data()[2] > pen.data()[1]);
  auto loss_fn = [&] { return reduce_sum(barrier_below(z, 10.0, 2.0)); };
  CHECK(max_grad_error(z, loss_fn) < 1e-4);
}

TEST_CASE("bce with logits matches the uninformative baseline and differentiates") {
  Tensor logits = Tensor::from_data({4, 1}, {0.0, 0.0, 0.0, 0.0}, true);
  const std::vector<double> targets{1.0, 0.0, 1.0, 0.0};
  Tensor loss = bce_with_logits_mean(logits, targets);
  CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  std::mt19937_64 rng(5);
  logits.fill_uniform(rng, 2.0);
  auto loss_fn = [&] { return bce_with_logits_mean(logits, targets); };
  CHECK(max_grad_error(logits, loss_fn) < 1e-4);
}

TEST_CASE("adam first step is a bounded signed move") {
  const double lr = 0.05;
  Tensor p = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
  const std::vector<double> g{0.3, -4.0, 1e-12};
  AdamConfig cfg;
  cfg.lr = lr;
  Adam adam({p}, cfg);
  p.zero_grad();
  for (int i = 0; i < 3; ++i) p.node()->grad[i] = g[i];
  const std::vector<double> before = p.values();
  adam.step();
  CHECK(adam.step_count() == 1);
  for (int i = 0; i < 3; ++i) {
    const double delta = p.values()[i] - before[i];
    // hand-applied update: -lr * g / (|g| + eps)
    const double expected = -lr * g[i] / (std::abs(g[i]) + cfg.eps);
    CHECK(delta == doctest::Approx(expected).epsilon(1e-9));
    CHECK(std::abs(delta) <= lr * (1.0 + 1e-8));
  }
}

TEST_CASE("forward is deterministic bit for bit") {
  std::mt19937_64 rng(133);
  Tensor a = Tensor::zeros({8, 6}, true);
  Tensor b = Tensor::zeros({6, 4}, true);
  a.fill_uniform(rng, 1.0);
  b.fill_uniform(rng, 1.0);
  Tensor first = sigmoid(matmul(a, b));
  Tensor second = sigmoid(matmul(a, b));
  for (long i = 0; i < first.size(); ++i) {
    CHECK(first.data()[i] == second.data()[i]);
  }
}

TEST_CASE("shape mismatches are rejected") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 4});
  CHECK_THROWS_AS(add(a, b), ShapeMismatch);
  CHECK_THROWS_AS(matmul(a, Tensor::zeros({5, 2})), ShapeMismatch);
  CHECK_THROWS_AS(slice_cols(a, 2, 4), ShapeMismatch);
  CHECK_THROWS_AS(backward(a), ShapeMismatch);
}
