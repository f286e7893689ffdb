#include <doctest.h>

#include <cmath>
#include <random>
#include <string>

#include "cmsf/errors.hpp"
#include "cmsf/ops.hpp"
#include "cmsf/spike.hpp"
#include "test_support.hpp"

using namespace cmsf;
using cmsf::testing::finite_difference;
using cmsf::testing::grad_close;
using cmsf::testing::random_tensor;

namespace {

// Every element of every parameter against central differences.
void check_all_grads(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params, float step = 1e-2f,
                     double abs_tol = 1e-3, double rel_tol = 1e-2) {
  for (auto& p : params) p.zero_grad();
  loss_fn().backward();
  for (auto& p : params) {
    std::vector<float> analytic(p.grad().begin(), p.grad().end());
    analytic.resize(p.numel(), 0.0f);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double numeric = finite_difference(loss_fn, p, i, step);
      INFO("param element " << i << " analytic " << analytic[i] << " numeric " << numeric);
      CHECK(grad_close(analytic[i], numeric, abs_tol, rel_tol));
    }
  }
}

}  // namespace

TEST_CASE("matmul: identity and orthogonal cases") {
  auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto m = Tensor::from({2, 2}, {1, 2, 3, 4});
  auto out = matmul(eye, m);
  CHECK(std::vector<float>(out.data().begin(), out.data().end()) == std::vector<float>{1, 2, 3, 4});

  auto row = Tensor::from({1, 2}, {1, 0});
  auto col = Tensor::from({2, 1}, {0, 1});
  CHECK(matmul(row, col).item() == 0.0f);
}

TEST_CASE("matmul: gradient of sum matches central differences") {
  std::mt19937_64 rng(7);
  auto a = random_tensor(rng, {3, 4}, -1, 1, true);
  auto b = random_tensor(rng, {4, 2}, -1, 1, true);
  auto loss = [&] { return sum(matmul(a, b)); };
  a.zero_grad();
  b.zero_grad();
  loss().backward();
  double worst = 0.0;
  for (Tensor* p : {&a, &b}) {
    std::vector<float> g(p->grad().begin(), p->grad().end());
    for (std::size_t i = 0; i < p->numel(); ++i) {
      worst = std::max(worst, std::abs(g[i] - finite_difference(loss, *p, i, 1e-2f)));
    }
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("matmul: batched operands and shape errors") {
  std::mt19937_64 rng(8);
  auto a = random_tensor(rng, {2, 3, 4}, -1, 1, true);
  auto b = random_tensor(rng, {2, 4, 5}, -1, 1, true);
  CHECK(matmul(a, b).shape() == Shape{2, 3, 5});
  check_all_grads([&] { return sum(mul(matmul(a, b), matmul(a, b))); }, {a, b});

  auto bad = Tensor::zeros({3, 2});
  try {
    matmul(Tensor::zeros({2, 2}), bad);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,2]") != std::string::npos);
    CHECK(msg.find("[3,2]") != std::string::npos);
  }
}

TEST_CASE("layer_norm: worked examples") {
  auto gamma = Tensor::full({4}, 1.0f);
  auto beta = Tensor::zeros({4});
  auto constant = Tensor::full({1, 4}, 3.5f);
  auto normalized = layer_norm(constant, gamma, beta, 1e-5f);
  for (float v : normalized.data()) CHECK(v == 0.0f);

  std::mt19937_64 rng(3);
  auto x = random_tensor(rng, {2, 4});
  auto b = Tensor::from({4}, {0.5f, -1.0f, 2.0f, 0.0f});
  auto collapsed = layer_norm(x, Tensor::zeros({4}), b, 1e-5f);
  for (std::size_t i = 0; i < collapsed.numel(); ++i) CHECK(collapsed.at(i) == b.at(i % 4));

  CHECK_THROWS_AS(layer_norm(x, gamma, beta, 0.0f), ParameterError);
}

TEST_CASE("layer_norm: row statistics of random 4x8 input") {
  std::mt19937_64 rng(11);
  auto x = random_tensor(rng, {4, 8}, -3, 5);
  auto y = layer_norm(x, Tensor::full({8}, 1.0f), Tensor::zeros({8}), 1e-5f);
  for (std::size_t r = 0; r < 4; ++r) {
    double mu = 0, var = 0;
    for (std::size_t i = 0; i < 8; ++i) mu += y.at(r * 8 + i);
    mu /= 8;
    for (std::size_t i = 0; i < 8; ++i) var += (y.at(r * 8 + i) - mu) * (y.at(r * 8 + i) - mu);
    var /= 8;
    CHECK(std::abs(mu) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-3);
  }
}

TEST_CASE("layer_norm: gradients and idempotence") {
  std::mt19937_64 rng(12);
  auto x = random_tensor(rng, {3, 5}, -2, 2, true);
  auto g = random_tensor(rng, {5}, 0.5, 1.5, true);
  auto b = random_tensor(rng, {5}, -0.5, 0.5, true);
  auto w = random_tensor(rng, {3, 5});
  check_all_grads([&] { return sum(mul(layer_norm(x, g, b, 1e-5f), w)); }, {x, g, b});

  auto ones = Tensor::full({5}, 1.0f);
  auto zeros = Tensor::zeros({5});
  auto once = layer_norm(x, ones, zeros, 1e-5f);
  auto twice = layer_norm(once, ones, zeros, 1e-5f);
  for (std::size_t i = 0; i < once.numel(); ++i) CHECK(std::abs(once.at(i) - twice.at(i)) < 1e-4);
}

TEST_CASE("batch_norm: worked examples") {
  auto gamma = Tensor::full({1}, 1.0f);
  auto beta = Tensor::zeros({1});
  RunningStats stats;
  auto zero = batch_norm(Tensor::zeros({4, 1}), gamma, beta, stats, true);
  for (float v : zero.data()) CHECK(v == 0.0f);

  RunningStats s2;
  auto y = batch_norm(Tensor::from({2, 1}, {1, 3}), gamma, beta, s2, true);
  CHECK(y.at(0) == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(y.at(1) == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(s2.initialized);
  CHECK(s2.mean[0] == doctest::Approx(0.2));  // 0.9 * 0 + 0.1 * 2

  auto x = Tensor::from({3, 1}, {0.3f, -1.2f, 4.0f});
  auto e1 = batch_norm(x, gamma, beta, s2, false);
  auto e2 = batch_norm(x, gamma, beta, s2, false);
  for (std::size_t i = 0; i < 3; ++i) CHECK(e1.at(i) == e2.at(i));

  RunningStats empty;
  CHECK_THROWS_AS(batch_norm(x, gamma, beta, empty, false), StateError);
}

TEST_CASE("batch_norm: time-pooled statistics, gradients, idempotence") {
  std::mt19937_64 rng(13);
  // (T, B, K, D) with statistics shared over T*B*K per channel.
  auto x = random_tensor(rng, {2, 2, 3, 4}, -2, 3, true);
  auto g = random_tensor(rng, {4}, 0.5, 1.5, true);
  auto b = random_tensor(rng, {4}, -0.5, 0.5, true);
  auto w = random_tensor(rng, {2, 2, 3, 4});
  RunningStats stats;
  check_all_grads([&] { return sum(mul(batch_norm(x, g, b, stats, true), w)); }, {x, g, b});

  RunningStats s;
  auto ones = Tensor::full({4}, 1.0f);
  auto zeros = Tensor::zeros({4});
  auto once = batch_norm(x, ones, zeros, s, true);
  for (std::size_t c = 0; c < 4; ++c) {
    double mu = 0;
    for (std::size_t r = 0; r < 12; ++r) mu += once.at(r * 4 + c);
    CHECK(std::abs(mu / 12) < 1e-6);
  }
  auto twice = batch_norm(once, ones, zeros, s, true);
  for (std::size_t i = 0; i < once.numel(); ++i) CHECK(std::abs(once.at(i) - twice.at(i)) < 1e-4);

  RunningStats eval_stats = RunningStats::identity(4);
  check_all_grads([&] { return sum(mul(batch_norm(x, g, b, eval_stats, false), w)); }, {x, g, b});
}

TEST_CASE("spike_threshold: boundary, far field, surrogate gradient") {
  auto h = Tensor::from({3}, {1.0f, -1e6f, 0.999f}, true);
  auto s = spike_threshold(h, 1.0f);
  CHECK(s.tensor().at(0) == 1.0f);  // h == v_th fires
  CHECK(s.tensor().at(1) == 0.0f);
  CHECK(s.tensor().at(2) == 0.0f);
  sum(s).backward();
  CHECK(std::abs(h.grad()[1]) < 1e-9);

  // Surrogate path against finite differences of the surrogate primitive.
  std::mt19937_64 rng(5);
  auto x = random_tensor(rng, {16}, -2, 2, true);
  sum(spike_threshold(x, 0.3f)).backward();
  double worst = 0.0;
  for (std::size_t i = 0; i < 16; ++i) {
    const float step = 1e-3f;
    const double fd = (double(surrogate_primitive(x.at(i) + step - 0.3f, 2.0f)) -
                       surrogate_primitive(x.at(i) - step - 0.3f, 2.0f)) / (2.0 * step);
    worst = std::max(worst, std::abs(fd - x.grad()[i]));
  }
  CHECK(worst < 1e-3);
  CHECK(is_binary(spike_threshold(x, 0.3f)));
}

TEST_CASE("spike_threshold: tensor threshold receives negated surrogate gradient") {
  std::mt19937_64 rng(6);
  auto x = random_tensor(rng, {3, 4}, -1, 2);
  auto th = random_tensor(rng, {4}, 0.5, 1.0, true);
  auto w = random_tensor(rng, {3, 4});
  SmoothSpikeGuard smooth;
  check_all_grads([&] { return sum(mul(spike_threshold(x, th), w)); }, {th}, 1e-3f);
}

TEST_CASE("backward: analytic cases and scalar requirement") {
  auto x = Tensor::from({3}, {0.5f, -2.0f, 7.0f}, true);
  sum(x).backward();
  for (float g : x.grad()) CHECK(g == 1.0f);

  auto y = Tensor::from({2}, {1.0f, 2.0f}, true);
  sum(mul(y, y)).backward();
  CHECK(y.grad()[0] == 2.0f);
  CHECK(y.grad()[1] == 4.0f);

  CHECK_THROWS_AS(add(y, y).backward(), UsageError);
}

TEST_CASE("reductions and shape ops: gradients") {
  std::mt19937_64 rng(21);
  auto a = random_tensor(rng, {2, 3, 4}, -1, 1, true);
  auto b = random_tensor(rng, {2, 2, 4}, -1, 1, true);
  auto w3 = random_tensor(rng, {2, 3});
  check_all_grads([&] { return sum(mul(logsumexp_last(a, 3.0f), w3)); }, {a});
  auto wsm = random_tensor(rng, {2, 3, 4});
  check_all_grads([&] { return sum(mul(softmax_last(a), wsm)); }, {a});
  check_all_grads([&] { return sum(mul(l2_normalize_last(a), l2_normalize_last(a))); }, {a});
  auto wl = random_tensor(rng, {2, 3, 4});
  check_all_grads([&] { return sum(mul(l2_normalize_last(a), wl)); }, {a});
  auto wm = random_tensor(rng, {2, 4});
  check_all_grads([&] { return sum(mul(max_axis(a, 1), wm)); }, {a}, 1e-3f);
  auto wc = random_tensor(rng, {2, 5, 4});
  check_all_grads([&] { return sum(mul(concat(a, b, 1), wc)); }, {a, b});
  auto ws = random_tensor(rng, {2, 2, 4});
  check_all_grads([&] { return sum(mul(slice(a, 1, 1, 2), ws)); }, {a});
  auto wr = random_tensor(rng, {2, 6, 4});
  check_all_grads([&] { return sum(mul(repeat_interleave(a, 1, 2), wr)); }, {a});
  auto wsh = random_tensor(rng, {2, 3, 4});
  check_all_grads([&] { return sum(mul(shift(a, 1, 1), wsh)); }, {a});
  auto wsa = random_tensor(rng, {2, 4});
  check_all_grads([&] { return sum(mul(sum_axis(a, 1), wsa)); }, {a});
  auto wt = random_tensor(rng, {2, 4, 3});
  check_all_grads([&] { return sum(mul(transpose_last(a), wt)); }, {a});
  auto wst = random_tensor(rng, {2, 2, 3, 4});
  check_all_grads([&] { return sum(mul(stack({a, a}), wst)); }, {a});
  auto s = Tensor::from({}, {0.7f}, true);
  check_all_grads([&] { return sum(mul(scale_by(a, s), wsh)); }, {a, s});
  check_all_grads([&] { return sum(mul(add_scalar_tensor(a, s), wsh)); }, {a, s});
  auto row = random_tensor(rng, {4}, -1, 1, true);
  check_all_grads([&] { return sum(mul(mul_row(add_row(a, row), row), wsh)); }, {a, row});
  check_all_grads([&] { return sum(mul(softplus(a), wsh)); }, {a});
}

TEST_CASE("max_axis: ties route to the lowest index") {
  auto a = Tensor::from({1, 3}, {2.0f, 2.0f, 1.0f}, true);
  sum(max_axis(a, 1)).backward();
  CHECK(a.grad()[0] == 1.0f);
  CHECK(a.grad()[1] == 0.0f);
}

TEST_CASE("property: random op compositions match finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(100 + seed);
    auto x = random_tensor(rng, {2, 3}, -1, 1, true);
    auto w = random_tensor(rng, {3, 3}, -1, 1, true);
    auto gamma = random_tensor(rng, {3}, 0.5, 1.5, true);
    auto beta = random_tensor(rng, {3}, -0.2, 0.2, true);
    const int variant = static_cast<int>(seed % 3);
    auto loss = [&]() -> Tensor {
      Tensor h = matmul(x, w);
      if (variant == 0) h = layer_norm(h, gamma, beta, 1e-5f);
      if (variant == 1) h = softmax_last(h);
      if (variant == 2) h = l2_normalize_last(add_row(h, beta));
      return logsumexp_last(reshape(mul(h, h), {6}), 2.0f);
    };
    check_all_grads(loss, {x, w, gamma, beta}, 1e-3f);
  }
}

TEST_CASE("op counter records matmul MACs and mask multiplies") {
  ScopedOpCounter counter;
  matmul(Tensor::zeros({2, 3, 4}), Tensor::zeros({4, 5}));
  mul(Tensor::zeros({7}), Tensor::zeros({7}));
  CHECK(counter.counts().macs == 2 * 3 * 4 * 5);
  CHECK(counter.counts().mask_muls == 7);
}

TEST_CASE("no-grad guard builds no graph") {
  auto x = Tensor::from({2}, {1, 2}, true);
  NoGradGuard guard;
  auto y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
}
