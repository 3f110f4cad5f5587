#include <doctest.h>

#include <cmath>

#include "grad_cases.hpp"
#include "oracles.hpp"
#include "tssl/autodiff.hpp"
#include "tssl/error.hpp"
#include "tssl/parallel.hpp"
#include "tssl/rng.hpp"
#include "tssl/special_functions.hpp"

using namespace tssl;
using tssl::testing::random_tensor;

TEST_CASE("tensor construction and shape checks") {
  const Tensor t(Shape{2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.at(1, 2) == 1.5);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK(Tensor().item() == 0.0);
  CHECK_THROWS_AS(t.item(), ShapeError);
  CHECK(Tensor::matrix(2, 2, {1, 2, 3, 4}).reshaped({4}).shape() == Shape{4});
  CHECK_THROWS_AS(t.reshaped({4}), ShapeError);
}

TEST_CASE("matmul agrees with the triple-loop oracle") {
  RngStream rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(6), k = 1 + rng.uniform_index(7), m = 1 + rng.uniform_index(5);
    const Tensor a = random_tensor(rng, {n, k}), b = random_tensor(rng, {k, m});
    ad::Graph g;
    const Tensor got = ad::matmul(g.constant(a), g.constant(b)).value();
    CHECK(max_abs_diff(got, oracle::matmul(a, b)) < 1e-12);
  }
}

TEST_CASE("conv2d agrees with direct convolution for any thread count") {
  RngStream rng(12);
  const Tensor x = random_tensor(rng, {9, 3, 7, 7}), w = random_tensor(rng, {4, 3, 3, 3}), b = random_tensor(rng, {4});
  for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 1}, std::pair{2, 0}}) {
    const Tensor ref = oracle::conv2d(x, w, b, stride, pad);
    set_thread_count(1);
    ad::Graph g1;
    const Tensor one = ad::conv2d(g1.constant(x), g1.constant(w), g1.constant(b), stride, pad).value();
    set_thread_count(4);
    ad::Graph g4;
    const Tensor four = ad::conv2d(g4.constant(x), g4.constant(w), g4.constant(b), stride, pad).value();
    set_thread_count(1);
    CHECK(max_abs_diff(one, ref) < 1e-12);
    CHECK(one == four);
  }
}

TEST_CASE("conv2d gradients are identical across thread counts") {
  RngStream rng(13);
  const Tensor x = random_tensor(rng, {19, 2, 6, 6}), w = random_tensor(rng, {3, 2, 3, 3}), b = random_tensor(rng, {3});
  auto grads = [&](std::size_t threads) {
    set_thread_count(threads);
    ad::Graph g;
    const auto vw = g.parameter(w), vb = g.parameter(b);
    const auto loss = tssl::testing::weighted_mean(ad::conv2d(g.parameter(x), vw, vb, 2, 1));
    const auto gm = g.backward(loss);
    return std::pair{gm[vw], gm[vb]};
  };
  const auto a = grads(1), c = grads(3);
  set_thread_count(1);
  CHECK(a.first == c.first);
  CHECK(a.second == c.second);
}

TEST_CASE("trailing-axis broadcasting modes") {
  ad::Graph g;
  const auto m = g.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  CHECK(ad::add(m, g.constant(Tensor::vector({10, 20, 30}))).value() ==
        Tensor::matrix(2, 3, {11, 22, 33, 14, 25, 36}));
  CHECK(ad::mul(m, g.constant(Tensor(Shape{2, 1}, std::vector<double>{2, 3}))).value() ==
        Tensor::matrix(2, 3, {2, 4, 6, 12, 15, 18}));
  CHECK(ad::sub(m, g.constant(Tensor::scalar(1))).value() == Tensor::matrix(2, 3, {0, 1, 2, 3, 4, 5}));
  CHECK_THROWS_AS(ad::add(m, g.constant(Tensor::vector({1, 2}))), ShapeError);
  CHECK_THROWS_AS(ad::matmul(m, m), ShapeError);

  // A single-row batch against a bias of the same size.
  const auto row = g.parameter(Tensor::matrix(1, 3, {1, 2, 3}));
  const auto bias = g.parameter(Tensor::vector({1, 1, 1}));
  const auto sum = ad::add(bias, row);
  CHECK(sum.shape() == Shape{1, 3});
  const auto grads = g.backward(ad::sum(ad::mul(sum, sum)));
  CHECK(grads[bias] == Tensor::vector({4, 6, 8}));
  CHECK(grads[row] == Tensor::matrix(1, 3, {4, 6, 8}));
  CHECK_THROWS_AS(ad::add(g.constant(Tensor(Shape{2, 3})), g.constant(Tensor(Shape{3, 2}))), ShapeError);
}

TEST_CASE("finite-difference checks for every primitive") {
  RngStream rng(21);
  for (const auto& c : tssl::testing::primitive_cases()) {
    for (int trial = 0; trial < 8; ++trial) {
      const auto report = ad::grad_check(c.build, c.make_params(rng));
      INFO(c.name << " trial " << trial << " worst " << report.worst);
      CHECK(report.passed);
    }
  }
}

TEST_CASE("stop_gradient blocks the adjoint and unreached parameters get zeros") {
  ad::Graph g;
  const auto x = g.parameter(Tensor::vector({1.0, 2.0}));
  const auto unused = g.parameter(Tensor::vector({3.0}));
  const auto y = ad::sum(ad::mul(ad::stop_gradient(x), ad::stop_gradient(x)));
  const auto loss = ad::add(y, ad::sum(ad::stop_gradient(unused)));
  const auto grads = g.backward(loss);
  CHECK(grads[x] == Tensor(Shape{2}, 0.0));
  CHECK(grads[unused] == Tensor(Shape{1}, 0.0));
  const auto c = g.constant(Tensor::scalar(1.0));
  CHECK_THROWS_AS(grads[c], Error);
  CHECK_THROWS_AS(g.backward(x), ShapeError);
}

TEST_CASE("mixed gradient through stop_gradient keeps the direct path") {
  // d/dx [x * sg(x)] = sg(x) = x.
  ad::Graph g;
  const auto x = g.parameter(Tensor::vector({0.5, -1.5}));
  const auto grads = g.backward(ad::sum(ad::mul(x, ad::stop_gradient(x))));
  CHECK(grads[x] == Tensor::vector({0.5, -1.5}));
}

TEST_CASE("l2_normalize counts degenerate rows") {
  ad::Graph g;
  const auto z = ad::l2_normalize(g.constant(Tensor::matrix(2, 2, {0, 0, 3, 4})));
  CHECK(g.degenerate_normalizations() == 1);
  CHECK(z.value()[0] == 0.0);
  CHECK(z.value()[2] == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("backward is deterministic") {
  RngStream rng(5);
  const Tensor a = random_tensor(rng, {4, 6}), b = random_tensor(rng, {6, 3});
  auto run = [&] {
    ad::Graph g;
    const auto va = g.parameter(a);
    const auto loss = ad::mean(ad::logsumexp(ad::matmul(ad::l2_normalize(va), g.constant(b))));
    return g.backward(loss)[va];
  };
  CHECK(run() == run());
}

TEST_CASE("special functions against references") {
  for (double x : {0.1, 0.5, 1.0, 1.5, 2.0, 3.7, 10.0, 42.5, -0.5, -2.3}) {
    CHECK(special::log_gamma(x) == doctest::Approx(std::lgamma(x)).epsilon(1e-12));
  }
  CHECK(special::digamma(1.0) == doctest::Approx(-0.5772156649015329).epsilon(1e-13));
  CHECK(special::trigamma(1.0) == doctest::Approx(M_PI * M_PI / 6.0).epsilon(1e-12));
  for (double x : {0.3, 0.9, 2.5, 7.0, 15.0}) {
    const double h = 1e-5;
    CHECK(special::digamma(x) ==
          doctest::Approx((std::lgamma(x + h) - std::lgamma(x - h)) / (2 * h)).epsilon(1e-8));
    CHECK(special::trigamma(x) ==
          doctest::Approx((special::digamma(x + h) - special::digamma(x - h)) / (2 * h)).epsilon(1e-7));
  }
  CHECK_THROWS_AS(special::digamma(0.0), DomainError);
  CHECK_THROWS_AS(special::log_gamma(-2.0), DomainError);
}
