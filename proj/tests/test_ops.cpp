#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "smartnet/ops.hpp"
#include "smartnet/rng.hpp"

using namespace smartnet;

TEST_CASE("conv2d on zero input is zero") {
  auto x = make_tensor<double>({2, 3, 5, 5}, 0.0);
  auto w = make_tensor<double>({4, 3, 3, 3});
  Rng rng(7);
  for (auto& v : w->v) v = rng.normal();
  auto y = conv2d<double>(nullptr, x, w, 1, 1);
  CHECK(y->shape == std::vector<int>{2, 4, 5, 5});
  for (double v : y->v) CHECK(v == 0.0);
}

TEST_CASE("conv2d 1x1 identity case") {
  auto x = make_tensor_from<double>({1, 1, 1, 1}, {3.5});
  auto w = make_tensor_from<double>({1, 1, 1, 1}, {-2.0});
  auto y = conv2d<double>(nullptr, x, w, 1, 0);
  CHECK(y->v[0] == doctest::Approx(-7.0));
}

TEST_CASE("conv2d 3x3 input with diagonal 2x2 kernel") {
  auto x = make_tensor_from<double>({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto w = make_tensor_from<double>({1, 1, 2, 2}, {1, 0, 0, 1});
  auto y = conv2d<double>(nullptr, x, w, 1, 0);
  REQUIRE(y->shape == std::vector<int>{1, 1, 2, 2});
  CHECK(y->v[0] == doctest::Approx(6.0));
  CHECK(y->v[1] == doctest::Approx(8.0));
  CHECK(y->v[2] == doctest::Approx(12.0));
  CHECK(y->v[3] == doctest::Approx(14.0));
}

TEST_CASE("conv2d stride and padding shape arithmetic") {
  auto x = make_tensor<double>({1, 2, 7, 9});
  auto w = make_tensor<double>({3, 2, 3, 3});
  auto y = conv2d<double>(nullptr, x, w, 2, 1);
  CHECK(y->shape == std::vector<int>{1, 3, 4, 5});
}

TEST_CASE("conv2d rejects channel mismatch and oversized kernels") {
  auto x = make_tensor<double>({1, 2, 4, 4});
  auto w = make_tensor<double>({1, 3, 3, 3});
  CHECK_THROWS_AS(conv2d<double>(nullptr, x, w, 1, 1), ShapeError);
  auto w2 = make_tensor<double>({1, 2, 7, 7});
  CHECK_THROWS_AS(conv2d<double>(nullptr, x, w2, 1, 1), ShapeError);
}

TEST_CASE("conv2d is linear in its input") {
  Rng rng(11);
  auto x = make_tensor<double>({1, 2, 6, 6});
  auto y = make_tensor<double>({1, 2, 6, 6});
  auto w = make_tensor<double>({3, 2, 3, 3});
  for (auto& v : x->v) v = rng.normal();
  for (auto& v : y->v) v = rng.normal();
  for (auto& v : w->v) v = rng.normal();
  const double a = 1.7, b = -0.4;
  auto mix = make_tensor<double>(x->shape);
  for (int64_t i = 0; i < x->size(); ++i) mix->v[i] = a * x->v[i] + b * y->v[i];
  auto lhs = conv2d<double>(nullptr, mix, w, 1, 1);
  auto cx = conv2d<double>(nullptr, x, w, 1, 1);
  auto cy = conv2d<double>(nullptr, y, w, 1, 1);
  for (int64_t i = 0; i < lhs->size(); ++i)
    CHECK(std::fabs(lhs->v[i] - (a * cx->v[i] + b * cy->v[i])) < 1e-10);
}

TEST_CASE("batchnorm centers a constant input to beta") {
  auto x = make_tensor<double>({2, 3, 4, 4}, 5.0);
  BNStateT<double> bn(3);
  auto y = batchnorm_forward<double>(nullptr, x, bn, BNMode::Train);
  for (double v : y->v) CHECK(v == doctest::Approx(0.0).epsilon(1e-9));

  BNStateT<double> bn2(3);
  bn2.gamma->v.assign(3, 0.0);
  bn2.beta->v.assign(3, 2.5);
  Rng rng(3);
  for (auto& v : x->v) v = rng.normal();
  auto y2 = batchnorm_forward<double>(nullptr, x, bn2, BNMode::Train);
  for (double v : y2->v) CHECK(v == doctest::Approx(2.5));
}

TEST_CASE("batchnorm hand-computed two-value batch") {
  auto x = make_tensor_from<double>({2, 1, 1, 1}, {1.0, 3.0});
  BNStateT<double> bn(1);
  auto y = batchnorm_forward<double>(nullptr, x, bn, BNMode::Train);
  CHECK(y->v[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(y->v[1] == doctest::Approx(1.0).epsilon(1e-4));
  // running stats moved toward the batch with momentum 0.1
  CHECK(bn.running_mean[0] == doctest::Approx(0.2));
  CHECK(bn.running_var[0] == doctest::Approx(0.9 + 0.1 * 1.0));
}

TEST_CASE("batchnorm survives zero variance") {
  auto x = make_tensor<double>({4, 1, 1, 1}, 7.0);
  BNStateT<double> bn(1);
  auto y = batchnorm_forward<double>(nullptr, x, bn, BNMode::Train);
  for (double v : y->v) CHECK(std::isfinite(v));
}

TEST_CASE("batchnorm training mode needs two values per channel") {
  auto x = make_tensor<double>({1, 2, 1, 1});
  BNStateT<double> bn(2);
  CHECK_THROWS_AS(batchnorm_forward<double>(nullptr, x, bn, BNMode::Train), UsageError);
  CHECK_NOTHROW(batchnorm_forward<double>(nullptr, x, bn, BNMode::Eval));
}

TEST_CASE("relu values") {
  auto x = make_tensor_from<double>({2}, {-1.0, 2.0});
  auto y = relu<double>(nullptr, x);
  CHECK(y->v[0] == 0.0);
  CHECK(y->v[1] == 2.0);
}

TEST_CASE("cross entropy of uniform logits is ln(C)") {
  auto logits = make_tensor<double>({4, 10}, 0.7);
  auto loss = softmax_cross_entropy<double>(nullptr, logits, {0, 3, 5, 9});
  CHECK(loss->v[0] == doctest::Approx(std::log(10.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy of confident correct logits") {
  auto logits = make_tensor_from<double>({1, 2}, {10.0, -10.0});
  auto loss = softmax_cross_entropy<double>(nullptr, logits, {0});
  CHECK(loss->v[0] == doctest::Approx(2.0611536e-9).epsilon(1e-4));
}

TEST_CASE("cross entropy rejects out-of-range labels") {
  auto logits = make_tensor<double>({2, 3});
  CHECK_THROWS_AS(softmax_cross_entropy<double>(nullptr, logits, {0, 3}), DomainError);
  CHECK_THROWS_AS(softmax_cross_entropy<double>(nullptr, logits, {-1, 0}), DomainError);
}

TEST_CASE("global average pool and linear") {
  auto x = make_tensor_from<double>({1, 2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
  auto pooled = global_avgpool<double>(nullptr, x);
  CHECK(pooled->v[0] == doctest::Approx(2.5));
  CHECK(pooled->v[1] == doctest::Approx(25.0));
  auto w = make_tensor_from<double>({1, 2}, {1.0, 0.1});
  auto b = make_tensor_from<double>({1}, {0.5});
  auto y = linear<double>(nullptr, pooled, w, b);
  CHECK(y->v[0] == doctest::Approx(2.5 + 2.5 + 0.5));
}

TEST_CASE("forward operations stay finite on finite inputs") {
  Rng rng(23);
  auto x = make_tensor<float>({2, 3, 8, 8});
  auto w = make_tensor<float>({4, 3, 3, 3});
  for (auto& v : x->v) v = static_cast<float>(rng.normal() * 3.0);
  for (auto& v : w->v) v = static_cast<float>(rng.normal());
  BNStateT<float> bn(4);
  auto y = batchnorm_forward<float>(nullptr, conv2d<float>(nullptr, x, w, 1, 1), bn, BNMode::Train);
  y = relu<float>(nullptr, y);
  for (float v : y->v) CHECK(std::isfinite(v));
}

TEST_CASE("deterministic forward for a fixed seed") {
  auto run = [] {
    Rng rng(99);
    auto x = make_tensor<float>({2, 2, 6, 6});
    auto w = make_tensor<float>({3, 2, 3, 3});
    for (auto& v : x->v) v = static_cast<float>(rng.normal());
    for (auto& v : w->v) v = static_cast<float>(rng.normal());
    return conv2d<float>(nullptr, x, w, 1, 1)->v;
  };
  auto a = run();
  auto b = run();
  CHECK(a == b);
}
