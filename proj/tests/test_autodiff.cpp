#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "smartnet/conditional.hpp"
#include "smartnet/gradcheck.hpp"
#include "smartnet/mask.hpp"
#include "smartnet/ops.hpp"
#include "smartnet/rng.hpp"

using namespace smartnet;

TEST_CASE("backward of sum of squares") {
  auto w = make_tensor_from<double>({2}, {1.0, 2.0}, true);
  TapeT<double> tape;
  auto loss = sum<double>(&tape, mul<double>(&tape, w, w));
  tape.backward(loss);
  CHECK(w->g[0] == doctest::Approx(2.0));
  CHECK(w->g[1] == doctest::Approx(4.0));
}

TEST_CASE("constant loss leaves gradients at zero") {
  auto w = make_tensor_from<double>({2}, {1.0, 2.0}, true);
  w->ensure_grad();
  auto c = make_tensor<double>({1}, 3.0, true);
  TapeT<double> tape;
  auto loss = scale<double>(&tape, c, 2.0);
  tape.backward(loss);
  CHECK(w->g[0] == 0.0);
  CHECK(w->g[1] == 0.0);
}

TEST_CASE("second backward on the same tape is a usage error") {
  auto w = make_tensor_from<double>({2}, {1.0, 2.0}, true);
  TapeT<double> tape;
  auto loss = sum<double>(&tape, w);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), UsageError);
}

TEST_CASE("backward requires a scalar loss") {
  auto w = make_tensor_from<double>({2}, {1.0, 2.0}, true);
  TapeT<double> tape;
  auto y = mul<double>(&tape, w, w);
  CHECK_THROWS_AS(tape.backward(y), UsageError);
}

TEST_CASE("linear regression gradient is exact") {
  Rng rng(5);
  auto x = make_tensor<double>({8, 3});
  for (auto& v : x->v) v = rng.normal();
  std::vector<int> labels{0, 1, 0, 1, 1, 0, 1, 0};
  auto w = make_tensor<double>({2, 3}, 0.0, true);
  auto b = make_tensor<double>({2}, 0.0, true);
  for (auto& v : w->v) v = rng.normal() * 0.5;
  auto forward = [&](TapeT<double>* tape) {
    return softmax_cross_entropy<double>(tape, linear<double>(tape, x, w, b), labels);
  };
  CHECK(grad_check<double>(forward, {w, b}, 1e-5) < 1e-6);
}

TEST_CASE("random two-layer conv net matches finite differences") {
  Rng rng(17);
  auto x = make_tensor<double>({2, 2, 6, 6});
  for (auto& v : x->v) v = rng.uniform();
  std::vector<int> labels{1, 0};
  auto w1 = make_tensor<double>({3, 2, 3, 3}, 0.0, true);
  auto w2 = make_tensor<double>({2, 3, 3, 3}, 0.0, true);
  auto fw = make_tensor<double>({2, 2}, 0.0, true);
  auto fb = make_tensor<double>({2}, 0.0, true);
  for (auto& v : w1->v) v = rng.normal() * 0.3;
  for (auto& v : w2->v) v = rng.normal() * 0.3;
  for (auto& v : fw->v) v = rng.normal() * 0.5;
  auto forward = [&](TapeT<double>* tape) {
    auto h = relu<double>(tape, conv2d<double>(tape, x, w1, 1, 1));
    h = relu<double>(tape, conv2d<double>(tape, h, w2, 2, 1));
    auto pooled = global_avgpool<double>(tape, h);
    return softmax_cross_entropy<double>(tape, linear<double>(tape, pooled, fw, fb), labels);
  };
  CHECK(grad_check<double>(forward, {w1, w2, fw, fb}, 1e-4) < 1e-4);
}

TEST_CASE("conv + batchnorm + relu block matches finite differences") {
  Rng rng(29);
  auto x = make_tensor<double>({3, 2, 5, 5});
  for (auto& v : x->v) v = rng.uniform();
  std::vector<int> labels{0, 1, 1};
  auto w = make_tensor<double>({4, 2, 3, 3}, 0.0, true);
  for (auto& v : w->v) v = rng.normal() * 0.4;
  BNStateT<double> bn(4);
  auto fw = make_tensor<double>({2, 4}, 0.0, true);
  auto fb = make_tensor<double>({2}, 0.0, true);
  for (auto& v : fw->v) v = rng.normal() * 0.5;

  SUBCASE("batch statistics") {
    auto forward = [&](TapeT<double>* tape) {
      auto h = batchnorm_forward<double>(tape, conv2d<double>(tape, x, w, 1, 1), bn, BNMode::TrainFrozen);
      h = relu<double>(tape, h);
      auto pooled = global_avgpool<double>(tape, h);
      return softmax_cross_entropy<double>(tape, linear<double>(tape, pooled, fw, fb), labels);
    };
    CHECK(grad_check<double>(forward, {w, bn.gamma, bn.beta, fw, fb}, 1e-4) < 1e-4);
  }

  SUBCASE("running statistics") {
    bn.running_mean = {0.1, -0.2, 0.3, 0.0};
    bn.running_var = {1.2, 0.8, 1.0, 0.5};
    auto forward = [&](TapeT<double>* tape) {
      auto h = batchnorm_forward<double>(tape, conv2d<double>(tape, x, w, 1, 1), bn, BNMode::Eval);
      h = relu<double>(tape, h);
      auto pooled = global_avgpool<double>(tape, h);
      return softmax_cross_entropy<double>(tape, linear<double>(tape, pooled, fw, fb), labels);
    };
    CHECK(grad_check<double>(forward, {w, bn.gamma, bn.beta, fw, fb}, 1e-4) < 1e-4);
  }
}

TEST_CASE("masked conv gradient matches finite differences and stays masked") {
  Rng rng(31);
  auto x = make_tensor<double>({2, 1, 5, 5});
  for (auto& v : x->v) v = rng.uniform();
  std::vector<int> labels{1, 0};
  auto w = make_tensor<double>({2, 1, 3, 3}, 0.0, true);
  for (auto& v : w->v) v = rng.normal() * 0.5;
  auto [mask, unused] = generate_mask_pair(w->size(), 0.5, 0.5, 0.25, 77);
  (void)unused;
  auto fw = make_tensor<double>({2, 2}, 0.0, true);
  auto fb = make_tensor<double>({2}, 0.0, true);
  for (auto& v : fw->v) v = rng.normal() * 0.5;
  auto forward = [&](TapeT<double>* tape) {
    auto masked = apply_mask<double>(tape, w, mask);
    auto h = relu<double>(tape, conv2d<double>(tape, x, masked, 1, 1));
    auto pooled = global_avgpool<double>(tape, h);
    return softmax_cross_entropy<double>(tape, linear<double>(tape, pooled, fw, fb), labels);
  };
  CHECK(grad_check<double>(forward, {w, fw, fb}, 1e-4) < 1e-4);
  // masked positions receive exactly zero gradient
  w->zero_grad();
  TapeT<double> tape;
  auto loss = forward(&tape);
  tape.backward(loss);
  for (int64_t i = 0; i < w->size(); ++i)
    if (!mask.bit(i)) CHECK(w->g[i] == 0.0);
}

TEST_CASE("noise gain alpha matches finite differences with fixed noise") {
  Rng rng(41);
  ConditionalConvLayerT<double> layer("l0", 2, 1, 3, 1, 1, 11, 12);
  layer.fixed_eta.resize(static_cast<size_t>(layer.theta->size()));
  for (auto& v : layer.fixed_eta) v = rng.normal() * 0.2;
  auto x = make_tensor<double>({2, 1, 5, 5});
  for (auto& v : x->v) v = rng.uniform();
  std::vector<int> labels{0, 1};
  auto fw = make_tensor<double>({2, 2}, 0.0, true);
  auto fb = make_tensor<double>({2}, 0.0, true);
  for (auto& v : fw->v) v = rng.normal() * 0.5;
  auto forward = [&](TapeT<double>* tape) {
    auto w_adv = adversarial_weights<double>(tape, layer, 1.0);
    auto h = relu<double>(tape, conv2d<double>(tape, x, w_adv, 1, 1));
    auto pooled = global_avgpool<double>(tape, h);
    return softmax_cross_entropy<double>(tape, linear<double>(tape, pooled, fw, fb), labels);
  };
  CHECK(grad_check<double>(forward, {layer.theta, layer.alpha, fw, fb}, 1e-4) < 1e-4);
}

TEST_CASE("forward and backward are bit-identical across runs") {
  auto run = [] {
    Rng rng(53);
    auto x = make_tensor<float>({2, 2, 6, 6});
    auto w = make_tensor<float>({3, 2, 3, 3}, 0.0f, true);
    for (auto& v : x->v) v = static_cast<float>(rng.uniform());
    for (auto& v : w->v) v = static_cast<float>(rng.normal());
    std::vector<int> labels{0, 2};
    auto fw = make_tensor<float>({3, 3}, 0.1f, true);
    auto fb = make_tensor<float>({3}, 0.0f, true);
    TapeT<float> tape;
    auto h = relu<float>(&tape, conv2d<float>(&tape, x, w, 1, 1));
    auto pooled = global_avgpool<float>(&tape, h);
    auto loss = softmax_cross_entropy<float>(&tape, linear<float>(&tape, pooled, fw, fb), labels);
    tape.backward(loss);
    auto out = w->g;
    out.insert(out.end(), loss->v.begin(), loss->v.end());
    return out;
  };
  auto a = run();
  auto b = run();
  CHECK(a == b);
}
