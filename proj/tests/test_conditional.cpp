#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "smartnet/conditional.hpp"
#include "smartnet/dataset.hpp"
#include "smartnet/model.hpp"
#include "smartnet/optimizer.hpp"
#include "smartnet/train.hpp"

using namespace smartnet;

namespace {

TensorPtr<float> random_batch(int n, int c, int hw, uint64_t seed) {
  auto x = make_tensor<float>({n, c, hw, hw});
  Rng rng(seed);
  for (auto& v : x->v) v = static_cast<float>(rng.uniform());
  return x;
}

}  // namespace

TEST_CASE("clean weights mask the shared tensor") {
  ConditionalConvLayerT<double> layer("l", 1, 1, 2, 1, 0, 5, 6);
  layer.theta->v = {1.0, -2.0, 3.0, -4.0};
  SUBCASE("all-ones mask is the identity") {
    auto w = clean_weights<double>(nullptr, layer);
    CHECK(w->v == layer.theta->v);
  }
  SUBCASE("mask slices elements") {
    SparsityMask m(4);
    m.set(0);
    m.set(1);
    layer.mask_clean = m;
    auto w = clean_weights<double>(nullptr, layer);
    CHECK(w->v == std::vector<double>{1.0, -2.0, 0.0, 0.0});
  }
  SUBCASE("gradient of sum(clean_weights) equals the mask") {
    SparsityMask m(4);
    m.set(1);
    m.set(3);
    layer.mask_clean = m;
    TapeT<double> tape;
    auto loss = sum<double>(&tape, clean_weights<double>(&tape, layer));
    tape.backward(loss);
    CHECK(layer.theta->g == std::vector<double>{0.0, 1.0, 0.0, 1.0});
  }
}

TEST_CASE("alpha defaults to 0.25") {
  ConditionalConvLayerT<float> layer("l", 4, 2, 3, 1, 1, 1, 2);
  CHECK(layer.alpha->v[0] == doctest::Approx(0.25f));
}

TEST_CASE("adversarial weights with zero gain or zero scale reduce to the masked tensor") {
  ConditionalConvLayerT<double> layer("l", 2, 2, 3, 1, 1, 7, 8);
  auto [mc, ma] = generate_mask_pair(layer.theta->size(), 0.5, 0.5, 0.25, 3);
  layer.mask_clean = mc;
  layer.mask_adv = ma;
  auto expect = apply_mask<double>(nullptr, layer.theta, layer.mask_adv);

  layer.alpha->v[0] = 0.0;
  auto w0 = adversarial_weights<double>(nullptr, layer, 1.0);
  CHECK(w0->v == expect->v);

  layer.alpha->v[0] = 0.25;
  auto w1 = adversarial_weights<double>(nullptr, layer, 0.0);
  CHECK(w1->v == expect->v);
}

TEST_CASE("sampled noise std tracks the weight std") {
  ConditionalConvLayerT<double> layer("l", 8, 8, 3, 1, 1, 11, 13);
  Rng wr(3);
  for (auto& v : layer.theta->v) v = wr.normal() * 2.0;
  const double sigma = static_cast<double>(layer.weight_std());
  double sum = 0.0, sum2 = 0.0;
  int64_t count = 0;
  while (count < 100000) {
    adversarial_weights<double>(nullptr, layer, 1.0);
    for (double e : layer.last_eta) {
      sum += e;
      sum2 += e * e;
      ++count;
    }
  }
  const double mean = sum / static_cast<double>(count);
  const double std = std::sqrt(sum2 / static_cast<double>(count) - mean * mean);
  CHECK(std == doctest::Approx(sigma).epsilon(0.05));
  CHECK(std == doctest::Approx(2.0).epsilon(0.08));
}

TEST_CASE("perturbation magnitude is linear in lambda for fixed noise") {
  ConditionalConvLayerT<double> layer("l", 4, 4, 3, 1, 1, 17, 19);
  auto [mc, ma] = generate_mask_pair(layer.theta->size(), 0.5, 0.5, 0.25, 5);
  layer.mask_clean = mc;
  layer.mask_adv = ma;
  Rng er(23);
  layer.fixed_eta.resize(static_cast<size_t>(layer.theta->size()));
  const double sigma = static_cast<double>(layer.weight_std());
  for (auto& e : layer.fixed_eta) e = er.normal() * sigma;
  auto base = apply_mask<double>(nullptr, layer.theta, layer.mask_adv);

  const std::vector<double> lambdas{0.0, 0.25, 0.5, 1.0};
  std::vector<double> norms;
  for (double lam : lambdas) {
    auto w = adversarial_weights<double>(nullptr, layer, lam);
    double n2 = 0.0;
    for (int64_t i = 0; i < w->size(); ++i) {
      const double d = w->v[i] - base->v[i];
      n2 += d * d;
    }
    norms.push_back(std::sqrt(n2));
  }
  // least-squares fit norms = a + b*lambda, R^2 > 0.99
  double mx = 0, my = 0;
  for (size_t i = 0; i < 4; ++i) {
    mx += lambdas[i];
    my += norms[i];
  }
  mx /= 4;
  my /= 4;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < 4; ++i) {
    sxy += (lambdas[i] - mx) * (norms[i] - my);
    sxx += (lambdas[i] - mx) * (lambdas[i] - mx);
    syy += (norms[i] - my) * (norms[i] - my);
  }
  const double r2 = (sxy * sxy) / (sxx * syy);
  CHECK(r2 > 0.99);
  CHECK(norms[0] == doctest::Approx(0.0));
}

TEST_CASE("lambda=0 forward is bit-identical to the unconditional clean network") {
  ModelConfig cfg;
  cfg.base_width = 4;
  cfg.image_size = 12;
  cfg.num_classes = 5;
  SmartNet<float> net(cfg, 31);
  net.apply_mask_plan(0.5, 0.5, 0.25, 313);
  // make running stats non-trivial so eval mode is a real check
  auto warm = random_batch(8, 1, 12, 41);
  PathSelector clean{0.0};
  net.forward(nullptr, warm, clean, true, BNMode::Train);

  PlainNet<float> plain = make_plain_from_path(net, false);
  auto x = random_batch(4, 1, 12, 43);
  auto a = net.forward(nullptr, x, clean, false, BNMode::Eval);
  auto b = plain.forward(nullptr, x, BNMode::Eval);
  CHECK(a->v == b->v);

  auto at = net.forward(nullptr, x, clean, false, BNMode::TrainFrozen);
  auto bt = plain.forward(nullptr, x, BNMode::TrainFrozen);
  CHECK(at->v == bt->v);
}

TEST_CASE("lambda=1 with alpha=0 matches the unconditional adversarial network") {
  ModelConfig cfg;
  cfg.base_width = 4;
  cfg.image_size = 12;
  cfg.num_classes = 5;
  SmartNet<float> net(cfg, 37);
  net.apply_mask_plan(0.5, 0.5, 0.25, 375);
  for (auto* l : net.conv_layers()) l->alpha->v[0] = 0.0f;
  PlainNet<float> plain = make_plain_from_path(net, true);
  auto x = random_batch(4, 1, 12, 47);
  PathSelector adv{1.0};
  auto a = net.forward(nullptr, x, adv, false, BNMode::Eval);
  auto b = plain.forward(nullptr, x, BNMode::Eval);
  CHECK(a->v == b->v);
}

TEST_CASE("clean-only training leaves adversarial statistics and noise stream untouched") {
  ModelConfig cfg;
  cfg.base_width = 4;
  cfg.image_size = 10;
  cfg.num_classes = 4;
  SmartNet<float> net(cfg, 51);
  net.apply_mask_plan(0.5, 0.5, 0.25, 515);
  Dataset data = make_synthetic_dataset(32, 53, 4, 10, 1);

  std::vector<std::vector<float>> adv_stats;
  for (auto* d : net.dual_bns()) {
    adv_stats.push_back(d->bn_adv.running_mean);
    adv_stats.push_back(d->bn_adv.running_var);
  }
  const auto noise_before = net.noise_states();

  SGD<float> opt(net.registry, 0.9, 5e-4);
  auto plan = BatchPlan::make(data.size(), 8, 55);
  for (int64_t b = 0; b < batch_count(data, plan); ++b) {
    auto batch = make_batch(data, plan, b);
    opt.zero_grad();
    TapeT<float> tape;
    auto loss = compute_loss(&tape, net, batch.images, batch.labels, 0.0, true, BNMode::Train);
    tape.backward(loss);
    opt.step(0.05);
  }

  size_t k = 0;
  for (auto* d : net.dual_bns()) {
    CHECK(d->bn_adv.running_mean == adv_stats[k++]);
    CHECK(d->bn_adv.running_var == adv_stats[k++]);
  }
  CHECK(net.noise_states() == noise_before);

  // and the mirror: adversarial-only steps leave BN_C untouched
  std::vector<std::vector<float>> clean_stats;
  for (auto* d : net.dual_bns()) {
    clean_stats.push_back(d->bn_clean.running_mean);
    clean_stats.push_back(d->bn_clean.running_var);
  }
  for (int64_t b = 0; b < 2; ++b) {
    auto batch = make_batch(data, plan, b);
    opt.zero_grad();
    TapeT<float> tape;
    auto loss = compute_loss(&tape, net, batch.images, batch.labels, 1.0, true, BNMode::Train);
    tape.backward(loss);
    opt.step(0.05);
  }
  k = 0;
  for (auto* d : net.dual_bns()) {
    CHECK(d->bn_clean.running_mean == clean_stats[k++]);
    CHECK(d->bn_clean.running_var == clean_stats[k++]);
  }
}

TEST_CASE("evaluation restores the training noise streams") {
  ModelConfig cfg;
  cfg.base_width = 4;
  cfg.image_size = 10;
  cfg.num_classes = 4;
  SmartNet<float> net(cfg, 61);
  net.apply_mask_plan(0.5, 0.5, 0.25, 615);
  Dataset data = make_synthetic_dataset(20, 63, 4, 10, 1);
  const auto before = net.noise_states();
  AttackConfig attack;
  attack.epsilon = 0.05;
  attack.steps = 2;
  evaluate(net, data, 0.7, &attack, 99);
  CHECK(net.noise_states() == before);
}

TEST_CASE("noise stream advances only on adversarial forwards") {
  ModelConfig cfg;
  cfg.base_width = 4;
  cfg.image_size = 10;
  cfg.num_classes = 4;
  SmartNet<float> net(cfg, 71);
  auto x = random_batch(4, 1, 10, 73);
  const auto s0 = net.noise_states();
  PathSelector clean{0.0};
  net.forward(nullptr, x, clean, false, BNMode::Eval);
  CHECK(net.noise_states() == s0);
  PathSelector adv{0.5};
  net.forward(nullptr, x, adv, false, BNMode::Eval);
  CHECK(net.noise_states() != s0);
}
