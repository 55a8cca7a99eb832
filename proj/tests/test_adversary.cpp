#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "smartnet/adversary.hpp"
#include "smartnet/ops.hpp"
#include "smartnet/rng.hpp"

using namespace smartnet;

namespace {

// loss(x) = sum(w ⊙ x) for a constant w
InputLossFn<double> dot_loss(std::vector<double> w) {
  return [w = std::move(w)](TapeT<double>* tape, const TensorPtr<double>& x) {
    auto wc = make_tensor_from<double>(x->shape, std::vector<double>(w));
    return sum<double>(tape, mul<double>(tape, x, wc));
  };
}

// loss(x) = ||x - t||^2
InputLossFn<double> dist_loss(std::vector<double> t) {
  return [t = std::move(t)](TapeT<double>* tape, const TensorPtr<double>& x) {
    std::vector<double> neg(t.size());
    for (size_t i = 0; i < t.size(); ++i) neg[i] = -t[i];
    auto tc = make_tensor_from<double>(x->shape, std::move(neg));
    auto d = add<double>(tape, x, tc);
    return sum<double>(tape, mul<double>(tape, d, d));
  };
}

double eval_loss(const InputLossFn<double>& fn, const TensorPtr<double>& x) {
  return fn(nullptr, x)->v[0];
}

}  // namespace

TEST_CASE("project_linf clamps into the ball then the valid range") {
  auto x = make_tensor_from<double>({3}, {0.5, 0.02, 0.5});
  auto xh = make_tensor_from<double>({3}, {0.55, -0.3, 0.9});
  auto out = project_linf<double>(xh, x, 0.1);
  CHECK(out->v[0] == doctest::Approx(0.55));  // already inside
  CHECK(out->v[1] == doctest::Approx(0.0));   // range clip dominates
  CHECK(out->v[2] == doctest::Approx(0.6));   // ball clamp

  auto bad = make_tensor_from<double>({2}, {0.0, 0.0});
  CHECK_THROWS_AS(project_linf<double>(bad, x, 0.1), ShapeError);
}

TEST_CASE("pgd with zero epsilon is the identity") {
  auto x = make_tensor_from<double>({4}, {0.1, 0.4, 0.7, 1.0});
  AttackConfig cfg;
  cfg.epsilon = 0.0;
  cfg.steps = 7;
  cfg.attack_step = 0.01;
  auto adv = pgd_attack<double>(dot_loss({1, -1, 1, -1}), x, cfg);
  CHECK(adv->v == x->v);
}

TEST_CASE("constant loss takes no step: sign(0) = 0") {
  auto x = make_tensor_from<double>({3}, {0.2, 0.5, 0.8});
  AttackConfig cfg;
  cfg.epsilon = 0.2;
  cfg.steps = 5;
  cfg.attack_step = 0.05;
  auto constant = [](TapeT<double>* tape, const TensorPtr<double>& x_in) {
    auto z = scale<double>(tape, x_in, 0.0);
    return sum<double>(tape, z);
  };
  auto adv = pgd_attack<double>(constant, x, cfg);
  CHECK(adv->v == x->v);
}

TEST_CASE("pgd hand-iterated ascent saturates the ball") {
  // loss = 2x, x = 0.5, eps = 0.1, step 0.04, 7 steps:
  // 0.54, 0.58, 0.62->0.60, then pinned at 0.60
  auto x = make_tensor_from<double>({1}, {0.5});
  AttackConfig cfg;
  cfg.epsilon = 0.1;
  cfg.steps = 7;
  cfg.attack_step = 0.04;
  auto adv = pgd_attack<double>(dot_loss({2.0}), x, cfg);
  CHECK(adv->v[0] == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("pgd with zero steps only clips") {
  auto x = make_tensor_from<double>({2}, {0.3, 0.9});
  AttackConfig cfg;
  cfg.epsilon = 0.1;
  cfg.steps = 0;
  auto adv = pgd_attack<double>(dot_loss({1.0, 1.0}), x, cfg);
  CHECK(adv->v == x->v);
}

TEST_CASE("fgsm basics") {
  auto x = make_tensor_from<double>({2}, {0.4, 0.6});

  SUBCASE("zero epsilon is the identity") {
    auto adv = fgsm_attack<double>(dot_loss({1.0, -1.0}), x, 0.0);
    CHECK(adv->v == x->v);
  }
  SUBCASE("descending loss pushes interior points down by epsilon") {
    auto adv = fgsm_attack<double>(dot_loss({-3.0, -3.0}), x, 0.05);
    CHECK(adv->v[0] == doctest::Approx(0.35));
    CHECK(adv->v[1] == doctest::Approx(0.55));
  }
  SUBCASE("equals single-step pgd when the ball clamp is inactive") {
    AttackConfig cfg;
    cfg.epsilon = 0.05;
    cfg.steps = 1;
    cfg.attack_step = 0.05;
    auto a = fgsm_attack<double>(dot_loss({1.0, -2.0}), x, 0.05);
    auto b = pgd_attack<double>(dot_loss({1.0, -2.0}), x, cfg);
    CHECK(a->v == b->v);
  }
}

TEST_CASE("ascent on a convex toy is monotone per step") {
  // target outside the ball; distance cannot decrease under sign ascent
  auto x = make_tensor_from<double>({3}, {0.5, 0.4, 0.6});
  const std::vector<double> target{0.9, 0.1, 0.95};
  auto fn = dist_loss(target);
  AttackConfig cfg;
  cfg.epsilon = 0.08;
  cfg.attack_step = 0.02;
  double prev = eval_loss(fn, x);
  for (int k = 1; k <= 8; ++k) {
    cfg.steps = k;
    auto adv = pgd_attack<double>(fn, x, cfg);
    const double cur = eval_loss(fn, adv);
    CHECK(cur >= prev - 1e-12);
    prev = cur;
  }
}

TEST_CASE("budget soundness over random instances") {
  Rng rng(4242);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(12));
    auto x = make_tensor<double>({n});
    for (auto& v : x->v) v = rng.uniform();
    std::vector<double> w(static_cast<size_t>(n));
    for (auto& v : w) v = rng.normal();
    AttackConfig cfg;
    cfg.epsilon = rng.uniform(0.0, 0.3);
    cfg.steps = static_cast<int>(rng.below(6));
    cfg.attack_step = rng.uniform(0.005, 0.2);
    cfg.random_start = rng.uniform() < 0.3;
    TensorPtr<double> adv;
    if (rng.uniform() < 0.5) {
      adv = pgd_attack<double>(dot_loss(w), x, cfg, &rng);
    } else {
      adv = fgsm_attack<double>(dot_loss(w), x, cfg.epsilon);
    }
    for (int64_t i = 0; i < adv->size(); ++i) {
      CHECK(std::fabs(adv->v[i] - x->v[i]) <= cfg.epsilon + 1e-7);
      CHECK(adv->v[i] >= 0.0);
      CHECK(adv->v[i] <= 1.0);
    }
  }
}

TEST_CASE("random start requires an rng and stays inside the ball") {
  auto x = make_tensor_from<double>({2}, {0.5, 0.5});
  AttackConfig cfg;
  cfg.epsilon = 0.1;
  cfg.steps = 0;
  cfg.random_start = true;
  CHECK_THROWS_AS(pgd_attack<double>(dot_loss({1.0, 1.0}), x, cfg, nullptr), UsageError);
  Rng rng(9);
  auto adv = pgd_attack<double>(dot_loss({1.0, 1.0}), x, cfg, &rng);
  for (int64_t i = 0; i < 2; ++i) CHECK(std::fabs(adv->v[i] - x->v[i]) <= 0.1 + 1e-12);
}

TEST_CASE("attack config validation") {
  AttackConfig cfg;
  cfg.epsilon = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.epsilon = 0.1;
  cfg.steps = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.steps = 7;
  CHECK(cfg.step_size() == doctest::Approx(0.025));  // defaults to eps/4
  cfg.attack_step = 0.01;
  CHECK(cfg.step_size() == doctest::Approx(0.01));
}
