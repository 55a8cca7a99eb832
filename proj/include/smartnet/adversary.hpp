#pragma once

#include <functional>

#include "smartnet/rng.hpp"
#include "smartnet/tape.hpp"
#include "smartnet/tensor.hpp"

namespace smartnet {

enum class AttackKind { PGD, FGSM };

struct AttackConfig {
  AttackKind kind = AttackKind::PGD;
  double epsilon = 8.0 / 255.0;
  int steps = 7;
  double attack_step = 0.0;  // 0 resolves to epsilon/4
  bool random_start = false;
  double clip_lo = 0.0;
  double clip_hi = 1.0;

  double step_size() const { return attack_step > 0.0 ? attack_step : epsilon / 4.0; }

  void validate() const {
    if (epsilon < 0) throw ConfigError("attack: epsilon must be >= 0");
    if (steps < 0) throw ConfigError("attack: steps must be >= 0");
    if (steps > 0 && epsilon > 0 && step_size() <= 0)
      throw ConfigError("attack: step size must be positive");
    if (clip_lo >= clip_hi) throw ConfigError("attack: empty clip range");
  }
};

// Differentiable loss of the attacked model as a function of the input.
template <typename T>
using InputLossFn = std::function<TensorPtr<T>(TapeT<T>*, const TensorPtr<T>&)>;

namespace detail {
template <typename T>
inline T sgn(T x) {
  return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
}
}  // namespace detail

// Clamp into the epsilon box around x, then into the valid value range.
template <typename T>
TensorPtr<T> project_linf(const TensorPtr<T>& x_hat, const TensorPtr<T>& x, double epsilon,
                          double clip_lo = 0.0, double clip_hi = 1.0) {
  if (!same_shape(*x_hat, *x)) throw ShapeError("project_linf: shape mismatch");
  auto out = make_tensor<T>(x->shape);
  const T eps = static_cast<T>(epsilon), lo = static_cast<T>(clip_lo), hi = static_cast<T>(clip_hi);
  for (int64_t i = 0; i < x->size(); ++i) {
    T v = x_hat->v[i];
    const T a = x->v[i] - eps, b = x->v[i] + eps;
    v = v < a ? a : (v > b ? b : v);
    out->v[i] = v < lo ? lo : (v > hi ? hi : v);
  }
  return out;
}

// PGD-k: k sign-gradient ascent steps, each followed by projection onto the
// epsilon ball and the valid range. The gradient of zero takes no step.
template <typename T>
TensorPtr<T> pgd_attack(const InputLossFn<T>& loss_fn, const TensorPtr<T>& x, const AttackConfig& cfg,
                        Rng* start_rng = nullptr) {
  cfg.validate();
  auto adv = make_tensor<T>(x->shape);
  adv->v = x->v;
  if (cfg.random_start && cfg.epsilon > 0) {
    if (!start_rng) throw UsageError("pgd_attack: random_start requires an rng");
    for (auto& v : adv->v) v += static_cast<T>(start_rng->uniform(-cfg.epsilon, cfg.epsilon));
  }
  adv = project_linf(adv, x, cfg.epsilon, cfg.clip_lo, cfg.clip_hi);
  const T step = static_cast<T>(cfg.step_size());
  for (int it = 0; it < cfg.steps; ++it) {
    auto probe = make_tensor<T>(x->shape);
    probe->v = adv->v;
    probe->requires_grad = true;
    probe->ensure_grad();
    TapeT<T> tape;
    auto loss = loss_fn(&tape, probe);
    tape.backward(loss);
    for (int64_t i = 0; i < adv->size(); ++i) adv->v[i] += step * detail::sgn(probe->g[i]);
    adv = project_linf(adv, x, cfg.epsilon, cfg.clip_lo, cfg.clip_hi);
  }
  return adv;
}

// Single step: x + epsilon * sign(grad), clipped to the valid range.
template <typename T>
TensorPtr<T> fgsm_attack(const InputLossFn<T>& loss_fn, const TensorPtr<T>& x, double epsilon,
                         double clip_lo, double clip_hi) {
  auto probe = make_tensor<T>(x->shape);
  probe->v = x->v;
  probe->requires_grad = true;
  probe->ensure_grad();
  TapeT<T> tape;
  auto loss = loss_fn(&tape, probe);
  tape.backward(loss);
  auto out = make_tensor<T>(x->shape);
  const T eps = static_cast<T>(epsilon), lo = static_cast<T>(clip_lo), hi = static_cast<T>(clip_hi);
  for (int64_t i = 0; i < x->size(); ++i) {
    T v = x->v[i] + eps * detail::sgn(probe->g[i]);
    out->v[i] = v < lo ? lo : (v > hi ? hi : v);
  }
  return out;
}

template <typename T>
TensorPtr<T> fgsm_attack(const InputLossFn<T>& loss_fn, const TensorPtr<T>& x, double epsilon) {
  return fgsm_attack(loss_fn, x, epsilon, 0.0, 1.0);
}

// Dispatch on the configured attack family.
template <typename T>
TensorPtr<T> run_attack(const InputLossFn<T>& loss_fn, const TensorPtr<T>& x, const AttackConfig& cfg,
                        Rng* start_rng = nullptr) {
  if (cfg.kind == AttackKind::FGSM)
    return fgsm_attack(loss_fn, x, cfg.epsilon, cfg.clip_lo, cfg.clip_hi);
  return pgd_attack(loss_fn, x, cfg, start_rng);
}

}  // namespace smartnet
