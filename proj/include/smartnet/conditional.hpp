#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "smartnet/mask.hpp"
#include "smartnet/ops.hpp"
#include "smartnet/rng.hpp"

namespace smartnet {

// Inference/training path choice. lambda == 0 selects the clean expert
// (clean mask, no noise, BN_C); lambda > 0 selects the adversarial expert
// (adversarial mask, noise scaled by lambda at inference, BN_A).
struct PathSelector {
  double lambda = 0.0;
  bool adversarial() const { return lambda > 0.0; }
};

template <typename T>
struct DualBatchNormT {
  BNStateT<T> bn_clean;
  BNStateT<T> bn_adv;

  DualBatchNormT() = default;
  explicit DualBatchNormT(int channels) : bn_clean(channels), bn_adv(channels) {}
};

// One shared weight tensor with two derived expert paths: the clean path
// masks the weights, the adversarial path additionally perturbs them with
// trainable scaled noise drawn per forward from N(0, std(theta)^2).
template <typename T>
struct ConditionalConvLayerT {
  std::string name;
  TensorPtr<T> theta;   // [Co,Ci,k,k], trainable, shared between paths
  TensorPtr<T> alpha;   // scalar noise gain, trainable
  SparsityMask mask_clean;
  SparsityMask mask_adv;
  Rng noise_rng;
  std::vector<T> last_eta;   // most recent noise sample
  std::vector<T> fixed_eta;  // when non-empty, used instead of sampling (tests)
  int stride = 1;
  int padding = 1;

  ConditionalConvLayerT() = default;

  ConditionalConvLayerT(std::string layer_name, int co, int ci, int k, int stride_, int padding_,
                        uint64_t init_seed, uint64_t noise_seed)
      : name(std::move(layer_name)), noise_rng(noise_seed), stride(stride_), padding(padding_) {
    theta = make_tensor<T>({co, ci, k, k}, T(0), true);
    Rng init(init_seed);
    // He-style fan-in scaling
    const double stddev = std::sqrt(2.0 / (static_cast<double>(ci) * k * k));
    for (auto& w : theta->v) w = static_cast<T>(init.normal() * stddev);
    alpha = make_tensor<T>({1}, T(0.25), true);
    mask_clean = SparsityMask::all_ones(theta->size());
    mask_adv = SparsityMask::all_ones(theta->size());
  }

  // Population std of the current weights, recomputed on demand and never
  // part of the gradient flow.
  T weight_std() const {
    const int64_t n = theta->size();
    T mean = T(0);
    for (T w : theta->v) mean += w;
    mean /= static_cast<T>(n);
    T var = T(0);
    for (T w : theta->v) var += (w - mean) * (w - mean);
    var /= static_cast<T>(n);
    return std::sqrt(var);
  }
};

template <typename T>
TensorPtr<T> clean_weights(TapeT<T>* tape, ConditionalConvLayerT<T>& layer) {
  return apply_mask(tape, layer.theta, layer.mask_clean);
}

// (theta + noise_scale * alpha * eta) masked by the adversarial mask.
// eta is sampled elementwise from N(0, std(theta)^2) with the std treated
// as a constant; gradients reach theta through the identity and alpha
// through the sampled eta.
template <typename T>
TensorPtr<T> adversarial_weights(TapeT<T>* tape, ConditionalConvLayerT<T>& layer, double noise_scale) {
  const int64_t n = layer.theta->size();
  if (!layer.fixed_eta.empty()) {
    layer.last_eta = layer.fixed_eta;
  } else {
    const double sigma = static_cast<double>(layer.weight_std());
    layer.last_eta.resize(n);
    for (int64_t i = 0; i < n; ++i) layer.last_eta[i] = static_cast<T>(layer.noise_rng.normal() * sigma);
  }

  auto noisy = make_tensor<T>(layer.theta->shape);
  const T s = static_cast<T>(noise_scale);
  const T a = layer.alpha->v[0];
  for (int64_t i = 0; i < n; ++i) noisy->v[i] = layer.theta->v[i] + s * a * layer.last_eta[i];

  const bool rec = tape && (layer.theta->requires_grad || layer.alpha->requires_grad);
  if (rec) {
    noisy->requires_grad = true;
    noisy->ensure_grad();
    if (layer.theta->requires_grad) layer.theta->ensure_grad();
    if (layer.alpha->requires_grad) layer.alpha->ensure_grad();
    TensorPtr<T> th = layer.theta, al = layer.alpha, op = noisy;
    auto eta = std::make_shared<std::vector<T>>(layer.last_eta);
    tape->record([th, al, op, eta, s]() {
      if (th->requires_grad)
        for (int64_t i = 0; i < th->size(); ++i) th->g[i] += op->g[i];
      if (al->requires_grad) {
        T acc = T(0);
        for (int64_t i = 0; i < op->size(); ++i) acc += op->g[i] * (*eta)[i];
        al->g[0] += s * acc;
      }
    });
  }
  return apply_mask(tape, noisy, layer.mask_adv);
}

// Convolution plus the path-matched batch norm. During training the
// adversarial path always uses full-strength noise; at inference the noise
// is re-scaled by lambda.
template <typename T>
TensorPtr<T> layer_forward(TapeT<T>* tape, ConditionalConvLayerT<T>& layer, DualBatchNormT<T>& bn,
                           const TensorPtr<T>& input, const PathSelector& sel, bool training,
                           BNMode bn_mode) {
  TensorPtr<T> w;
  if (sel.adversarial()) {
    w = adversarial_weights(tape, layer, training ? 1.0 : sel.lambda);
  } else {
    w = clean_weights(tape, layer);
  }
  auto y = conv2d(tape, input, w, layer.stride, layer.padding);
  return batchnorm_forward(tape, y, sel.adversarial() ? bn.bn_adv : bn.bn_clean, bn_mode);
}

template <typename T>
TensorPtr<T> layer_forward(TapeT<T>* tape, ConditionalConvLayerT<T>& layer, DualBatchNormT<T>& bn,
                           const TensorPtr<T>& input, const PathSelector& sel, bool training) {
  return layer_forward(tape, layer, bn, input, sel, training, training ? BNMode::Train : BNMode::Eval);
}

}  // namespace smartnet
