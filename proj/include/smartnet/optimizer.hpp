#pragma once

#include <cmath>
#include <vector>

#include "smartnet/model.hpp"

namespace smartnet {

// SGD with classical momentum. Weight decay is applied only to parameters
// whose registry entry opts in.
template <typename T>
class SGD {
 public:
  SGD(std::vector<ParamRef<T>> params, double momentum, double weight_decay)
      : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    buffers_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i)
      buffers_[i].assign(static_cast<size_t>(params_[i].tensor->size()), T(0));
  }

  void zero_grad() {
    for (auto& p : params_) {
      p.tensor->ensure_grad();
      p.tensor->zero_grad();
    }
  }

  // One update; returns the number of parameter tensors touched.
  size_t step(double lr) {
    size_t touched = 0;
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& t = *params_[i].tensor;
      if (t.g.empty()) continue;
      ++touched;
      const T wd = params_[i].weight_decay ? static_cast<T>(weight_decay_) : T(0);
      const T mu = static_cast<T>(momentum_);
      const T rate = static_cast<T>(lr);
      auto& buf = buffers_[i];
      for (int64_t j = 0; j < t.size(); ++j) {
        const T g = t.g[j] + wd * t.v[j];
        buf[j] = mu * buf[j] + g;
        t.v[j] -= rate * buf[j];
      }
    }
    return touched;
  }

  std::vector<std::vector<T>>& momentum_buffers() { return buffers_; }
  const std::vector<ParamRef<T>>& params() const { return params_; }

 private:
  std::vector<ParamRef<T>> params_;
  std::vector<std::vector<T>> buffers_;
  double momentum_;
  double weight_decay_;
};

// Cosine decay from the initial rate to zero over total_steps.
inline double cosine_lr(double initial, int64_t step, int64_t total_steps) {
  if (total_steps <= 0) return initial;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return initial * 0.5 * (1.0 + std::cos(3.14159265358979323846 * std::min(1.0, t)));
}

}  // namespace smartnet
