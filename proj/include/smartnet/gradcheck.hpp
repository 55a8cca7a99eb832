#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "smartnet/tape.hpp"
#include "smartnet/tensor.hpp"

namespace smartnet {

// Central finite-difference check of reverse-mode gradients. forward must
// rebuild the full computation from the current parameter values; it
// receives a tape for the analytic pass and nullptr for probe evaluations.
// Returns max over parameter elements of
//   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
template <typename T>
double grad_check(const std::function<TensorPtr<T>(TapeT<T>*)>& forward,
                  const std::vector<TensorPtr<T>>& params, double h) {
  for (const auto& p : params) {
    p->requires_grad = true;
    p->ensure_grad();
    p->zero_grad();
  }
  std::vector<std::vector<T>> analytic;
  {
    TapeT<T> tape;
    auto loss = forward(&tape);
    tape.backward(loss);
    for (const auto& p : params) analytic.push_back(p->g);
  }
  double max_rel = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = *params[pi];
    for (int64_t i = 0; i < p.size(); ++i) {
      const T orig = p.v[i];
      p.v[i] = orig + static_cast<T>(h);
      const double lp = static_cast<double>(forward(nullptr)->v[0]);
      p.v[i] = orig - static_cast<T>(h);
      const double lm = static_cast<double>(forward(nullptr)->v[0]);
      p.v[i] = orig;
      const double numeric = (lp - lm) / (2.0 * h);
      const double a = static_cast<double>(analytic[pi][i]);
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::fabs(a - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace smartnet
