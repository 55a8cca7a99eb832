#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <vector>

#include "smartnet/common.hpp"

namespace smartnet {

// Dense n-dimensional array in row-major order. Gradient storage lives next
// to the values; ops allocate it lazily for tensors that require gradients.
template <typename T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> v;
  std::vector<T> g;
  bool requires_grad = false;

  TensorT() = default;

  explicit TensorT(std::vector<int> shp, T fill = T(0)) : shape(std::move(shp)) {
    v.assign(static_cast<size_t>(count(shape)), fill);
  }

  static TensorT from(std::vector<int> shp, std::vector<T> vals) {
    TensorT t;
    t.shape = std::move(shp);
    if (count(t.shape) != static_cast<int64_t>(vals.size()))
      throw ShapeError("tensor: value count does not match shape");
    t.v = std::move(vals);
    return t;
  }

  static int64_t count(const std::vector<int>& shp) {
    int64_t n = 1;
    for (int d : shp) {
      if (d <= 0) throw ShapeError("tensor: non-positive extent");
      n *= d;
    }
    return n;
  }

  int64_t size() const { return static_cast<int64_t>(v.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

  void ensure_grad() {
    if (g.size() != v.size()) g.assign(v.size(), T(0));
  }
  void zero_grad() {
    if (!g.empty()) std::fill(g.begin(), g.end(), T(0));
  }

  // Row-major offset helpers for 4-d and 2-d access in tests and kernels.
  T& at4(int a, int b, int c, int d) {
    return v[((static_cast<int64_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }
  T at4(int a, int b, int c, int d) const {
    return v[((static_cast<int64_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }
  T& at2(int a, int b) { return v[static_cast<int64_t>(a) * shape[1] + b]; }
  T at2(int a, int b) const { return v[static_cast<int64_t>(a) * shape[1] + b]; }
};

template <typename T>
using TensorPtr = std::shared_ptr<TensorT<T>>;

template <typename T>
TensorPtr<T> make_tensor(std::vector<int> shape, T fill = T(0), bool requires_grad = false) {
  auto t = std::make_shared<TensorT<T>>(std::move(shape), fill);
  t->requires_grad = requires_grad;
  return t;
}

template <typename T>
TensorPtr<T> make_tensor_from(std::vector<int> shape, std::vector<T> vals, bool requires_grad = false) {
  auto t = std::make_shared<TensorT<T>>(TensorT<T>::from(std::move(shape), std::move(vals)));
  t->requires_grad = requires_grad;
  return t;
}

template <typename T>
bool same_shape(const TensorT<T>& a, const TensorT<T>& b) {
  return a.shape == b.shape;
}

}  // namespace smartnet
