#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "smartnet/parallel.hpp"
#include "smartnet/tape.hpp"
#include "smartnet/tensor.hpp"

namespace smartnet {

enum class BNMode {
  Train,        // batch statistics, running stats updated
  TrainFrozen,  // batch statistics, running stats left alone (attack forwards)
  Eval,         // running statistics
};

// One set of batch-norm state: per-channel affine parameters plus running
// statistics. Population (biased) variance is used throughout.
template <typename T>
struct BNStateT {
  TensorPtr<T> gamma;
  TensorPtr<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);

  BNStateT() = default;
  explicit BNStateT(int channels) {
    gamma = make_tensor<T>({channels}, T(1), true);
    beta = make_tensor<T>({channels}, T(0), true);
    running_mean.assign(channels, T(0));
    running_var.assign(channels, T(1));
  }
  int channels() const { return gamma ? gamma->dim(0) : 0; }
};

namespace detail {

// C[M,N] += A[M,K] * B[K,N], all row-major.
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<int64_t>(i) * n;
    const T* arow = a + static_cast<int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M,N] += A[M,L] * B[N,L]^T  (dot-product form).
template <typename T>
void gemm_abt_acc(const T* a, const T* b, T* c, int m, int l, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<int64_t>(i) * l;
    T* crow = c + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<int64_t>(j) * l;
      T acc = T(0);
      for (int p = 0; p < l; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C[K,N] += A[M,K]^T * B[M,N].
template <typename T>
void gemm_atb_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int r = 0; r < m; ++r) {
    const T* arow = a + static_cast<int64_t>(r) * k;
    const T* brow = b + static_cast<int64_t>(r) * n;
    for (int i = 0; i < k; ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      T* crow = c + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void im2col(const T* x, int ci, int h, int w, int k, int stride, int pad, int oh, int ow, T* col) {
  // col is [ci*k*k, oh*ow]
  const int64_t plane = static_cast<int64_t>(h) * w;
  int64_t row = 0;
  for (int c = 0; c < ci; ++c) {
    const T* xc = x + c * plane;
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw, ++row) {
        T* out = col + row * (static_cast<int64_t>(oh) * ow);
        for (int i = 0; i < oh; ++i) {
          const int ih = i * stride - pad + kh;
          if (ih < 0 || ih >= h) {
            for (int j = 0; j < ow; ++j) *out++ = T(0);
            continue;
          }
          const T* xrow = xc + static_cast<int64_t>(ih) * w;
          for (int j = 0; j < ow; ++j) {
            const int iw = j * stride - pad + kw;
            *out++ = (iw < 0 || iw >= w) ? T(0) : xrow[iw];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_acc(const T* col, int ci, int h, int w, int k, int stride, int pad, int oh, int ow, T* dx) {
  const int64_t plane = static_cast<int64_t>(h) * w;
  int64_t row = 0;
  for (int c = 0; c < ci; ++c) {
    T* dxc = dx + c * plane;
    for (int kh = 0; kh < k; ++kh) {
      for (int kw = 0; kw < k; ++kw, ++row) {
        const T* in = col + row * (static_cast<int64_t>(oh) * ow);
        for (int i = 0; i < oh; ++i, in += ow) {
          const int ih = i * stride - pad + kh;
          if (ih < 0 || ih >= h) continue;
          T* dxrow = dxc + static_cast<int64_t>(ih) * w;
          for (int j = 0; j < ow; ++j) {
            const int iw = j * stride - pad + kw;
            if (iw >= 0 && iw < w) dxrow[iw] += in[j];
          }
        }
      }
    }
  }
}

}  // namespace detail

// 2-d convolution, NCHW, no bias. Lowered through im2col per sample.
template <typename T>
TensorPtr<T> conv2d(TapeT<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& w, int stride, int padding) {
  if (x->ndim() != 4 || w->ndim() != 4) throw ShapeError("conv2d: expects 4-d input and weight");
  if (w->dim(1) != x->dim(1)) throw ShapeError("conv2d: input channels do not match weight");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (padding < 0) throw ShapeError("conv2d: negative padding");
  const int n = x->dim(0), ci = x->dim(1), h = x->dim(2), wd = x->dim(3);
  const int co = w->dim(0), k = w->dim(2);
  if (w->dim(3) != k) throw ShapeError("conv2d: kernel must be square");
  if (k > h + 2 * padding || k > wd + 2 * padding) throw ShapeError("conv2d: kernel larger than padded input");
  const int oh = (h + 2 * padding - k) / stride + 1;
  const int ow = (wd + 2 * padding - k) / stride + 1;
  const int kk = ci * k * k;
  const int64_t opix = static_cast<int64_t>(oh) * ow;
  const int64_t iplane = static_cast<int64_t>(ci) * h * wd;

  auto out = make_tensor<T>({n, co, oh, ow});
  const bool rec = tape && (x->requires_grad || w->requires_grad);
  const bool keep_cols = rec && w->requires_grad;

  auto cols = std::make_shared<std::vector<std::vector<T>>>();
  if (keep_cols) cols->resize(n);

  parallel_for(n, [&](int64_t b, int64_t e) {
    std::vector<T> scratch;
    for (int64_t i = b; i < e; ++i) {
      T* colp;
      if (keep_cols) {
        (*cols)[i].assign(static_cast<size_t>(kk) * opix, T(0));
        colp = (*cols)[i].data();
      } else {
        scratch.assign(static_cast<size_t>(kk) * opix, T(0));
        colp = scratch.data();
      }
      detail::im2col(x->v.data() + i * iplane, ci, h, wd, k, stride, padding, oh, ow, colp);
      detail::gemm_acc(w->v.data(), colp, out->v.data() + i * co * opix, co, kk, static_cast<int>(opix));
    }
  });

  if (rec) {
    out->requires_grad = true;
    out->ensure_grad();
    if (x->requires_grad) x->ensure_grad();
    if (w->requires_grad) w->ensure_grad();
    TensorPtr<T> xp = x, wp = w, op = out;
    tape->record([xp, wp, op, cols, stride, padding, n, ci, h, wd, co, k, kk, oh, ow, opix, iplane]() {
      if (wp->requires_grad) {
        // rows of dW are disjoint per chunk; each accumulates over samples
        // in index order, so results do not depend on the thread count.
        parallel_for(co, [&](int64_t cb, int64_t ce) {
          const int rows = static_cast<int>(ce - cb);
          for (int i = 0; i < n; ++i) {
            detail::gemm_abt_acc(op->g.data() + (static_cast<int64_t>(i) * co + cb) * opix,
                                 (*cols)[i].data(), wp->g.data() + cb * kk, rows,
                                 static_cast<int>(opix), kk);
          }
        });
      }
      if (xp->requires_grad) {
        parallel_for(n, [&](int64_t b, int64_t e) {
          std::vector<T> dcol(static_cast<size_t>(kk) * opix);
          for (int64_t i = b; i < e; ++i) {
            std::fill(dcol.begin(), dcol.end(), T(0));
            detail::gemm_atb_acc(wp->v.data(), op->g.data() + i * co * opix, dcol.data(), co, kk,
                                 static_cast<int>(opix));
            detail::col2im_acc(dcol.data(), ci, h, wd, k, stride, padding, oh, ow,
                               xp->g.data() + i * iplane);
          }
        });
      }
    });
  }
  return out;
}

// Batch normalization over N,H,W per channel.
template <typename T>
TensorPtr<T> batchnorm_forward(TapeT<T>* tape, const TensorPtr<T>& x, BNStateT<T>& bn, BNMode mode) {
  if (x->ndim() != 4) throw ShapeError("batchnorm: expects 4-d input");
  const int n = x->dim(0), c = x->dim(1), h = x->dim(2), w = x->dim(3);
  if (c != bn.channels()) throw ShapeError("batchnorm: channel count mismatch");
  const int64_t m = static_cast<int64_t>(n) * h * w;
  const bool batch_stats = mode != BNMode::Eval;
  if (batch_stats && m < 2) throw UsageError("batchnorm: training needs at least 2 values per channel");

  auto mean = std::make_shared<std::vector<T>>(c, T(0));
  auto invstd = std::make_shared<std::vector<T>>(c, T(0));
  const int64_t plane = static_cast<int64_t>(h) * w;
  const int64_t sample = static_cast<int64_t>(c) * plane;

  if (batch_stats) {
    for (int ch = 0; ch < c; ++ch) {
      T s = T(0), s2 = T(0);
      for (int i = 0; i < n; ++i) {
        const T* p = x->v.data() + i * sample + ch * plane;
        for (int64_t j = 0; j < plane; ++j) {
          s += p[j];
          s2 += p[j] * p[j];
        }
      }
      const T mu = s / static_cast<T>(m);
      T var = s2 / static_cast<T>(m) - mu * mu;
      if (var < T(0)) var = T(0);  // guard tiny negative from cancellation
      (*mean)[ch] = mu;
      (*invstd)[ch] = T(1) / std::sqrt(var + bn.eps);
      if (mode == BNMode::Train) {
        bn.running_mean[ch] = (T(1) - bn.momentum) * bn.running_mean[ch] + bn.momentum * mu;
        bn.running_var[ch] = (T(1) - bn.momentum) * bn.running_var[ch] + bn.momentum * var;
      }
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      (*mean)[ch] = bn.running_mean[ch];
      (*invstd)[ch] = T(1) / std::sqrt(bn.running_var[ch] + bn.eps);
    }
  }

  auto out = make_tensor<T>({n, c, h, w});
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const T mu = (*mean)[ch], is = (*invstd)[ch];
      const T ga = bn.gamma->v[ch], be = bn.beta->v[ch];
      const T* px = x->v.data() + i * sample + ch * plane;
      T* po = out->v.data() + i * sample + ch * plane;
      for (int64_t j = 0; j < plane; ++j) po[j] = ga * ((px[j] - mu) * is) + be;
    }
  }

  const bool rec = tape && (x->requires_grad || bn.gamma->requires_grad || bn.beta->requires_grad);
  if (rec) {
    out->requires_grad = true;
    out->ensure_grad();
    if (x->requires_grad) x->ensure_grad();
    if (bn.gamma->requires_grad) bn.gamma->ensure_grad();
    if (bn.beta->requires_grad) bn.beta->ensure_grad();
    TensorPtr<T> xp = x, op = out, gamma = bn.gamma, beta = bn.beta;
    tape->record([xp, op, gamma, beta, mean, invstd, batch_stats, n, c, plane, sample, m]() {
      for (int ch = 0; ch < c; ++ch) {
        const T mu = (*mean)[ch], is = (*invstd)[ch], ga = gamma->v[ch];
        T sum_dy = T(0), sum_dy_xhat = T(0);
        for (int i = 0; i < n; ++i) {
          const T* px = xp->v.data() + i * sample + ch * plane;
          const T* pg = op->g.data() + i * sample + ch * plane;
          for (int64_t j = 0; j < plane; ++j) {
            sum_dy += pg[j];
            sum_dy_xhat += pg[j] * (px[j] - mu) * is;
          }
        }
        if (gamma->requires_grad) gamma->g[ch] += sum_dy_xhat;
        if (beta->requires_grad) beta->g[ch] += sum_dy;
        if (!xp->requires_grad) continue;
        const T inv_m = T(1) / static_cast<T>(m);
        for (int i = 0; i < n; ++i) {
          const T* px = xp->v.data() + i * sample + ch * plane;
          const T* pg = op->g.data() + i * sample + ch * plane;
          T* pd = xp->g.data() + i * sample + ch * plane;
          if (batch_stats) {
            for (int64_t j = 0; j < plane; ++j) {
              const T xhat = (px[j] - mu) * is;
              pd[j] += ga * is * (pg[j] - sum_dy * inv_m - xhat * sum_dy_xhat * inv_m);
            }
          } else {
            for (int64_t j = 0; j < plane; ++j) pd[j] += ga * is * pg[j];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> relu(TapeT<T>* tape, const TensorPtr<T>& x) {
  auto out = make_tensor<T>(x->shape);
  for (int64_t i = 0; i < x->size(); ++i) out->v[i] = x->v[i] > T(0) ? x->v[i] : T(0);
  if (tape && x->requires_grad) {
    out->requires_grad = true;
    out->ensure_grad();
    x->ensure_grad();
    TensorPtr<T> xp = x, op = out;
    tape->record([xp, op]() {
      for (int64_t i = 0; i < xp->size(); ++i)
        if (xp->v[i] > T(0)) xp->g[i] += op->g[i];
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> add(TapeT<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (!same_shape(*a, *b)) throw ShapeError("add: shape mismatch");
  auto out = make_tensor<T>(a->shape);
  for (int64_t i = 0; i < a->size(); ++i) out->v[i] = a->v[i] + b->v[i];
  if (tape && (a->requires_grad || b->requires_grad)) {
    out->requires_grad = true;
    out->ensure_grad();
    if (a->requires_grad) a->ensure_grad();
    if (b->requires_grad) b->ensure_grad();
    TensorPtr<T> ap = a, bp = b, op = out;
    tape->record([ap, bp, op]() {
      if (ap->requires_grad)
        for (int64_t i = 0; i < ap->size(); ++i) ap->g[i] += op->g[i];
      if (bp->requires_grad)
        for (int64_t i = 0; i < bp->size(); ++i) bp->g[i] += op->g[i];
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> mul(TapeT<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (!same_shape(*a, *b)) throw ShapeError("mul: shape mismatch");
  auto out = make_tensor<T>(a->shape);
  for (int64_t i = 0; i < a->size(); ++i) out->v[i] = a->v[i] * b->v[i];
  if (tape && (a->requires_grad || b->requires_grad)) {
    out->requires_grad = true;
    out->ensure_grad();
    if (a->requires_grad) a->ensure_grad();
    if (b->requires_grad) b->ensure_grad();
    TensorPtr<T> ap = a, bp = b, op = out;
    tape->record([ap, bp, op]() {
      if (ap->requires_grad)
        for (int64_t i = 0; i < ap->size(); ++i) ap->g[i] += op->g[i] * bp->v[i];
      if (bp->requires_grad)
        for (int64_t i = 0; i < bp->size(); ++i) bp->g[i] += op->g[i] * ap->v[i];
    });
  }
  return out;
}

// out = c * x with a constant scalar.
template <typename T>
TensorPtr<T> scale(TapeT<T>* tape, const TensorPtr<T>& x, T c) {
  auto out = make_tensor<T>(x->shape);
  for (int64_t i = 0; i < x->size(); ++i) out->v[i] = c * x->v[i];
  if (tape && x->requires_grad) {
    out->requires_grad = true;
    out->ensure_grad();
    x->ensure_grad();
    TensorPtr<T> xp = x, op = out;
    tape->record([xp, op, c]() {
      for (int64_t i = 0; i < xp->size(); ++i) xp->g[i] += c * op->g[i];
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> sum(TapeT<T>* tape, const TensorPtr<T>& x) {
  auto out = make_tensor<T>({1});
  T acc = T(0);
  for (int64_t i = 0; i < x->size(); ++i) acc += x->v[i];
  out->v[0] = acc;
  if (tape && x->requires_grad) {
    out->requires_grad = true;
    out->ensure_grad();
    x->ensure_grad();
    TensorPtr<T> xp = x, op = out;
    tape->record([xp, op]() {
      for (int64_t i = 0; i < xp->size(); ++i) xp->g[i] += op->g[0];
    });
  }
  return out;
}

// Fully connected: x[N,D] * w[O,D]^T + b[O].
template <typename T>
TensorPtr<T> linear(TapeT<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& w, const TensorPtr<T>& b) {
  if (x->ndim() != 2 || w->ndim() != 2) throw ShapeError("linear: expects 2-d input and weight");
  if (x->dim(1) != w->dim(1)) throw ShapeError("linear: feature dimension mismatch");
  if (b->size() != w->dim(0)) throw ShapeError("linear: bias size mismatch");
  const int n = x->dim(0), d = x->dim(1), o = w->dim(0);
  auto out = make_tensor<T>({n, o});
  for (int i = 0; i < n; ++i) {
    const T* px = x->v.data() + static_cast<int64_t>(i) * d;
    T* po = out->v.data() + static_cast<int64_t>(i) * o;
    for (int j = 0; j < o; ++j) {
      const T* pw = w->v.data() + static_cast<int64_t>(j) * d;
      T acc = b->v[j];
      for (int r = 0; r < d; ++r) acc += px[r] * pw[r];
      po[j] = acc;
    }
  }
  const bool rec = tape && (x->requires_grad || w->requires_grad || b->requires_grad);
  if (rec) {
    out->requires_grad = true;
    out->ensure_grad();
    if (x->requires_grad) x->ensure_grad();
    if (w->requires_grad) w->ensure_grad();
    if (b->requires_grad) b->ensure_grad();
    TensorPtr<T> xp = x, wp = w, bp = b, op = out;
    tape->record([xp, wp, bp, op, n, d, o]() {
      for (int i = 0; i < n; ++i) {
        const T* pg = op->g.data() + static_cast<int64_t>(i) * o;
        const T* px = xp->v.data() + static_cast<int64_t>(i) * d;
        for (int j = 0; j < o; ++j) {
          const T gy = pg[j];
          if (gy == T(0)) continue;
          if (wp->requires_grad) {
            T* pw = wp->g.data() + static_cast<int64_t>(j) * d;
            for (int r = 0; r < d; ++r) pw[r] += gy * px[r];
          }
          if (bp->requires_grad) bp->g[j] += gy;
          if (xp->requires_grad) {
            const T* pw = wp->v.data() + static_cast<int64_t>(j) * d;
            T* pxg = xp->g.data() + static_cast<int64_t>(i) * d;
            for (int r = 0; r < d; ++r) pxg[r] += gy * pw[r];
          }
        }
      }
    });
  }
  return out;
}

// [N,C,H,W] -> [N,C] spatial mean.
template <typename T>
TensorPtr<T> global_avgpool(TapeT<T>* tape, const TensorPtr<T>& x) {
  if (x->ndim() != 4) throw ShapeError("global_avgpool: expects 4-d input");
  const int n = x->dim(0), c = x->dim(1);
  const int64_t plane = static_cast<int64_t>(x->dim(2)) * x->dim(3);
  auto out = make_tensor<T>({n, c});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const T* p = x->v.data() + (static_cast<int64_t>(i) * c + ch) * plane;
      T acc = T(0);
      for (int64_t j = 0; j < plane; ++j) acc += p[j];
      out->v[static_cast<int64_t>(i) * c + ch] = acc / static_cast<T>(plane);
    }
  if (tape && x->requires_grad) {
    out->requires_grad = true;
    out->ensure_grad();
    x->ensure_grad();
    TensorPtr<T> xp = x, op = out;
    tape->record([xp, op, n, c, plane]() {
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
          const T gy = op->g[static_cast<int64_t>(i) * c + ch] / static_cast<T>(plane);
          T* p = xp->g.data() + (static_cast<int64_t>(i) * c + ch) * plane;
          for (int64_t j = 0; j < plane; ++j) p[j] += gy;
        }
    });
  }
  return out;
}

// Mean softmax cross-entropy over the batch. Returns a scalar tensor.
template <typename T>
TensorPtr<T> softmax_cross_entropy(TapeT<T>* tape, const TensorPtr<T>& logits, const std::vector<int>& labels) {
  if (logits->ndim() != 2) throw ShapeError("softmax_cross_entropy: expects 2-d logits");
  const int n = logits->dim(0), c = logits->dim(1);
  if (static_cast<int>(labels.size()) != n) throw ShapeError("softmax_cross_entropy: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= c) throw DomainError("softmax_cross_entropy: label index out of range");

  auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(n) * c);
  T loss = T(0);
  for (int i = 0; i < n; ++i) {
    const T* row = logits->v.data() + static_cast<int64_t>(i) * c;
    T mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T denom = T(0);
    for (int j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
    const T lse = mx + std::log(denom);
    loss += lse - row[labels[i]];
    T* prow = probs->data() + static_cast<int64_t>(i) * c;
    for (int j = 0; j < c; ++j) prow[j] = std::exp(row[j] - mx) / denom;
  }
  auto out = make_tensor<T>({1}, loss / static_cast<T>(n));
  if (tape && logits->requires_grad) {
    out->requires_grad = true;
    out->ensure_grad();
    logits->ensure_grad();
    TensorPtr<T> lp = logits, op = out;
    auto lab = std::make_shared<std::vector<int>>(labels);
    tape->record([lp, op, probs, lab, n, c]() {
      const T g = op->g[0] / static_cast<T>(n);
      for (int i = 0; i < n; ++i) {
        const T* prow = probs->data() + static_cast<int64_t>(i) * c;
        T* grow = lp->g.data() + static_cast<int64_t>(i) * c;
        for (int j = 0; j < c; ++j) grow[j] += g * (prow[j] - (j == (*lab)[i] ? T(1) : T(0)));
      }
    });
  }
  return out;
}

template <typename T>
std::vector<int> argmax_rows(const TensorT<T>& logits) {
  const int n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i) {
    const T* row = logits.v.data() + static_cast<int64_t>(i) * c;
    int best = 0;
    for (int j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;
    out[i] = best;
  }
  return out;
}

template <typename T>
double accuracy(const TensorT<T>& logits, const std::vector<int>& labels) {
  const auto pred = argmax_rows(logits);
  int64_t hit = 0;
  for (size_t i = 0; i < labels.size(); ++i)
    if (pred[i] == labels[i]) ++hit;
  return labels.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace smartnet
