#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "smartnet/rng.hpp"
#include "smartnet/tape.hpp"
#include "smartnet/tensor.hpp"

namespace smartnet {

// Binary sparsity mask packed into little-endian 64-bit words; element i
// lives at word i/64, bit i%64. Frozen after generation.
class SparsityMask {
 public:
  SparsityMask() = default;
  explicit SparsityMask(int64_t n) : n_(n), words_((n + 63) / 64, 0) {}

  static SparsityMask all_ones(int64_t n) {
    SparsityMask m(n);
    for (int64_t i = 0; i < n; ++i) m.set(i);
    return m;
  }

  int64_t size() const { return n_; }
  bool bit(int64_t i) const { return (words_[i >> 6] >> (i & 63)) & 1u; }
  void set(int64_t i) { words_[i >> 6] |= (uint64_t(1) << (i & 63)); }

  int64_t popcount() const {
    int64_t c = 0;
    for (uint64_t w : words_) c += __builtin_popcountll(w);
    return c;
  }
  double density() const { return n_ == 0 ? 0.0 : static_cast<double>(popcount()) / static_cast<double>(n_); }

  const std::vector<uint64_t>& words() const { return words_; }
  std::vector<uint64_t>& words() { return words_; }

  uint64_t hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](uint64_t x) {
      for (int i = 0; i < 8; ++i) {
        h ^= (x >> (8 * i)) & 0xff;
        h *= 0x100000001b3ull;
      }
    };
    mix(static_cast<uint64_t>(n_));
    for (uint64_t w : words_) mix(w);
    return h;
  }

  bool operator==(const SparsityMask& o) const { return n_ == o.n_ && words_ == o.words_; }

 private:
  int64_t n_ = 0;
  std::vector<uint64_t> words_;
};

// Per-layer density targets. block_tag 'D' forces all three densities to 1.
struct MaskPlanEntry {
  std::string layer;
  int64_t elements = 0;
  double c_clean = 1.0;
  double c_adv = 1.0;
  double c_inter = 1.0;
  char block_tag = 'D';
};

struct MaskPlan {
  std::vector<MaskPlanEntry> entries;
  uint64_t seed = 0;
};

// round-half-up on fractional support counts
inline int64_t round_count(double density, int64_t n) {
  return static_cast<int64_t>(std::floor(density * static_cast<double>(n) + 0.5));
}

inline void validate_plan_entry(int64_t n, double c_clean, double c_adv, double c_inter) {
  if (n <= 0) throw PlanError("mask plan: layer has no elements");
  if (c_clean < 0 || c_clean > 1 || c_adv < 0 || c_adv > 1 || c_inter < 0)
    throw PlanError("mask plan: densities must lie in [0,1]");
  if (c_inter > std::min(c_clean, c_adv) + 1e-12)
    throw PlanError("mask plan: intersection density exceeds a path density");
  if (c_clean + c_adv - c_inter > 1.0 + 1e-12)
    throw PlanError("mask plan: infeasible, union of paths exceeds the tensor");
  // counts after rounding must also fit
  const int64_t ci = round_count(c_inter, n);
  const int64_t cc = round_count(c_clean, n);
  const int64_t ca = round_count(c_adv, n);
  if (ci > std::min(cc, ca)) throw PlanError("mask plan: rounded intersection exceeds a path count");
  if (cc + ca - ci > n) throw PlanError("mask plan: infeasible, rounded union exceeds the tensor");
}

// Draws (M_clean, M_adv) with exact support sizes round(c*n) and exact
// intersection size. Positions are chosen uniformly given the seed: the
// shared region first, then the exclusive region of each path.
inline std::pair<SparsityMask, SparsityMask> generate_mask_pair(int64_t n, double c_clean, double c_adv,
                                                                double c_inter, uint64_t seed) {
  validate_plan_entry(n, c_clean, c_adv, c_inter);
  const int64_t k_inter = round_count(c_inter, n);
  const int64_t k_clean = round_count(c_clean, n);
  const int64_t k_adv = round_count(c_adv, n);

  std::vector<int64_t> order(n);
  for (int64_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  SparsityMask mc(n), ma(n);
  int64_t pos = 0;
  for (int64_t i = 0; i < k_inter; ++i, ++pos) {
    mc.set(order[pos]);
    ma.set(order[pos]);
  }
  for (int64_t i = 0; i < k_clean - k_inter; ++i, ++pos) mc.set(order[pos]);
  for (int64_t i = 0; i < k_adv - k_inter; ++i, ++pos) ma.set(order[pos]);
  return {std::move(mc), std::move(ma)};
}

inline double density(const SparsityMask& m) { return m.density(); }

inline double intersection_density(const SparsityMask& a, const SparsityMask& b) {
  if (a.size() != b.size()) throw ShapeError("intersection_density: mask sizes differ");
  int64_t c = 0;
  for (size_t i = 0; i < a.words().size(); ++i) c += __builtin_popcountll(a.words()[i] & b.words()[i]);
  return a.size() == 0 ? 0.0 : static_cast<double>(c) / static_cast<double>(a.size());
}

// Elementwise product with a frozen binary mask. Gradient flows only
// through surviving positions.
template <typename T>
TensorPtr<T> apply_mask(TapeT<T>* tape, const TensorPtr<T>& x, const SparsityMask& mask) {
  if (x->size() != mask.size()) throw ShapeError("apply_mask: mask size does not match tensor");
  auto out = make_tensor<T>(x->shape);
  for (int64_t i = 0; i < x->size(); ++i) out->v[i] = mask.bit(i) ? x->v[i] : T(0);
  if (tape && x->requires_grad) {
    out->requires_grad = true;
    out->ensure_grad();
    x->ensure_grad();
    TensorPtr<T> xp = x, op = out;
    auto mp = std::make_shared<SparsityMask>(mask);
    tape->record([xp, op, mp]() {
      for (int64_t i = 0; i < xp->size(); ++i)
        if (mp->bit(i)) xp->g[i] += op->g[i];
    });
  }
  return out;
}

}  // namespace smartnet
