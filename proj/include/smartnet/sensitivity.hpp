#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "smartnet/dataset.hpp"
#include "smartnet/model.hpp"
#include "smartnet/optimizer.hpp"

namespace smartnet {

struct SensitivityConfig {
  std::vector<double> densities{0.05, 0.1, 0.2};
  int epochs = 2;
  int batch_size = 64;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int redistributions_per_epoch = 2;
  double prune_fraction = 0.3;  // share of the budget cycled per redistribution
  uint64_t seed = 1;
};

struct LayerUtility {
  std::string layer;
  int64_t total = 0;
  int64_t nonzeros = 0;
  double utility = 0.0;  // nonzeros / total
};

struct SensitivityResult {
  double density = 0.0;
  int64_t budget = 0;
  std::vector<LayerUtility> layers;  // in depth order
  std::vector<int64_t> budget_trace;  // total nonzeros after every redistribution
};

namespace detail {

struct SparseState {
  // flat view over all conv weights: (layer, offset) per global slot
  std::vector<std::pair<int, int64_t>> slots;
  std::vector<uint8_t> active;
  std::vector<int64_t> layer_active;
  std::vector<int64_t> layer_total;
};

}  // namespace detail

// Trains one unconditional model per density budget with periodic global
// magnitude pruning and gradient-magnitude regrowth, then reports each
// layer's surviving parameter fraction. The global non-zero count equals
// round(d * total conv weights) after initialization and after every
// redistribution; every layer keeps at least one non-zero.
inline std::vector<SensitivityResult> sensitivity_analysis(const ModelConfig& arch,
                                                           const Dataset& train,
                                                           const SensitivityConfig& cfg) {
  std::vector<SensitivityResult> results;
  for (size_t di = 0; di < cfg.densities.size(); ++di) {
    const double d = cfg.densities[di];
    if (d <= 0.0 || d > 1.0) throw PlanError("sensitivity: density must lie in (0,1]");

    PlainNet<float> net(arch, derive_seed(cfg.seed, "sens-init", di));
    auto convs = net.convs();
    const int n_layers = static_cast<int>(convs.size());

    detail::SparseState st;
    st.layer_total.resize(n_layers);
    st.layer_active.assign(n_layers, 0);
    int64_t total = 0;
    for (int l = 0; l < n_layers; ++l) {
      st.layer_total[l] = convs[l]->w->size();
      total += st.layer_total[l];
      for (int64_t j = 0; j < st.layer_total[l]; ++j) st.slots.push_back({l, j});
    }
    const int64_t budget = round_count(d, total);
    if (budget < n_layers) throw PlanError("sensitivity: budget smaller than the layer count");

    SensitivityResult res;
    res.density = d;
    res.budget = budget;

    // initial support: per-layer proportional allocation, uniformly random
    // positions, drift corrected to hit the budget exactly
    st.active.assign(st.slots.size(), 0);
    {
      Rng rng(derive_seed(cfg.seed, "sens-mask", di));
      std::vector<int64_t> want(n_layers);
      int64_t assigned = 0;
      for (int l = 0; l < n_layers; ++l) {
        want[l] = std::max<int64_t>(1, round_count(d, st.layer_total[l]));
        want[l] = std::min(want[l], st.layer_total[l]);
        assigned += want[l];
      }
      int l = 0;
      while (assigned > budget) {  // trim from the largest layers first
        int big = 0;
        for (int i = 1; i < n_layers; ++i)
          if (want[i] > want[big]) big = i;
        if (want[big] <= 1) break;
        --want[big];
        --assigned;
      }
      while (assigned < budget) {
        if (want[l] < st.layer_total[l]) {
          ++want[l];
          ++assigned;
        }
        l = (l + 1) % n_layers;
      }
      int64_t base = 0;
      for (int li = 0; li < n_layers; ++li) {
        std::vector<int64_t> idx(static_cast<size_t>(st.layer_total[li]));
        for (int64_t j = 0; j < st.layer_total[li]; ++j) idx[static_cast<size_t>(j)] = j;
        rng.shuffle(idx);
        for (int64_t j = 0; j < want[li]; ++j) st.active[static_cast<size_t>(base + idx[static_cast<size_t>(j)])] = 1;
        st.layer_active[li] = want[li];
        base += st.layer_total[li];
      }
    }

    auto enforce_mask = [&](std::vector<std::vector<float>>* momentum) {
      int64_t flat = 0;
      for (int l = 0; l < n_layers; ++l) {
        auto& w = convs[l]->w->v;
        for (int64_t j = 0; j < st.layer_total[l]; ++j, ++flat) {
          if (!st.active[static_cast<size_t>(flat)]) {
            w[static_cast<size_t>(j)] = 0.0f;
            if (momentum) (*momentum)[static_cast<size_t>(l)][static_cast<size_t>(j)] = 0.0f;
          }
        }
      }
    };
    enforce_mask(nullptr);

    SGD<float> opt(net.registry, cfg.momentum, cfg.weight_decay);
    // conv params are the leading registry entries, in convs() order
    auto& mom = opt.momentum_buffers();

    const int64_t steps_per_epoch = train.size() / cfg.batch_size;
    if (steps_per_epoch == 0) throw UsageError("sensitivity: dataset smaller than one batch");
    const int64_t total_steps = steps_per_epoch * cfg.epochs;
    const int64_t redist_every =
        std::max<int64_t>(1, steps_per_epoch / std::max(1, cfg.redistributions_per_epoch));

    std::vector<std::vector<float>> last_grads(static_cast<size_t>(n_layers));

    auto redistribute = [&]() {
      // prune the smallest-magnitude active weights globally
      const int64_t want_cycle = round_count(cfg.prune_fraction, budget);
      std::vector<std::pair<float, int64_t>> act;
      int64_t flat = 0;
      for (int l = 0; l < n_layers; ++l)
        for (int64_t j = 0; j < st.layer_total[l]; ++j, ++flat)
          if (st.active[static_cast<size_t>(flat)])
            act.push_back({std::fabs(convs[l]->w->v[static_cast<size_t>(j)]), flat});
      std::sort(act.begin(), act.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first < b.first : a.second < b.second;
      });
      int64_t pruned = 0;
      for (const auto& [mag, slot] : act) {
        if (pruned >= want_cycle) break;
        const int l = st.slots[static_cast<size_t>(slot)].first;
        if (st.layer_active[l] <= 1) continue;  // never empty a layer
        st.active[static_cast<size_t>(slot)] = 0;
        --st.layer_active[l];
        ++pruned;
      }
      // regrow the same count at the largest-gradient inactive positions
      std::vector<std::pair<float, int64_t>> inact;
      flat = 0;
      for (int l = 0; l < n_layers; ++l)
        for (int64_t j = 0; j < st.layer_total[l]; ++j, ++flat)
          if (!st.active[static_cast<size_t>(flat)]) {
            const float g = last_grads[static_cast<size_t>(l)].empty()
                                ? 0.0f
                                : std::fabs(last_grads[static_cast<size_t>(l)][static_cast<size_t>(j)]);
            inact.push_back({g, flat});
          }
      std::sort(inact.begin(), inact.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
      });
      for (int64_t i = 0; i < pruned; ++i) {
        const int64_t slot = inact[static_cast<size_t>(i)].second;
        const auto [l, j] = st.slots[static_cast<size_t>(slot)];
        st.active[static_cast<size_t>(slot)] = 1;
        ++st.layer_active[l];
        convs[l]->w->v[static_cast<size_t>(j)] = 0.0f;  // regrown weights start at zero
        mom[static_cast<size_t>(l)][static_cast<size_t>(j)] = 0.0f;
      }
      enforce_mask(&mom);
      int64_t live = 0;
      for (auto a : st.active) live += a;
      res.budget_trace.push_back(live);
    };

    int64_t global_step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      auto plan =
          BatchPlan::make(train.size(), cfg.batch_size, derive_seed(cfg.seed, "sens-shuffle", di * 1000 + epoch));
      for (int64_t bi = 0; bi < steps_per_epoch; ++bi, ++global_step) {
        Batch batch = make_batch(train, plan, bi);
        opt.zero_grad();
        TapeT<float> tape;
        auto logits = net.forward(&tape, batch.images, BNMode::Train);
        auto loss = softmax_cross_entropy(&tape, logits, batch.labels);
        if (!std::isfinite(static_cast<double>(loss->v[0])))
          throw NumericError("sensitivity: non-finite loss");
        tape.backward(loss);
        for (int l = 0; l < n_layers; ++l) last_grads[static_cast<size_t>(l)] = convs[l]->w->g;
        opt.step(cosine_lr(cfg.lr, global_step, total_steps));
        enforce_mask(&mom);
        if ((global_step + 1) % redist_every == 0) redistribute();
      }
    }

    for (int l = 0; l < n_layers; ++l) {
      LayerUtility u;
      u.layer = convs[l]->name;
      u.total = st.layer_total[l];
      u.nonzeros = st.layer_active[l];
      u.utility = static_cast<double>(u.nonzeros) / static_cast<double>(u.total);
      res.layers.push_back(std::move(u));
    }
    results.push_back(std::move(res));
  }
  return results;
}

// Spearman rank correlation with average ranks for ties.
inline double spearman_rank_correlation(const std::vector<double>& xs, const std::vector<double>& ys) {
  const size_t n = xs.size();
  if (n != ys.size() || n < 2) throw UsageError("spearman: need two equal series of length >= 2");
  auto ranks = [](const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    size_t i = 0;
    while (i < n) {
      size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
      for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(xs), ry = ranks(ys);
  double mx = 0, my = 0;
  for (size_t i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double cov = 0, vx = 0, vy = 0;
  for (size_t i = 0; i < n; ++i) {
    cov += (rx[i] - mx) * (ry[i] - my);
    vx += (rx[i] - mx) * (rx[i] - mx);
    vy += (ry[i] - my) * (ry[i] - my);
  }
  if (vx == 0 || vy == 0) return 0.0;
  return cov / std::sqrt(vx * vy);
}

}  // namespace smartnet
