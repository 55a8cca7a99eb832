#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "smartnet/adversary.hpp"
#include "smartnet/dataset.hpp"
#include "smartnet/model.hpp"
#include "smartnet/optimizer.hpp"

namespace smartnet {

struct TrainConfig {
  int epochs = 2;
  int batch_size = 128;  // split into equal clean/adversarial halves
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  uint64_t seed = 1;
  AttackConfig attack;
  bool augment = false;
  int holdout = 512;        // per-epoch evaluation sample
  bool eval_per_epoch = true;
};

struct EpochStats {
  int epoch = 0;
  double loss_clean = 0.0;
  double loss_adv = 0.0;
  double ca = 0.0;
  double ra = 0.0;
  double lr = 0.0;
  std::vector<double> alphas;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
};

struct EvalResult {
  double ca = 0.0;
  double ra = 0.0;
};

namespace detail {

template <typename Net>
std::string layer_stats_diagnostic(Net& net) {
  std::ostringstream os;
  for (auto& p : net.registry) {
    double mn = 1e300, mx = -1e300, sum = 0.0;
    for (auto v : p.tensor->v) {
      mn = std::min(mn, static_cast<double>(v));
      mx = std::max(mx, static_cast<double>(v));
      sum += static_cast<double>(v);
    }
    os << "  " << p.name << ": min=" << mn << " max=" << mx
       << " mean=" << sum / static_cast<double>(p.tensor->size()) << "\n";
  }
  return os.str();
}

}  // namespace detail

// Loss of one batch through the path selected by the boundary lambda.
// Training restricts lambda to {0,1}: 0 runs the clean expert, 1 runs the
// noise-transformed adversarial expert at full noise strength.
template <typename T>
TensorPtr<T> compute_loss(TapeT<T>* tape, SmartNet<T>& model, const TensorPtr<T>& images,
                          const std::vector<int>& labels, double lambda, bool training,
                          BNMode bn_mode) {
  if (training && lambda != 0.0 && lambda != 1.0)
    throw UsageError("compute_loss: training lambda must be 0 or 1");
  PathSelector sel{lambda};
  auto logits = model.forward(tape, images, sel, training, bn_mode);
  return softmax_cross_entropy(tape, logits, labels);
}

// Attack closure against the adversarial expert path. Batch statistics are
// used but running statistics are not advanced; noise is resampled on every
// step from the model's own streams.
template <typename T>
InputLossFn<T> adversarial_path_loss(SmartNet<T>& model, const std::vector<int>& labels,
                                     double lambda, bool training) {
  const BNMode mode = training ? BNMode::TrainFrozen : BNMode::Eval;
  return [&model, labels, lambda, mode](TapeT<T>* tape, const TensorPtr<T>& x) {
    PathSelector sel{lambda};
    auto logits = model.forward(tape, x, sel, /*training=*/mode == BNMode::TrainFrozen, mode);
    return softmax_cross_entropy(tape, logits, labels);
  };
}

// CA/RA of a trained model at one conditioning value. The attack targets
// the same path that is being evaluated. Evaluation noise comes from a
// dedicated run-seeded stream; the model's training streams are restored
// on exit.
template <typename T>
EvalResult evaluate(SmartNet<T>& model, const Dataset& data, double lambda,
                    const AttackConfig* attack, uint64_t eval_seed, int eval_batch = 100) {
  const auto saved_noise = model.noise_states();
  model.seed_noise_streams(derive_seed(eval_seed, "evalnoise"));
  Rng attack_rng(derive_seed(eval_seed, "evalattack"));
  EvalResult res;
  const int64_t n = data.size();
  int64_t hit_clean = 0, hit_adv = 0, counted = 0;
  for (int64_t begin = 0; begin < n; begin += eval_batch) {
    const int64_t b = std::min<int64_t>(eval_batch, n - begin);
    Dataset part = slice(data, begin, b);
    auto images = make_tensor<T>(part.images->shape);
    for (int64_t i = 0; i < images->size(); ++i) images->v[i] = static_cast<T>(part.images->v[i]);
    PathSelector sel{lambda};
    {
      auto logits = model.forward(nullptr, images, sel, false, BNMode::Eval);
      const auto pred = argmax_rows(*logits);
      for (int64_t i = 0; i < b; ++i)
        if (pred[static_cast<size_t>(i)] == part.labels[static_cast<size_t>(i)]) ++hit_clean;
    }
    if (attack) {
      typename SmartNet<T>::FreezeGuard freeze(model);
      auto loss_fn = [&model, &part, lambda](TapeT<T>* tape, const TensorPtr<T>& x) {
        PathSelector s{lambda};
        auto logits = model.forward(tape, x, s, false, BNMode::Eval);
        return softmax_cross_entropy(tape, logits, part.labels);
      };
      auto adv = run_attack<T>(loss_fn, images, *attack, &attack_rng);
      auto logits = model.forward(nullptr, adv, sel, false, BNMode::Eval);
      const auto pred = argmax_rows(*logits);
      for (int64_t i = 0; i < b; ++i)
        if (pred[static_cast<size_t>(i)] == part.labels[static_cast<size_t>(i)]) ++hit_adv;
    }
    counted += b;
  }
  res.ca = counted ? static_cast<double>(hit_clean) / static_cast<double>(counted) : 0.0;
  res.ra = (attack && counted) ? static_cast<double>(hit_adv) / static_cast<double>(counted) : 0.0;
  model.set_noise_states(saved_noise);
  return res;
}

// One conditional training run: each step trains the clean expert on the
// first half batch and the adversarial expert on attacked copies of the
// second half, stepping once on the equally weighted sum of both losses.
// on_epoch, when given, runs after each epoch's bookkeeping (checkpoint
// cadence, progress reporting).
template <typename T>
TrainHistory smart_train(SmartNet<T>& model, const Dataset& train, const Dataset& holdout,
                         const TrainConfig& cfg,
                         const std::function<void(int, SmartNet<T>&, const EpochStats&)>& on_epoch = {}) {
  if (cfg.batch_size % 2 != 0) throw UsageError("smart_train: batch size must be even");
  cfg.attack.validate();
  SGD<T> opt(model.registry, cfg.momentum, cfg.weight_decay);
  const int64_t steps_per_epoch = train.size() / cfg.batch_size;
  if (steps_per_epoch == 0) throw UsageError("smart_train: dataset smaller than one batch");
  const int64_t total_steps = steps_per_epoch * cfg.epochs;
  TrainHistory history;
  int64_t global_step = 0;
  const int half = cfg.batch_size / 2;
  Rng attack_rng(derive_seed(cfg.seed, "attack"));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto plan = BatchPlan::make(train.size(), cfg.batch_size, derive_seed(cfg.seed, "shuffle", epoch));
    Rng aug_rng(derive_seed(cfg.seed, "augment", epoch));
    double sum_lc = 0.0, sum_la = 0.0;
    double lr = cfg.lr;
    for (int64_t bi = 0; bi < steps_per_epoch; ++bi, ++global_step) {
      Batch batch = make_batch(train, plan, bi);
      if (cfg.augment) augment_batch(*batch.images, aug_rng);

      auto clean_imgs = make_tensor<T>({half, batch.images->dim(1), batch.images->dim(2),
                                        batch.images->dim(3)});
      auto adv_imgs = make_tensor<T>(clean_imgs->shape);
      const int64_t sample = batch.images->size() / cfg.batch_size;
      for (int64_t i = 0; i < half * sample; ++i) {
        clean_imgs->v[i] = static_cast<T>(batch.images->v[i]);
        adv_imgs->v[i] = static_cast<T>(batch.images->v[half * sample + i]);
      }
      std::vector<int> clean_labels(batch.labels.begin(), batch.labels.begin() + half);
      std::vector<int> adv_labels(batch.labels.begin() + half, batch.labels.end());

      opt.zero_grad();
      TapeT<T> tape;
      auto loss_clean = compute_loss(&tape, model, clean_imgs, clean_labels, 0.0, true, BNMode::Train);

      TensorPtr<T> perturbed;
      {
        typename SmartNet<T>::FreezeGuard freeze(model);
        perturbed = run_attack<T>(adversarial_path_loss(model, adv_labels, 1.0, true), adv_imgs,
                                  cfg.attack, &attack_rng);
      }
      auto loss_adv = compute_loss(&tape, model, perturbed, adv_labels, 1.0, true, BNMode::Train);
      auto total = add(&tape, scale(&tape, loss_clean, T(0.5)), scale(&tape, loss_adv, T(0.5)));

      if (!std::isfinite(static_cast<double>(total->v[0]))) {
        throw NumericError("smart_train: non-finite loss at epoch " + std::to_string(epoch) +
                           " step " + std::to_string(bi) + "\n" +
                           detail::layer_stats_diagnostic(model));
      }
      tape.backward(total);
      lr = cosine_lr(cfg.lr, global_step, total_steps);
      opt.step(lr);
      sum_lc += static_cast<double>(loss_clean->v[0]);
      sum_la += static_cast<double>(loss_adv->v[0]);
    }

    EpochStats st;
    st.epoch = epoch;
    st.loss_clean = sum_lc / static_cast<double>(steps_per_epoch);
    st.loss_adv = sum_la / static_cast<double>(steps_per_epoch);
    st.lr = lr;
    st.alphas = model.alphas();
    if (cfg.eval_per_epoch && holdout.size() > 0) {
      Dataset hd = take(holdout, std::min<int64_t>(cfg.holdout, holdout.size()));
      st.ca = evaluate(model, hd, 0.0, nullptr, derive_seed(cfg.seed, "eval", epoch)).ca;
      st.ra = evaluate(model, hd, 1.0, &cfg.attack, derive_seed(cfg.seed, "eval", epoch)).ra;
    }
    history.epochs.push_back(st);
    if (on_epoch) on_epoch(epoch, model, history.epochs.back());
  }
  return history;
}

// Fixed-lambda adversarial training baseline on an unconditional network:
// minimizes (1-lambda) * clean loss + lambda * adversarial loss. lambda=0
// never invokes the adversary; lambda=1 never computes the clean term.
template <typename T>
TrainHistory pgd_at_train(PlainNet<T>& model, const Dataset& train, const TrainConfig& cfg,
                          double lambda_fixed) {
  if (lambda_fixed < 0.0 || lambda_fixed > 1.0)
    throw UsageError("pgd_at_train: lambda must lie in [0,1]");
  cfg.attack.validate();
  SGD<T> opt(model.registry, cfg.momentum, cfg.weight_decay);
  const int64_t steps_per_epoch = train.size() / cfg.batch_size;
  if (steps_per_epoch == 0) throw UsageError("pgd_at_train: dataset smaller than one batch");
  const int64_t total_steps = steps_per_epoch * cfg.epochs;
  TrainHistory history;
  int64_t global_step = 0;
  Rng attack_rng(derive_seed(cfg.seed, "attack"));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto plan = BatchPlan::make(train.size(), cfg.batch_size, derive_seed(cfg.seed, "shuffle", epoch));
    Rng aug_rng(derive_seed(cfg.seed, "augment", epoch));
    double sum_lc = 0.0, sum_la = 0.0;
    double lr = cfg.lr;
    for (int64_t bi = 0; bi < steps_per_epoch; ++bi, ++global_step) {
      Batch batch = make_batch(train, plan, bi);
      if (cfg.augment) augment_batch(*batch.images, aug_rng);
      auto images = make_tensor<T>(batch.images->shape);
      for (int64_t i = 0; i < images->size(); ++i) images->v[i] = static_cast<T>(batch.images->v[i]);

      opt.zero_grad();
      TapeT<T> tape;
      TensorPtr<T> total;
      if (lambda_fixed < 1.0) {
        auto logits = model.forward(&tape, images, BNMode::Train);
        auto lc = softmax_cross_entropy(&tape, logits, batch.labels);
        sum_lc += static_cast<double>(lc->v[0]);
        total = scale(&tape, lc, static_cast<T>(1.0 - lambda_fixed));
      }
      if (lambda_fixed > 0.0) {
        TensorPtr<T> adv;
        {
          typename PlainNet<T>::FreezeGuard freeze(model);
          auto loss_fn = [&model, &batch](TapeT<T>* t, const TensorPtr<T>& x) {
            auto logits = model.forward(t, x, BNMode::TrainFrozen);
            return softmax_cross_entropy(t, logits, batch.labels);
          };
          adv = run_attack<T>(loss_fn, images, cfg.attack, &attack_rng);
        }
        auto logits = model.forward(&tape, adv, BNMode::Train);
        auto la = softmax_cross_entropy(&tape, logits, batch.labels);
        sum_la += static_cast<double>(la->v[0]);
        auto scaled = scale(&tape, la, static_cast<T>(lambda_fixed));
        total = total ? add(&tape, total, scaled) : scaled;
      }
      if (!std::isfinite(static_cast<double>(total->v[0]))) {
        throw NumericError("pgd_at_train: non-finite loss at epoch " + std::to_string(epoch) +
                           " step " + std::to_string(bi) + "\n" +
                           detail::layer_stats_diagnostic(model));
      }
      tape.backward(total);
      lr = cosine_lr(cfg.lr, global_step, total_steps);
      opt.step(lr);
    }
    EpochStats st;
    st.epoch = epoch;
    st.loss_clean = sum_lc / static_cast<double>(steps_per_epoch);
    st.loss_adv = sum_la / static_cast<double>(steps_per_epoch);
    st.lr = lr;
    history.epochs.push_back(std::move(st));
  }
  return history;
}

// Plain-network CA/RA, used for the fixed-lambda baseline.
template <typename T>
EvalResult evaluate_plain(PlainNet<T>& model, const Dataset& data, const AttackConfig* attack,
                          uint64_t eval_seed = 0, int eval_batch = 100) {
  EvalResult res;
  Rng attack_rng(derive_seed(eval_seed, "evalattack"));
  const int64_t n = data.size();
  int64_t hit_clean = 0, hit_adv = 0;
  for (int64_t begin = 0; begin < n; begin += eval_batch) {
    const int64_t b = std::min<int64_t>(eval_batch, n - begin);
    Dataset part = slice(data, begin, b);
    auto images = make_tensor<T>(part.images->shape);
    for (int64_t i = 0; i < images->size(); ++i) images->v[i] = static_cast<T>(part.images->v[i]);
    auto logits = model.forward(nullptr, images, BNMode::Eval);
    const auto pred = argmax_rows(*logits);
    for (int64_t i = 0; i < b; ++i)
      if (pred[static_cast<size_t>(i)] == part.labels[static_cast<size_t>(i)]) ++hit_clean;
    if (attack) {
      typename PlainNet<T>::FreezeGuard freeze(model);
      auto loss_fn = [&model, &part](TapeT<T>* t, const TensorPtr<T>& x) {
        auto lg = model.forward(t, x, BNMode::Eval);
        return softmax_cross_entropy(t, lg, part.labels);
      };
      auto adv = run_attack<T>(loss_fn, images, *attack, &attack_rng);
      auto lg = model.forward(nullptr, adv, BNMode::Eval);
      const auto pred2 = argmax_rows(*lg);
      for (int64_t i = 0; i < b; ++i)
        if (pred2[static_cast<size_t>(i)] == part.labels[static_cast<size_t>(i)]) ++hit_adv;
    }
  }
  res.ca = n ? static_cast<double>(hit_clean) / static_cast<double>(n) : 0.0;
  res.ra = (attack && n) ? static_cast<double>(hit_adv) / static_cast<double>(n) : 0.0;
  return res;
}

}  // namespace smartnet
