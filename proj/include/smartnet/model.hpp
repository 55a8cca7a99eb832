#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "smartnet/conditional.hpp"
#include "smartnet/mask.hpp"
#include "smartnet/ops.hpp"
#include "smartnet/rng.hpp"

namespace smartnet {

// Residual network family: a stem convolution, four basic-block stages and
// a linear head. Stage tags mark which stages carry sparse expert masks.
struct ModelConfig {
  int in_channels = 1;
  int image_size = 28;
  int num_classes = 10;
  int base_width = 8;
  std::array<int, 4> width_mults{1, 2, 4, 4};
  std::array<int, 4> strides{1, 2, 2, 1};
  std::string stage_tags = "DDSS";

  int stage_width(int s) const { return base_width * width_mults[static_cast<size_t>(s)]; }
};

template <typename T>
struct ParamRef {
  std::string name;
  TensorPtr<T> tensor;
  bool weight_decay = false;
};

template <typename T>
struct RegistryMixin {
  std::vector<ParamRef<T>> registry;

  void zero_grads() {
    for (auto& p : registry) {
      p.tensor->ensure_grad();
      p.tensor->zero_grad();
    }
  }

  // Restores parameter requires_grad on scope exit; used to restrict
  // attack backward passes to the input.
  struct FreezeGuard {
    std::vector<TensorPtr<T>> tensors;
    explicit FreezeGuard(RegistryMixin& m) {
      for (auto& p : m.registry)
        if (p.tensor->requires_grad) {
          p.tensor->requires_grad = false;
          tensors.push_back(p.tensor);
        }
    }
    ~FreezeGuard() {
      for (auto& t : tensors) t->requires_grad = true;
    }
  };
};

namespace detail {

inline uint64_t fnv_mix_bytes(uint64_t h, const void* data, size_t len) {
  const uint8_t* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace detail

// The SMART network: every convolution is a ConditionalConvLayer with a
// dedicated pair of batch norms.
template <typename T>
class SmartNet : public RegistryMixin<T> {
 public:
  struct Block {
    ConditionalConvLayerT<T> conv1, conv2;
    DualBatchNormT<T> bn1, bn2;
    bool has_shortcut = false;
    ConditionalConvLayerT<T> conv_sc;
    DualBatchNormT<T> bn_sc;
    char tag = 'D';
  };

  ModelConfig cfg;
  ConditionalConvLayerT<T> stem;
  DualBatchNormT<T> stem_bn;
  std::array<Block, 4> blocks;
  TensorPtr<T> fc_w, fc_b;

  SmartNet(const ModelConfig& config, uint64_t seed) : cfg(config) {
    int layer_idx = 0;
    auto make_conv = [&](const std::string& name, int co, int ci, int k, int stride, int pad) {
      ConditionalConvLayerT<T> l(name, co, ci, k, stride, pad, derive_seed(seed, "init", layer_idx),
                                 derive_seed(seed, "noise", layer_idx));
      ++layer_idx;
      return l;
    };
    const int w0 = cfg.stage_width(0);
    stem = make_conv("stem", w0, cfg.in_channels, 3, 1, 1);
    stem_bn = DualBatchNormT<T>(w0);
    int in_ch = w0;
    for (int s = 0; s < 4; ++s) {
      const int out_ch = cfg.stage_width(s);
      const int stride = cfg.strides[static_cast<size_t>(s)];
      Block& b = blocks[static_cast<size_t>(s)];
      b.tag = cfg.stage_tags.at(static_cast<size_t>(s));
      const std::string p = "s" + std::to_string(s + 1);
      b.conv1 = make_conv(p + ".conv1", out_ch, in_ch, 3, stride, 1);
      b.bn1 = DualBatchNormT<T>(out_ch);
      b.conv2 = make_conv(p + ".conv2", out_ch, out_ch, 3, 1, 1);
      b.bn2 = DualBatchNormT<T>(out_ch);
      b.has_shortcut = (stride != 1 || in_ch != out_ch);
      if (b.has_shortcut) {
        b.conv_sc = make_conv(p + ".sc", out_ch, in_ch, 1, stride, 0);
        b.bn_sc = DualBatchNormT<T>(out_ch);
      }
      in_ch = out_ch;
    }
    // zero-initialized head: an untrained model predicts the uniform
    // distribution regardless of seed
    fc_w = make_tensor<T>({cfg.num_classes, in_ch}, T(0), true);
    fc_b = make_tensor<T>({cfg.num_classes}, T(0), true);
    build_registry();
  }

  std::vector<ConditionalConvLayerT<T>*> conv_layers() {
    std::vector<ConditionalConvLayerT<T>*> out{&stem};
    for (auto& b : blocks) {
      out.push_back(&b.conv1);
      out.push_back(&b.conv2);
      if (b.has_shortcut) out.push_back(&b.conv_sc);
    }
    return out;
  }

  std::vector<DualBatchNormT<T>*> dual_bns() {
    std::vector<DualBatchNormT<T>*> out{&stem_bn};
    for (auto& b : blocks) {
      out.push_back(&b.bn1);
      out.push_back(&b.bn2);
      if (b.has_shortcut) out.push_back(&b.bn_sc);
    }
    return out;
  }

  // Stage tag of each conv layer, aligned with conv_layers() order.
  std::vector<char> conv_tags() const {
    std::vector<char> out{'D'};  // stem stays dense in every configuration
    for (const auto& b : blocks) {
      out.push_back(b.tag);
      out.push_back(b.tag);
      if (b.has_shortcut) out.push_back(b.tag);
    }
    return out;
  }

  // Generates and freezes the mask pairs for every sparse-tagged layer.
  MaskPlan apply_mask_plan(double c_clean, double c_adv, double c_inter, uint64_t mask_seed) {
    MaskPlan plan;
    plan.seed = mask_seed;
    auto layers = conv_layers();
    auto tags = conv_tags();
    for (size_t i = 0; i < layers.size(); ++i) {
      MaskPlanEntry e;
      e.layer = layers[i]->name;
      e.elements = layers[i]->theta->size();
      e.block_tag = tags[i];
      if (tags[i] == 'S') {
        e.c_clean = c_clean;
        e.c_adv = c_adv;
        e.c_inter = c_inter;
        auto pair = generate_mask_pair(e.elements, c_clean, c_adv, c_inter,
                                       derive_seed(mask_seed, "mask", i));
        layers[i]->mask_clean = std::move(pair.first);
        layers[i]->mask_adv = std::move(pair.second);
      } else {
        e.c_clean = e.c_adv = e.c_inter = 1.0;
        layers[i]->mask_clean = SparsityMask::all_ones(e.elements);
        layers[i]->mask_adv = SparsityMask::all_ones(e.elements);
      }
      plan.entries.push_back(std::move(e));
    }
    return plan;
  }

  TensorPtr<T> forward(TapeT<T>* tape, const TensorPtr<T>& x, const PathSelector& sel, bool training,
                       BNMode bn_mode) {
    auto h = layer_forward(tape, stem, stem_bn, x, sel, training, bn_mode);
    h = relu(tape, h);
    for (auto& b : blocks) {
      auto main = layer_forward(tape, b.conv1, b.bn1, h, sel, training, bn_mode);
      main = relu(tape, main);
      main = layer_forward(tape, b.conv2, b.bn2, main, sel, training, bn_mode);
      TensorPtr<T> sc = h;
      if (b.has_shortcut) sc = layer_forward(tape, b.conv_sc, b.bn_sc, h, sel, training, bn_mode);
      h = relu(tape, add(tape, main, sc));
    }
    auto pooled = global_avgpool(tape, h);
    return linear(tape, pooled, fc_w, fc_b);
  }

  TensorPtr<T> forward(TapeT<T>* tape, const TensorPtr<T>& x, const PathSelector& sel, bool training) {
    return forward(tape, x, sel, training, training ? BNMode::Train : BNMode::Eval);
  }

  std::vector<uint64_t> noise_states() {
    std::vector<uint64_t> out;
    for (auto* l : conv_layers()) out.push_back(l->noise_rng.state());
    return out;
  }
  void set_noise_states(const std::vector<uint64_t>& st) {
    auto layers = conv_layers();
    for (size_t i = 0; i < layers.size(); ++i) layers[i]->noise_rng.set_state(st.at(i));
  }
  void seed_noise_streams(uint64_t seed) {
    auto layers = conv_layers();
    for (size_t i = 0; i < layers.size(); ++i)
      layers[i]->noise_rng.set_state(derive_seed(seed, "noise", i));
  }

  std::vector<double> alphas() {
    std::vector<double> out;
    for (auto* l : conv_layers()) out.push_back(static_cast<double>(l->alpha->v[0]));
    return out;
  }

  uint64_t mask_hash() {
    uint64_t h = 0xcbf29ce484222325ull;
    for (auto* l : conv_layers()) {
      h ^= l->mask_clean.hash();
      h *= 0x100000001b3ull;
      h ^= l->mask_adv.hash();
      h *= 0x100000001b3ull;
    }
    return h;
  }

  // Hash of every parameter value and batch-norm running statistic.
  uint64_t state_hash() {
    uint64_t h = 0xcbf29ce484222325ull;
    for (auto& p : this->registry)
      h = detail::fnv_mix_bytes(h, p.tensor->v.data(), p.tensor->v.size() * sizeof(T));
    for (auto* d : dual_bns())
      for (const BNStateT<T>* s : {&d->bn_clean, &d->bn_adv}) {
        h = detail::fnv_mix_bytes(h, s->running_mean.data(), s->running_mean.size() * sizeof(T));
        h = detail::fnv_mix_bytes(h, s->running_var.data(), s->running_var.size() * sizeof(T));
      }
    return h;
  }

 private:
  void build_registry() {
    auto& reg = this->registry;
    reg.clear();
    for (auto* l : conv_layers()) {
      reg.push_back({"theta/" + l->name, l->theta, true});
      reg.push_back({"alpha/" + l->name, l->alpha, false});
    }
    int site = 0;
    for (auto* d : dual_bns()) {
      const std::string s = "bn" + std::to_string(site++);
      reg.push_back({s + "/clean/gamma", d->bn_clean.gamma, false});
      reg.push_back({s + "/clean/beta", d->bn_clean.beta, false});
      reg.push_back({s + "/adv/gamma", d->bn_adv.gamma, false});
      reg.push_back({s + "/adv/beta", d->bn_adv.beta, false});
    }
    reg.push_back({"fc/weight", fc_w, true});
    reg.push_back({"fc/bias", fc_b, true});
  }
};

// Unconditional mirror of SmartNet: plain dense weights, one batch norm per
// site. Used for the fixed-lambda baseline, path-equivalence checks and the
// sensitivity procedure.
template <typename T>
class PlainNet : public RegistryMixin<T> {
 public:
  struct Conv {
    std::string name;
    TensorPtr<T> w;
    int stride = 1, padding = 1;
  };
  struct Block {
    Conv conv1, conv2;
    BNStateT<T> bn1, bn2;
    bool has_shortcut = false;
    Conv conv_sc;
    BNStateT<T> bn_sc;
  };

  ModelConfig cfg;
  Conv stem;
  BNStateT<T> stem_bn;
  std::array<Block, 4> blocks;
  TensorPtr<T> fc_w, fc_b;

  PlainNet(const ModelConfig& config, uint64_t seed) : cfg(config) {
    int layer_idx = 0;
    auto make_conv = [&](const std::string& name, int co, int ci, int k, int stride, int pad) {
      Conv c;
      c.name = name;
      c.stride = stride;
      c.padding = pad;
      c.w = make_tensor<T>({co, ci, k, k}, T(0), true);
      Rng init(derive_seed(seed, "init", layer_idx++));
      const double stddev = std::sqrt(2.0 / (static_cast<double>(ci) * k * k));
      for (auto& w : c.w->v) w = static_cast<T>(init.normal() * stddev);
      return c;
    };
    const int w0 = cfg.stage_width(0);
    stem = make_conv("stem", w0, cfg.in_channels, 3, 1, 1);
    stem_bn = BNStateT<T>(w0);
    int in_ch = w0;
    for (int s = 0; s < 4; ++s) {
      const int out_ch = cfg.stage_width(s);
      const int stride = cfg.strides[static_cast<size_t>(s)];
      Block& b = blocks[static_cast<size_t>(s)];
      const std::string p = "s" + std::to_string(s + 1);
      b.conv1 = make_conv(p + ".conv1", out_ch, in_ch, 3, stride, 1);
      b.bn1 = BNStateT<T>(out_ch);
      b.conv2 = make_conv(p + ".conv2", out_ch, out_ch, 3, 1, 1);
      b.bn2 = BNStateT<T>(out_ch);
      b.has_shortcut = (stride != 1 || in_ch != out_ch);
      if (b.has_shortcut) {
        b.conv_sc = make_conv(p + ".sc", out_ch, in_ch, 1, stride, 0);
        b.bn_sc = BNStateT<T>(out_ch);
      }
      in_ch = out_ch;
    }
    fc_w = make_tensor<T>({cfg.num_classes, in_ch}, T(0), true);
    fc_b = make_tensor<T>({cfg.num_classes}, T(0), true);
    build_registry();
  }

  std::vector<Conv*> convs() {
    std::vector<Conv*> out{&stem};
    for (auto& b : blocks) {
      out.push_back(&b.conv1);
      out.push_back(&b.conv2);
      if (b.has_shortcut) out.push_back(&b.conv_sc);
    }
    return out;
  }

  std::vector<BNStateT<T>*> bns() {
    std::vector<BNStateT<T>*> out{&stem_bn};
    for (auto& b : blocks) {
      out.push_back(&b.bn1);
      out.push_back(&b.bn2);
      if (b.has_shortcut) out.push_back(&b.bn_sc);
    }
    return out;
  }

  TensorPtr<T> forward(TapeT<T>* tape, const TensorPtr<T>& x, BNMode bn_mode) {
    auto h = batchnorm_forward(tape, conv2d(tape, x, stem.w, stem.stride, stem.padding), stem_bn, bn_mode);
    h = relu(tape, h);
    for (auto& b : blocks) {
      auto main = batchnorm_forward(tape, conv2d(tape, h, b.conv1.w, b.conv1.stride, b.conv1.padding),
                                    b.bn1, bn_mode);
      main = relu(tape, main);
      main = batchnorm_forward(tape, conv2d(tape, main, b.conv2.w, b.conv2.stride, b.conv2.padding),
                               b.bn2, bn_mode);
      TensorPtr<T> sc = h;
      if (b.has_shortcut)
        sc = batchnorm_forward(tape, conv2d(tape, h, b.conv_sc.w, b.conv_sc.stride, b.conv_sc.padding),
                               b.bn_sc, bn_mode);
      h = relu(tape, add(tape, main, sc));
    }
    auto pooled = global_avgpool(tape, h);
    return linear(tape, pooled, fc_w, fc_b);
  }

  uint64_t state_hash() {
    uint64_t h = 0xcbf29ce484222325ull;
    for (auto& p : this->registry)
      h = detail::fnv_mix_bytes(h, p.tensor->v.data(), p.tensor->v.size() * sizeof(T));
    for (auto* s : bns()) {
      h = detail::fnv_mix_bytes(h, s->running_mean.data(), s->running_mean.size() * sizeof(T));
      h = detail::fnv_mix_bytes(h, s->running_var.data(), s->running_var.size() * sizeof(T));
    }
    return h;
  }

 private:
  void build_registry() {
    auto& reg = this->registry;
    reg.clear();
    for (auto* c : convs()) reg.push_back({"w/" + c->name, c->w, true});
    int site = 0;
    for (auto* s : bns()) {
      const std::string n = "bn" + std::to_string(site++);
      reg.push_back({n + "/gamma", s->gamma, false});
      reg.push_back({n + "/beta", s->beta, false});
    }
    reg.push_back({"fc/weight", fc_w, true});
    reg.push_back({"fc/bias", fc_b, true});
  }
};

// Builds the unconditional network equivalent to one expert path of a SMART
// model: masked weights materialized, the path's BN set copied verbatim.
// With adversarial=true this matches the lambda=1 path at alpha=0.
template <typename T>
PlainNet<T> make_plain_from_path(SmartNet<T>& net, bool adversarial) {
  PlainNet<T> plain(net.cfg, 0);
  auto src_convs = net.conv_layers();
  auto dst_convs = plain.convs();
  for (size_t i = 0; i < src_convs.size(); ++i) {
    const auto& l = *src_convs[i];
    const SparsityMask& m = adversarial ? l.mask_adv : l.mask_clean;
    for (int64_t j = 0; j < l.theta->size(); ++j)
      dst_convs[i]->w->v[j] = m.bit(j) ? l.theta->v[j] : T(0);
  }
  auto src_bns = net.dual_bns();
  auto dst_bns = plain.bns();
  for (size_t i = 0; i < src_bns.size(); ++i) {
    const BNStateT<T>& s = adversarial ? src_bns[i]->bn_adv : src_bns[i]->bn_clean;
    dst_bns[i]->gamma->v = s.gamma->v;
    dst_bns[i]->beta->v = s.beta->v;
    dst_bns[i]->running_mean = s.running_mean;
    dst_bns[i]->running_var = s.running_var;
    dst_bns[i]->eps = s.eps;
    dst_bns[i]->momentum = s.momentum;
  }
  plain.fc_w->v = net.fc_w->v;
  plain.fc_b->v = net.fc_b->v;
  return plain;
}

}  // namespace smartnet
