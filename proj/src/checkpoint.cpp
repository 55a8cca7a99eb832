#include "smartnet/checkpoint.hpp"

#include <bit>
#include <fstream>

#include <json.hpp>

namespace smartnet {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian");

namespace {

constexpr char kMagic[4] = {'S', 'M', 'R', 'T'};

enum RecordKind : uint8_t {
  kTensor = 0,
  kBits = 1,
  kVecF = 2,
  kU64 = 3,
  kI64 = 4,
  kStr = 5,
};

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void put_vec(std::ofstream& out, const std::vector<T>& v) {
  const uint64_t n = v.size();
  put(out, n);
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
}

void put_name(std::ofstream& out, const std::string& s) {
  const uint32_t n = static_cast<uint32_t>(s.size());
  put(out, n);
  out.write(s.data(), n);
}

struct Reader {
  std::ifstream in;
  std::string path;

  template <typename T>
  T get() {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw CheckpointError(path + ": truncated checkpoint");
    return v;
  }
  template <typename T>
  std::vector<T> get_vec() {
    const uint64_t n = get<uint64_t>();
    std::vector<T> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
    if (!in) throw CheckpointError(path + ": truncated checkpoint");
    return v;
  }
  std::string get_name() {
    const uint32_t n = get<uint32_t>();
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw CheckpointError(path + ": truncated checkpoint");
    return s;
  }
};

}  // namespace

void Checkpoint::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint: " + path);
  out.write(kMagic, 4);
  put(out, kVersion);
  const uint64_t count = tensors.size() + bitsets.size() + vecs.size() + u64s.size() + i64s.size() +
                         strs.size();
  put(out, count);
  for (const auto& [name, rec] : tensors) {
    put(out, static_cast<uint8_t>(kTensor));
    put_name(out, name);
    const uint32_t nd = static_cast<uint32_t>(rec.shape.size());
    put(out, nd);
    for (int d : rec.shape) put(out, static_cast<int32_t>(d));
    put_vec(out, rec.data);
  }
  for (const auto& [name, rec] : bitsets) {
    put(out, static_cast<uint8_t>(kBits));
    put_name(out, name);
    put(out, static_cast<uint64_t>(rec.nbits));
    put_vec(out, rec.words);
  }
  for (const auto& [name, v] : vecs) {
    put(out, static_cast<uint8_t>(kVecF));
    put_name(out, name);
    put_vec(out, v);
  }
  for (const auto& [name, v] : u64s) {
    put(out, static_cast<uint8_t>(kU64));
    put_name(out, name);
    put(out, v);
  }
  for (const auto& [name, v] : i64s) {
    put(out, static_cast<uint8_t>(kI64));
    put_name(out, name);
    put(out, v);
  }
  for (const auto& [name, v] : strs) {
    put(out, static_cast<uint8_t>(kStr));
    put_name(out, name);
    const uint64_t n = v.size();
    put(out, n);
    out.write(v.data(), static_cast<std::streamsize>(n));
  }
  if (!out) throw CheckpointError("write failure: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  Reader r{std::ifstream(path, std::ios::binary), path};
  if (!r.in) throw CheckpointError("cannot open checkpoint: " + path);
  char magic[4];
  r.in.read(magic, 4);
  if (!r.in || std::string(magic, 4) != std::string(kMagic, 4))
    throw CheckpointError(path + ": bad checkpoint magic");
  const uint32_t version = r.get<uint32_t>();
  if (version != kVersion)
    throw CheckpointError(path + ": checkpoint version " + std::to_string(version) +
                          " unsupported, expected " + std::to_string(kVersion));
  const uint64_t count = r.get<uint64_t>();
  Checkpoint ck;
  for (uint64_t i = 0; i < count; ++i) {
    const uint8_t kind = r.get<uint8_t>();
    const std::string name = r.get_name();
    switch (kind) {
      case kTensor: {
        TensorRec rec;
        const uint32_t nd = r.get<uint32_t>();
        for (uint32_t d = 0; d < nd; ++d) rec.shape.push_back(r.get<int32_t>());
        rec.data = r.get_vec<float>();
        ck.tensors.emplace(name, std::move(rec));
        break;
      }
      case kBits: {
        BitsRec rec;
        rec.nbits = static_cast<int64_t>(r.get<uint64_t>());
        rec.words = r.get_vec<uint64_t>();
        ck.bitsets.emplace(name, std::move(rec));
        break;
      }
      case kVecF:
        ck.vecs.emplace(name, r.get_vec<float>());
        break;
      case kU64:
        ck.u64s.emplace(name, r.get<uint64_t>());
        break;
      case kI64:
        ck.i64s.emplace(name, r.get<int64_t>());
        break;
      case kStr: {
        const uint64_t n = r.get<uint64_t>();
        std::string s(n, '\0');
        r.in.read(s.data(), static_cast<std::streamsize>(n));
        if (!r.in) throw CheckpointError(path + ": truncated checkpoint");
        ck.strs.emplace(name, std::move(s));
        break;
      }
      default:
        throw CheckpointError(path + ": unknown record kind");
    }
  }
  return ck;
}

std::string model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["in_channels"] = cfg.in_channels;
  j["image_size"] = cfg.image_size;
  j["num_classes"] = cfg.num_classes;
  j["base_width"] = cfg.base_width;
  j["width_mults"] = cfg.width_mults;
  j["strides"] = cfg.strides;
  j["stage_tags"] = cfg.stage_tags;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  ModelConfig cfg;
  nlohmann::json j = nlohmann::json::parse(text);
  cfg.in_channels = j.at("in_channels").get<int>();
  cfg.image_size = j.at("image_size").get<int>();
  cfg.num_classes = j.at("num_classes").get<int>();
  cfg.base_width = j.at("base_width").get<int>();
  auto wm = j.at("width_mults").get<std::vector<int>>();
  auto st = j.at("strides").get<std::vector<int>>();
  for (size_t i = 0; i < 4; ++i) {
    cfg.width_mults[i] = wm.at(i);
    cfg.strides[i] = st.at(i);
  }
  cfg.stage_tags = j.at("stage_tags").get<std::string>();
  return cfg;
}

Checkpoint snapshot_model(SmartNet<float>& net, int64_t epoch) {
  Checkpoint ck;
  ck.strs["model_config"] = model_config_to_json(net.cfg);
  ck.i64s["epoch"] = epoch;
  for (auto& p : net.registry) {
    Checkpoint::TensorRec rec;
    rec.shape = p.tensor->shape;
    rec.data = p.tensor->v;
    ck.tensors.emplace(p.name, std::move(rec));
  }
  auto layers = net.conv_layers();
  for (size_t i = 0; i < layers.size(); ++i) {
    const auto& l = *layers[i];
    ck.bitsets["mask_clean/" + l.name] = {l.mask_clean.size(), l.mask_clean.words()};
    ck.bitsets["mask_adv/" + l.name] = {l.mask_adv.size(), l.mask_adv.words()};
    ck.u64s["rng/noise/" + l.name] = l.noise_rng.state();
  }
  auto bns = net.dual_bns();
  for (size_t i = 0; i < bns.size(); ++i) {
    const std::string s = "bn" + std::to_string(i);
    ck.vecs[s + "/clean/running_mean"] = bns[i]->bn_clean.running_mean;
    ck.vecs[s + "/clean/running_var"] = bns[i]->bn_clean.running_var;
    ck.vecs[s + "/adv/running_mean"] = bns[i]->bn_adv.running_mean;
    ck.vecs[s + "/adv/running_var"] = bns[i]->bn_adv.running_var;
  }
  return ck;
}

SmartNet<float> restore_model(const Checkpoint& ck) {
  const auto it = ck.strs.find("model_config");
  if (it == ck.strs.end()) throw CheckpointError("checkpoint carries no model config");
  SmartNet<float> net(model_config_from_json(it->second), 0);
  for (auto& p : net.registry) {
    const auto rec = ck.tensors.find(p.name);
    if (rec == ck.tensors.end()) throw CheckpointError("checkpoint missing tensor: " + p.name);
    if (rec->second.shape != p.tensor->shape ||
        rec->second.data.size() != p.tensor->v.size())
      throw CheckpointError("checkpoint tensor shape mismatch: " + p.name);
    p.tensor->v = rec->second.data;
  }
  auto layers = net.conv_layers();
  for (auto* l : layers) {
    const auto mc = ck.bitsets.find("mask_clean/" + l->name);
    const auto ma = ck.bitsets.find("mask_adv/" + l->name);
    if (mc == ck.bitsets.end() || ma == ck.bitsets.end())
      throw CheckpointError("checkpoint missing masks for layer: " + l->name);
    auto check_bits = [&](const Checkpoint::BitsRec& rec) {
      if (rec.nbits != l->theta->size() ||
          rec.words.size() != static_cast<size_t>((rec.nbits + 63) / 64))
        throw CheckpointError("checkpoint mask size mismatch for layer: " + l->name);
    };
    check_bits(mc->second);
    check_bits(ma->second);
    SparsityMask m1(mc->second.nbits), m2(ma->second.nbits);
    m1.words() = mc->second.words;
    m2.words() = ma->second.words;
    l->mask_clean = std::move(m1);
    l->mask_adv = std::move(m2);
    const auto rs = ck.u64s.find("rng/noise/" + l->name);
    if (rs != ck.u64s.end()) l->noise_rng.set_state(rs->second);
  }
  auto bns = net.dual_bns();
  for (size_t i = 0; i < bns.size(); ++i) {
    const std::string s = "bn" + std::to_string(i);
    auto need = [&](const std::string& key) -> const std::vector<float>& {
      const auto v = ck.vecs.find(key);
      if (v == ck.vecs.end()) throw CheckpointError("checkpoint missing record: " + key);
      return v->second;
    };
    bns[i]->bn_clean.running_mean = need(s + "/clean/running_mean");
    bns[i]->bn_clean.running_var = need(s + "/clean/running_var");
    bns[i]->bn_adv.running_mean = need(s + "/adv/running_mean");
    bns[i]->bn_adv.running_var = need(s + "/adv/running_var");
  }
  return net;
}

int64_t checkpoint_epoch(const Checkpoint& ck) {
  const auto it = ck.i64s.find("epoch");
  return it == ck.i64s.end() ? 0 : it->second;
}

}  // namespace smartnet
