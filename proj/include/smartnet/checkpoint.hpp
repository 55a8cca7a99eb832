#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "smartnet/mask.hpp"
#include "smartnet/model.hpp"

namespace smartnet {

// Versioned binary container: "SMRT" magic, little-endian named records.
// load(save(x)) is byte-exact; a version mismatch raises, never reinterprets.
struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  struct TensorRec {
    std::vector<int> shape;
    std::vector<float> data;
  };
  struct BitsRec {
    int64_t nbits = 0;
    std::vector<uint64_t> words;
  };

  std::map<std::string, TensorRec> tensors;
  std::map<std::string, BitsRec> bitsets;
  std::map<std::string, std::vector<float>> vecs;
  std::map<std::string, uint64_t> u64s;
  std::map<std::string, int64_t> i64s;
  std::map<std::string, std::string> strs;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

// Model state <-> checkpoint records. The model configuration travels
// inside the container so a checkpoint alone is enough to rebuild the net.
Checkpoint snapshot_model(SmartNet<float>& net, int64_t epoch);
SmartNet<float> restore_model(const Checkpoint& ckpt);
int64_t checkpoint_epoch(const Checkpoint& ckpt);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace smartnet
