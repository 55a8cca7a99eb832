#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smartnet/rng.hpp"
#include "smartnet/tensor.hpp"

namespace smartnet {

// Materialized image-classification dataset. Pixels live in [0,1]; the
// tensors are immutable once built and freely shareable across threads.
struct Dataset {
  TensorPtr<float> images;  // [N,C,H,W]
  std::vector<int> labels;
  int num_classes = 0;

  int64_t size() const { return images ? images->dim(0) : 0; }
};

// One parsed IDX file: big-endian dimensions, unsigned byte payload.
struct IdxArray {
  std::vector<int64_t> dims;
  std::vector<uint8_t> data;
};

IdxArray parse_idx(const std::string& path);
Dataset parse_idx_dataset(const std::string& images_path, const std::string& labels_path,
                          int num_classes = 0);
Dataset parse_cifar_binary(const std::string& path);

void write_idx_images(const std::string& path, const Dataset& ds);
void write_idx_labels(const std::string& path, const Dataset& ds);
void write_cifar_binary(const std::string& path, const Dataset& ds);

// First n samples (n clamped to the dataset size).
Dataset take(const Dataset& ds, int64_t n);
// Samples [begin, begin+n).
Dataset slice(const Dataset& ds, int64_t begin, int64_t n);

// Deterministic epoch ordering: a seeded permutation of [0,N).
struct BatchPlan {
  int batch_size = 0;
  uint64_t seed = 0;
  std::vector<int64_t> order;

  static BatchPlan make(int64_t n, int batch_size, uint64_t seed);
};

struct Batch {
  TensorPtr<float> images;
  std::vector<int> labels;
};

// Number of full batches per epoch; a trailing partial batch is dropped.
int64_t batch_count(const Dataset& ds, const BatchPlan& plan);
Batch make_batch(const Dataset& ds, const BatchPlan& plan, int64_t index);

// Optional training augmentation: random horizontal flip and 4-pixel
// pad-and-crop, applied in place.
void augment_batch(TensorT<float>& images, Rng& rng);

// Procedurally generated classification set: each class is a fixed smooth
// blob pattern, samples are shifted, intensity-scaled, noisy copies. The
// class templates are keyed on seed alone; sample_stream selects disjoint
// draws from the same world (0 for train, 1 for test, ...).
Dataset make_synthetic_dataset(int64_t n, uint64_t seed, int num_classes = 10, int image_size = 28,
                               int channels = 1, uint64_t sample_stream = 0);

}  // namespace smartnet
