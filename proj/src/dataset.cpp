#include "smartnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "smartnet/common.hpp"

namespace smartnet {

namespace {

uint32_t read_u32_be(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void write_u32_be(std::ofstream& out, uint32_t v) {
  const uint8_t b[4] = {uint8_t(v >> 24), uint8_t(v >> 16), uint8_t(v >> 8), uint8_t(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  in.seekg(0, std::ios::end);
  const auto len = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<uint8_t> buf(static_cast<size_t>(len));
  if (len > 0) in.read(reinterpret_cast<char*>(buf.data()), len);
  if (!in) throw DataError("read failure: " + path);
  return buf;
}

int derive_num_classes(const std::vector<int>& labels, int requested) {
  if (requested > 0) return requested;
  int mx = -1;
  for (int y : labels) mx = std::max(mx, y);
  return mx + 1;
}

void check_labels(const Dataset& ds) {
  for (int y : ds.labels)
    if (y < 0 || y >= ds.num_classes) throw DataError("label outside [0, num_classes)");
}

}  // namespace

IdxArray parse_idx(const std::string& path) {
  const auto buf = read_file(path);
  if (buf.size() < 4) throw DataError(path + ": truncated IDX header at byte 0");
  if (buf[0] != 0 || buf[1] != 0) throw DataError(path + ": bad IDX magic at byte 0");
  if (buf[2] != 0x08) throw DataError(path + ": unsupported IDX element type at byte 2");
  const int ndims = buf[3];
  if (ndims < 1 || ndims > 4) throw DataError(path + ": unsupported IDX rank at byte 3");
  const size_t header = 4 + 4 * static_cast<size_t>(ndims);
  if (buf.size() < header) throw DataError(path + ": truncated IDX dimensions at byte 4");
  IdxArray arr;
  int64_t total = 1;
  for (int i = 0; i < ndims; ++i) {
    const int64_t d = read_u32_be(buf.data() + 4 + 4 * i);
    if (d <= 0 || total > (int64_t(1) << 40) / std::max<int64_t>(d, 1))
      throw DataError(path + ": IDX dimension overflow at byte " + std::to_string(4 + 4 * i));
    arr.dims.push_back(d);
    total *= d;
  }
  if (static_cast<int64_t>(buf.size()) - static_cast<int64_t>(header) < total)
    throw DataError(path + ": truncated IDX payload at byte " + std::to_string(buf.size()));
  arr.data.assign(buf.begin() + static_cast<int64_t>(header),
                  buf.begin() + static_cast<int64_t>(header) + total);
  return arr;
}

Dataset parse_idx_dataset(const std::string& images_path, const std::string& labels_path,
                          int num_classes) {
  const IdxArray imgs = parse_idx(images_path);
  const IdxArray labs = parse_idx(labels_path);
  if (imgs.dims.size() != 3 && imgs.dims.size() != 4)
    throw DataError(images_path + ": expected [N,H,W] or [N,C,H,W] image array");
  if (labs.dims.size() != 1) throw DataError(labels_path + ": expected 1-d label array");
  const int64_t n = imgs.dims[0];
  if (labs.dims[0] != n) throw DataError("image and label counts differ");
  const int c = imgs.dims.size() == 4 ? static_cast<int>(imgs.dims[1]) : 1;
  const int h = static_cast<int>(imgs.dims[imgs.dims.size() - 2]);
  const int w = static_cast<int>(imgs.dims[imgs.dims.size() - 1]);

  Dataset ds;
  ds.images = make_tensor<float>({static_cast<int>(n), c, h, w});
  for (size_t i = 0; i < imgs.data.size(); ++i)
    ds.images->v[i] = static_cast<float>(imgs.data[i]) / 255.0f;
  ds.labels.assign(labs.data.begin(), labs.data.end());
  ds.num_classes = derive_num_classes(ds.labels, num_classes);
  check_labels(ds);
  return ds;
}

Dataset parse_cifar_binary(const std::string& path) {
  const auto buf = read_file(path);
  constexpr size_t kRecord = 3073;  // 1 label byte + 3*32*32 pixels
  if (buf.empty() || buf.size() % kRecord != 0)
    throw DataError(path + ": CIFAR binary size not a multiple of 3073 at byte " +
                    std::to_string(buf.size() - buf.size() % kRecord));
  const int64_t n = static_cast<int64_t>(buf.size() / kRecord);
  Dataset ds;
  ds.images = make_tensor<float>({static_cast<int>(n), 3, 32, 32});
  ds.labels.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const uint8_t* rec = buf.data() + i * kRecord;
    ds.labels[static_cast<size_t>(i)] = rec[0];
    float* dst = ds.images->v.data() + i * 3072;
    for (int j = 0; j < 3072; ++j) dst[j] = static_cast<float>(rec[1 + j]) / 255.0f;
  }
  ds.num_classes = 10;
  check_labels(ds);
  return ds;
}

void write_idx_images(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  const int n = ds.images->dim(0), c = ds.images->dim(1), h = ds.images->dim(2), w = ds.images->dim(3);
  const bool rank4 = c != 1;
  write_u32_be(out, rank4 ? 0x00000804u : 0x00000803u);
  write_u32_be(out, static_cast<uint32_t>(n));
  if (rank4) write_u32_be(out, static_cast<uint32_t>(c));
  write_u32_be(out, static_cast<uint32_t>(h));
  write_u32_be(out, static_cast<uint32_t>(w));
  std::vector<uint8_t> bytes(ds.images->v.size());
  for (size_t i = 0; i < bytes.size(); ++i) {
    const float v = std::min(1.0f, std::max(0.0f, ds.images->v[i]));
    bytes[i] = static_cast<uint8_t>(std::lround(v * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failure: " + path);
}

void write_idx_labels(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  write_u32_be(out, 0x00000801u);
  write_u32_be(out, static_cast<uint32_t>(ds.labels.size()));
  std::vector<uint8_t> bytes(ds.labels.size());
  for (size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<uint8_t>(ds.labels[i]);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failure: " + path);
}

void write_cifar_binary(const std::string& path, const Dataset& ds) {
  if (ds.images->dim(1) != 3 || ds.images->dim(2) != 32 || ds.images->dim(3) != 32)
    throw DataError("CIFAR binary writer expects [N,3,32,32] images");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  const int64_t n = ds.size();
  std::vector<uint8_t> rec(3073);
  for (int64_t i = 0; i < n; ++i) {
    rec[0] = static_cast<uint8_t>(ds.labels[static_cast<size_t>(i)]);
    const float* src = ds.images->v.data() + i * 3072;
    for (int j = 0; j < 3072; ++j) {
      const float v = std::min(1.0f, std::max(0.0f, src[j]));
      rec[1 + j] = static_cast<uint8_t>(std::lround(v * 255.0f));
    }
    out.write(reinterpret_cast<const char*>(rec.data()), 3073);
  }
  if (!out) throw DataError("write failure: " + path);
}

Dataset slice(const Dataset& ds, int64_t begin, int64_t n) {
  begin = std::min(begin, ds.size());
  n = std::min(n, ds.size() - begin);
  Dataset out;
  const int c = ds.images->dim(1), h = ds.images->dim(2), w = ds.images->dim(3);
  const int64_t sample = static_cast<int64_t>(c) * h * w;
  out.images = make_tensor<float>({static_cast<int>(n), c, h, w});
  std::copy(ds.images->v.begin() + begin * sample, ds.images->v.begin() + (begin + n) * sample,
            out.images->v.begin());
  out.labels.assign(ds.labels.begin() + begin, ds.labels.begin() + begin + n);
  out.num_classes = ds.num_classes;
  return out;
}

Dataset take(const Dataset& ds, int64_t n) { return slice(ds, 0, n); }

BatchPlan BatchPlan::make(int64_t n, int batch_size, uint64_t seed) {
  if (batch_size <= 0) throw UsageError("batch plan: batch size must be positive");
  if (batch_size > n) throw UsageError("batch plan: batch size exceeds dataset size");
  BatchPlan plan;
  plan.batch_size = batch_size;
  plan.seed = seed;
  plan.order.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) plan.order[static_cast<size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(plan.order);
  return plan;
}

int64_t batch_count(const Dataset& ds, const BatchPlan& plan) {
  if (plan.batch_size <= 0) throw UsageError("batches: batch size must be positive");
  return ds.size() / plan.batch_size;
}

Batch make_batch(const Dataset& ds, const BatchPlan& plan, int64_t index) {
  const int64_t nb = batch_count(ds, plan);
  if (index < 0 || index >= nb) throw UsageError("batches: index out of range");
  const int b = plan.batch_size;
  const int c = ds.images->dim(1), h = ds.images->dim(2), w = ds.images->dim(3);
  const int64_t sample = static_cast<int64_t>(c) * h * w;
  Batch out;
  out.images = make_tensor<float>({b, c, h, w});
  out.labels.resize(static_cast<size_t>(b));
  for (int i = 0; i < b; ++i) {
    const int64_t src = plan.order[static_cast<size_t>(index * b + i)];
    std::copy(ds.images->v.begin() + src * sample, ds.images->v.begin() + (src + 1) * sample,
              out.images->v.begin() + i * sample);
    out.labels[static_cast<size_t>(i)] = ds.labels[static_cast<size_t>(src)];
  }
  return out;
}

void augment_batch(TensorT<float>& images, Rng& rng) {
  const int n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  const int64_t plane = static_cast<int64_t>(h) * w;
  std::vector<float> tmp(static_cast<size_t>(c) * plane);
  for (int i = 0; i < n; ++i) {
    float* img = images.v.data() + static_cast<int64_t>(i) * c * plane;
    if (rng.uniform() < 0.5) {
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y) {
          float* row = img + ch * plane + static_cast<int64_t>(y) * w;
          std::reverse(row, row + w);
        }
    }
    const int dy = static_cast<int>(rng.below(9)) - 4;
    const int dx = static_cast<int>(rng.below(9)) - 4;
    if (dx == 0 && dy == 0) continue;
    std::fill(tmp.begin(), tmp.end(), 0.0f);
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y) {
        const int sy = y + dy;
        if (sy < 0 || sy >= h) continue;
        for (int x = 0; x < w; ++x) {
          const int sx = x + dx;
          if (sx < 0 || sx >= w) continue;
          tmp[static_cast<size_t>(ch * plane + y * w + x)] = img[ch * plane + sy * w + sx];
        }
      }
    std::copy(tmp.begin(), tmp.end(), img);
  }
}

Dataset make_synthetic_dataset(int64_t n, uint64_t seed, int num_classes, int image_size,
                               int channels, uint64_t sample_stream) {
  const int h = image_size, w = image_size;
  // class templates: a handful of smooth blobs at class-specific positions
  std::vector<std::vector<float>> templates(static_cast<size_t>(num_classes));
  for (int cls = 0; cls < num_classes; ++cls) {
    Rng trng(derive_seed(seed, "synth-template", static_cast<uint64_t>(cls)));
    auto& tpl = templates[static_cast<size_t>(cls)];
    tpl.assign(static_cast<size_t>(channels) * h * w, 0.0f);
    const int blobs = 3 + static_cast<int>(trng.below(2));
    for (int bidx = 0; bidx < blobs; ++bidx) {
      const double cy = trng.uniform(0.2, 0.8) * h;
      const double cx = trng.uniform(0.2, 0.8) * w;
      const double sg = trng.uniform(1.8, 3.5);
      const double amp = trng.uniform(0.55, 0.95);
      const int ch = static_cast<int>(trng.below(static_cast<uint64_t>(channels)));
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          tpl[static_cast<size_t>((ch * h + y) * w + x)] +=
              static_cast<float>(amp * std::exp(-d2 / (2.0 * sg * sg)));
        }
    }
    for (auto& v : tpl) v = std::min(1.0f, v);
  }

  Dataset ds;
  ds.images = make_tensor<float>({static_cast<int>(n), channels, h, w});
  ds.labels.resize(static_cast<size_t>(n));
  ds.num_classes = num_classes;
  Rng rng(derive_seed(seed, "synth-sample", sample_stream));
  for (int64_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % num_classes);  // balanced
    ds.labels[static_cast<size_t>(i)] = cls;
    const auto& tpl = templates[static_cast<size_t>(cls)];
    const int dy = static_cast<int>(rng.below(7)) - 3;
    const int dx = static_cast<int>(rng.below(7)) - 3;
    const float gain = static_cast<float>(rng.uniform(0.75, 1.0));
    float* img = ds.images->v.data() + i * channels * h * w;
    for (int ch = 0; ch < channels; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const int sy = y + dy, sx = x + dx;
          float v = 0.0f;
          if (sy >= 0 && sy < h && sx >= 0 && sx < w)
            v = tpl[static_cast<size_t>((ch * h + sy) * w + sx)];
          v = v * gain + static_cast<float>(rng.normal()) * 0.04f;
          v = std::min(1.0f, std::max(0.0f, v));
          // quantize to byte resolution so a serialize/parse cycle through
          // the on-disk formats is the identity
          img[(ch * h + y) * w + x] = static_cast<float>(std::lround(v * 255.0f)) / 255.0f;
        }
  }
  return ds;
}

}  // namespace smartnet
