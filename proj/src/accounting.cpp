#include "smartnet/accounting.hpp"

#include <cstdio>
#include <sstream>

namespace smartnet {

namespace {

void push_conv(ArchSpec& arch, const std::string& name, int k, int ci, int co, int stride, int pad,
               int in_h, int in_w, char tag) {
  ConvDesc d;
  d.name = name;
  d.k = k;
  d.ci = ci;
  d.co = co;
  d.stride = stride;
  d.padding = pad;
  d.in_h = in_h;
  d.in_w = in_w;
  d.tag = tag;
  arch.convs.push_back(std::move(d));
}

}  // namespace

ArchSpec resnet34_cifar_arch(int num_classes, int in_channels, int image_size,
                             const std::string& stage_tags) {
  if (stage_tags.size() != 4) throw ConfigError("resnet34 arch: need one tag per stage");
  ArchSpec arch;
  arch.name = "resnet34_cifar";
  const int widths[4] = {64, 128, 256, 512};
  const int blocks[4] = {3, 4, 6, 3};
  const int strides[4] = {1, 2, 2, 2};

  int h = image_size, w = image_size;
  push_conv(arch, "stem", 3, in_channels, widths[0], 1, 1, h, w, 'D');
  arch.bn_affine_per_path += 2 * widths[0];

  int in_ch = widths[0];
  for (int s = 0; s < 4; ++s) {
    const char tag = stage_tags[static_cast<size_t>(s)];
    for (int b = 0; b < blocks[s]; ++b) {
      const int stride = b == 0 ? strides[s] : 1;
      const int out_ch = widths[s];
      const std::string p = "s" + std::to_string(s + 1) + ".b" + std::to_string(b + 1);
      push_conv(arch, p + ".conv1", 3, in_ch, out_ch, stride, 1, h, w, tag);
      const int oh = (h + 2 - 3) / stride + 1, ow = (w + 2 - 3) / stride + 1;
      push_conv(arch, p + ".conv2", 3, out_ch, out_ch, 1, 1, oh, ow, tag);
      arch.bn_affine_per_path += 2 * 2 * out_ch;
      if (stride != 1 || in_ch != out_ch) {
        push_conv(arch, p + ".sc", 1, in_ch, out_ch, stride, 0, h, w, tag);
        arch.bn_affine_per_path += 2 * out_ch;
      }
      h = oh;
      w = ow;
      in_ch = out_ch;
    }
  }
  arch.classifier_params = static_cast<int64_t>(widths[3]) * num_classes + num_classes;
  return arch;
}

ArchSpec desknet_arch(const ModelConfig& cfg) {
  ArchSpec arch;
  arch.name = "desknet";
  int h = cfg.image_size, w = cfg.image_size;
  const int w0 = cfg.stage_width(0);
  push_conv(arch, "stem", 3, cfg.in_channels, w0, 1, 1, h, w, 'D');
  arch.bn_affine_per_path += 2 * w0;
  int in_ch = w0;
  for (int s = 0; s < 4; ++s) {
    const char tag = cfg.stage_tags.at(static_cast<size_t>(s));
    const int out_ch = cfg.stage_width(s);
    const int stride = cfg.strides[static_cast<size_t>(s)];
    const std::string p = "s" + std::to_string(s + 1);
    push_conv(arch, p + ".conv1", 3, in_ch, out_ch, stride, 1, h, w, tag);
    const int oh = (h + 2 - 3) / stride + 1, ow = (w + 2 - 3) / stride + 1;
    push_conv(arch, p + ".conv2", 3, out_ch, out_ch, 1, 1, oh, ow, tag);
    arch.bn_affine_per_path += 2 * 2 * out_ch;
    if (stride != 1 || in_ch != out_ch) {
      push_conv(arch, p + ".sc", 1, in_ch, out_ch, stride, 0, h, w, tag);
      arch.bn_affine_per_path += 2 * out_ch;
    }
    h = oh;
    w = ow;
    in_ch = out_ch;
  }
  arch.classifier_params = static_cast<int64_t>(in_ch) * cfg.num_classes + cfg.num_classes;
  return arch;
}

int64_t conv_nonzeros(const ArchSpec& arch, const PlanDensities& plan, ExpertPath path) {
  int64_t total = 0;
  for (const auto& c : arch.convs) total += round_count(plan.path_density(c.tag, path), c.weights());
  return total;
}

int64_t count_params(const ArchSpec& arch, const PlanDensities& plan, ExpertPath path) {
  return conv_nonzeros(arch, plan, path) + arch.bn_affine_per_path + arch.classifier_params;
}

int64_t dense_total_params(const ArchSpec& arch) {
  int64_t conv = 0;
  for (const auto& c : arch.convs) conv += c.weights();
  return conv + arch.bn_affine_per_path + arch.classifier_params;
}

int64_t mac_count(const ArchSpec& arch, const PlanDensities& plan, ExpertPath path) {
  int64_t total = 0;
  for (const auto& c : arch.convs)
    total += round_count(plan.path_density(c.tag, path), c.weights()) * c.out_pixels();
  return total;
}

// One addition per non-zero adversarial-path weight: the noise is only
// materialized where the adversarial mask is non-zero. The clean path adds
// no noise at all.
int64_t add_overhead(const ArchSpec& arch, const PlanDensities& plan, ExpertPath path) {
  if (path == ExpertPath::Clean) return 0;
  return conv_nonzeros(arch, plan, ExpertPath::Adv);
}

CostReport make_cost_report(const ArchSpec& arch, const PlanDensities& plan) {
  CostReport r;
  r.arch = arch.name;
  int64_t conv_dense = 0, mac_dense = 0;
  for (const auto& c : arch.convs) {
    conv_dense += c.weights();
    mac_dense += c.weights() * c.out_pixels();
  }
  r.dense_conv_params = conv_dense;
  r.dense_total_params = conv_dense + arch.bn_affine_per_path + arch.classifier_params;
  r.conv_nonzeros_clean = conv_nonzeros(arch, plan, ExpertPath::Clean);
  r.conv_nonzeros_adv = conv_nonzeros(arch, plan, ExpertPath::Adv);
  r.nonzero_params_clean_path = count_params(arch, plan, ExpertPath::Clean);
  r.nonzero_params_adv_path = count_params(arch, plan, ExpertPath::Adv);
  r.normalized_params_clean =
      static_cast<double>(r.nonzero_params_clean_path) / static_cast<double>(r.dense_total_params);
  r.normalized_params_adv =
      static_cast<double>(r.nonzero_params_adv_path) / static_cast<double>(r.dense_total_params);
  r.normalized_conv_only_clean =
      static_cast<double>(r.conv_nonzeros_clean) / static_cast<double>(conv_dense);
  r.normalized_conv_only_adv =
      static_cast<double>(r.conv_nonzeros_adv) / static_cast<double>(conv_dense);
  r.mac_count_clean = mac_count(arch, plan, ExpertPath::Clean);
  r.mac_count_adv = mac_count(arch, plan, ExpertPath::Adv);
  r.mac_count_dense = mac_dense;
  r.mac_overhead = 0;  // weight conditioning introduces additions, not MACs
  r.add_overhead_clean = add_overhead(arch, plan, ExpertPath::Clean);
  r.add_overhead_adv = add_overhead(arch, plan, ExpertPath::Adv);
  r.noise_scalar_multiplies = r.add_overhead_adv;
  return r;
}

EnergyEstimate energy_estimate(const CostReport& report, ExpertPath path, const EnergyCostTable& table) {
  if (table.mac_cost < 0 || table.add_cost < 0 || table.shift_add_cost < 0)
    throw ConfigError("energy: cost table entries must not be negative");
  if (table.mac_cost == 0 && table.add_cost == 0 && table.shift_add_cost == 0)
    throw ConfigError("energy: cost table is identically zero");
  EnergyEstimate e;
  const double macs = static_cast<double>(path == ExpertPath::Clean ? report.mac_count_clean
                                                                    : report.mac_count_adv);
  const double adds = static_cast<double>(path == ExpertPath::Clean ? report.add_overhead_clean
                                                                    : report.add_overhead_adv);
  e.energy = macs * table.mac_cost + adds * table.add_cost;
  e.energy_shift_add = macs * table.shift_add_cost + adds * table.add_cost;
  e.mac_to_add_ratio = table.add_cost > 0 ? table.mac_cost / table.add_cost : 0.0;
  e.shift_add_to_add_ratio = table.add_cost > 0 ? table.shift_add_cost / table.add_cost : 0.0;
  return e;
}

std::string format_cost_report(const CostReport& r) {
  std::ostringstream os;
  char buf[128];
  os << "cost report: " << r.arch << "\n";
  auto line = [&](const char* label, int64_t clean, int64_t adv) {
    std::snprintf(buf, sizeof(buf), "  %-28s %14lld %14lld\n", label,
                  static_cast<long long>(clean), static_cast<long long>(adv));
    os << buf;
  };
  std::snprintf(buf, sizeof(buf), "  %-28s %14s %14s\n", "", "clean", "adv");
  os << buf;
  line("non-zero params (path)", r.nonzero_params_clean_path, r.nonzero_params_adv_path);
  line("conv non-zeros (path)", r.conv_nonzeros_clean, r.conv_nonzeros_adv);
  line("MAC count (path)", r.mac_count_clean, r.mac_count_adv);
  line("ADD overhead (path)", r.add_overhead_clean, r.add_overhead_adv);
  std::snprintf(buf, sizeof(buf), "  %-28s %14lld\n", "dense total params",
                static_cast<long long>(r.dense_total_params));
  os << buf;
  std::snprintf(buf, sizeof(buf), "  %-28s %14lld\n", "dense conv params",
                static_cast<long long>(r.dense_conv_params));
  os << buf;
  std::snprintf(buf, sizeof(buf), "  %-28s %14lld\n", "MAC overhead",
                static_cast<long long>(r.mac_overhead));
  os << buf;
  std::snprintf(buf, sizeof(buf), "  %-28s %14lld\n", "noise scalar multiplies",
                static_cast<long long>(r.noise_scalar_multiplies));
  os << buf;
  std::snprintf(buf, sizeof(buf), "  %-28s %14.3f %14.3f\n", "normalized params",
                r.normalized_params_clean, r.normalized_params_adv);
  os << buf;
  std::snprintf(buf, sizeof(buf), "  %-28s %14.3f %14.3f\n", "normalized params (conv only)",
                r.normalized_conv_only_clean, r.normalized_conv_only_adv);
  os << buf;
  return os.str();
}

}  // namespace smartnet
