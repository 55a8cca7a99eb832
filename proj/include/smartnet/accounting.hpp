#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smartnet/common.hpp"
#include "smartnet/mask.hpp"
#include "smartnet/model.hpp"

namespace smartnet {

enum class ExpertPath { Clean, Adv };

// Static description of one convolution for analytic cost accounting.
struct ConvDesc {
  std::string name;
  int k = 3;
  int ci = 0, co = 0;
  int stride = 1, padding = 1;
  int in_h = 0, in_w = 0;
  char tag = 'D';  // D: dense in both paths, S: sparse expert masks

  int64_t weights() const { return static_cast<int64_t>(k) * k * ci * co; }
  int out_h() const { return (in_h + 2 * padding - k) / stride + 1; }
  int out_w() const { return (in_w + 2 * padding - k) / stride + 1; }
  int64_t out_pixels() const { return static_cast<int64_t>(out_h()) * out_w(); }
};

struct ArchSpec {
  std::string name;
  std::vector<ConvDesc> convs;
  int64_t bn_affine_per_path = 0;  // gamma+beta of one BN set
  int64_t classifier_params = 0;   // weights + bias of the linear head
};

// Density targets applied to the sparse-tagged layers; dense-tagged layers
// always carry density 1 on both paths.
struct PlanDensities {
  double c_clean = 0.5;
  double c_adv = 0.5;
  double c_inter = 0.25;

  double path_density(char tag, ExpertPath p) const {
    if (tag != 'S') return 1.0;
    return p == ExpertPath::Clean ? c_clean : c_adv;
  }
};

struct CostReport {
  std::string arch;
  int64_t dense_total_params = 0;       // conv + one BN set + classifier
  int64_t dense_conv_params = 0;
  int64_t nonzero_params_clean_path = 0;
  int64_t nonzero_params_adv_path = 0;
  int64_t conv_nonzeros_clean = 0;
  int64_t conv_nonzeros_adv = 0;
  double normalized_params_clean = 0.0;  // active path / dense total
  double normalized_params_adv = 0.0;
  double normalized_conv_only_clean = 0.0;
  double normalized_conv_only_adv = 0.0;
  int64_t mac_count_clean = 0;
  int64_t mac_count_adv = 0;
  int64_t mac_count_dense = 0;
  int64_t mac_overhead = 0;  // extra MACs introduced by conditioning (none here)
  int64_t add_overhead_clean = 0;
  int64_t add_overhead_adv = 0;
  int64_t noise_scalar_multiplies = 0;  // alpha*eta products, reported apart from adds
};

struct EnergyCostTable {
  double mac_cost = 1.0;
  double add_cost = 1.0;
  double shift_add_cost = 1.8;
};

struct EnergyEstimate {
  double energy = 0.0;            // mac_count*mac_cost + add_overhead*add_cost
  double energy_shift_add = 0.0;  // MACs costed as shift-add instead
  double mac_to_add_ratio = 0.0;
  double shift_add_to_add_ratio = 0.0;
};

ArchSpec resnet34_cifar_arch(int num_classes = 10, int in_channels = 3, int image_size = 32,
                             const std::string& stage_tags = "DDSS");
ArchSpec desknet_arch(const ModelConfig& cfg);

int64_t conv_nonzeros(const ArchSpec& arch, const PlanDensities& plan, ExpertPath path);
int64_t count_params(const ArchSpec& arch, const PlanDensities& plan, ExpertPath path);
int64_t dense_total_params(const ArchSpec& arch);
int64_t mac_count(const ArchSpec& arch, const PlanDensities& plan, ExpertPath path);
int64_t add_overhead(const ArchSpec& arch, const PlanDensities& plan, ExpertPath path);

CostReport make_cost_report(const ArchSpec& arch, const PlanDensities& plan);
EnergyEstimate energy_estimate(const CostReport& report, ExpertPath path, const EnergyCostTable& table);

std::string format_cost_report(const CostReport& report);

}  // namespace smartnet
