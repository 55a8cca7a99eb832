#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "smartnet/accounting.hpp"
#include "smartnet/rng.hpp"

using namespace smartnet;

namespace {

// independent oracle: one counter increment per multiply in the naive
// loop nest, skipping multiplies whose weight is masked to zero
int64_t oracle_macs(const ConvDesc& c, const SparsityMask& mask) {
  int64_t count = 0;
  for (int oh = 0; oh < c.out_h(); ++oh)
    for (int ow = 0; ow < c.out_w(); ++ow)
      for (int64_t widx = 0; widx < c.weights(); ++widx)
        if (mask.bit(widx)) ++count;
  return count;
}

SparsityMask materialize_mask(const ConvDesc& c, const PlanDensities& plan, ExpertPath path,
                              uint64_t seed) {
  if (c.tag != 'S') return SparsityMask::all_ones(c.weights());
  // per-path counts do not depend on the overlap; a fully shared pair is
  // always feasible and carries the exact support size
  const double d = plan.path_density(c.tag, path);
  return generate_mask_pair(c.weights(), d, d, d, seed).first;
}

}  // namespace

TEST_CASE("resnet34 cifar-stem figures match the reference costs") {
  auto arch = resnet34_cifar_arch(10, 3, 32, "DDSS");

  SUBCASE("all-dense noisy plan: adversarial add overhead about 21.28M") {
    auto dense_arch = resnet34_cifar_arch(10, 3, 32, "DDDD");
    PlanDensities plan{1.0, 1.0, 1.0};
    const double adds = static_cast<double>(add_overhead(dense_arch, plan, ExpertPath::Adv));
    CHECK(adds == doctest::Approx(21.28e6).epsilon(0.01));
    CHECK(add_overhead(dense_arch, plan, ExpertPath::Clean) == 0);
  }

  SUBCASE("half-density second-half plan: normalized params about 0.54") {
    PlanDensities plan{0.5, 0.5, 0.25};
    auto report = make_cost_report(arch, plan);
    CHECK(std::fabs(report.normalized_params_adv - 0.54) <= 0.02);
    CHECK(std::fabs(report.normalized_params_clean - 0.54) <= 0.02);
    CHECK(std::fabs(report.normalized_conv_only_adv - 0.54) <= 0.02);

    const double adds = static_cast<double>(report.add_overhead_adv);
    CHECK(adds == doctest::Approx(11.4e6).epsilon(0.05));
    CHECK(report.add_overhead_clean == 0);
    CHECK(report.mac_overhead == 0);
  }
}

TEST_CASE("dense plan counts the full parameter population") {
  auto arch = resnet34_cifar_arch(10, 3, 32, "DDSS");
  PlanDensities dense{1.0, 1.0, 1.0};
  // with S stages at density 1 the plan is effectively dense
  CHECK(count_params(arch, dense, ExpertPath::Clean) == dense_total_params(arch));
  auto report = make_cost_report(arch, dense);
  CHECK(report.normalized_params_clean == doctest::Approx(1.0));
}

TEST_CASE("toy single-conv arithmetic") {
  ArchSpec arch;
  arch.name = "toy";
  ConvDesc c;
  c.name = "only";
  c.k = 1;
  c.ci = 10;
  c.co = 10;
  c.stride = 1;
  c.padding = 0;
  c.in_h = 4;
  c.in_w = 4;
  c.tag = 'S';
  arch.convs.push_back(c);
  arch.bn_affine_per_path = 20;
  arch.classifier_params = 0;
  PlanDensities plan{0.5, 0.5, 0.25};
  CHECK(conv_nonzeros(arch, plan, ExpertPath::Clean) == 50);
  CHECK(count_params(arch, plan, ExpertPath::Clean) == 70);

  // dense 1x1 conv over a 4x4 map with one in/out channel: 16 MACs
  ArchSpec tiny;
  ConvDesc t;
  t.name = "t";
  t.k = 1;
  t.ci = 1;
  t.co = 1;
  t.stride = 1;
  t.padding = 0;
  t.in_h = 4;
  t.in_w = 4;
  t.tag = 'D';
  tiny.convs.push_back(t);
  CHECK(mac_count(tiny, plan, ExpertPath::Clean) == 16);

  // density 0.5 halves the MACs exactly
  ArchSpec halfable;
  ConvDesc hcv = c;  // 100 weights, S tag
  halfable.convs.push_back(hcv);
  PlanDensities halfplan{0.5, 0.5, 0.25};
  PlanDensities denseplan{1.0, 1.0, 1.0};
  CHECK(mac_count(halfable, halfplan, ExpertPath::Adv) * 2 ==
        mac_count(halfable, denseplan, ExpertPath::Adv));
}

TEST_CASE("analytic counts equal brute-force oracles on 20 random specs") {
  Rng rng(777);
  for (int trial = 0; trial < 20; ++trial) {
    ArchSpec arch;
    arch.name = "rand";
    const int layers = 1 + static_cast<int>(rng.below(4));
    int h = 6 + static_cast<int>(rng.below(6));
    int w = h;
    int ci = 1 + static_cast<int>(rng.below(3));
    for (int l = 0; l < layers; ++l) {
      ConvDesc c;
      c.name = "c" + std::to_string(l);
      c.k = 1 + 2 * static_cast<int>(rng.below(2));  // 1 or 3
      c.ci = ci;
      c.co = 1 + static_cast<int>(rng.below(4));
      c.stride = 1 + static_cast<int>(rng.below(2));
      c.padding = c.k / 2;
      c.in_h = h;
      c.in_w = w;
      c.tag = rng.uniform() < 0.5 ? 'S' : 'D';
      arch.convs.push_back(c);
      h = c.out_h();
      w = c.out_w();
      ci = c.co;
      if (h < 2 || w < 2) break;
    }
    PlanDensities plan{rng.uniform(0.3, 1.0), rng.uniform(0.3, 1.0), 0.0};
    // smallest feasible intersection keeps the union inside the tensor
    plan.c_inter = std::max(0.0, plan.c_clean + plan.c_adv - 1.0);

    for (ExpertPath path : {ExpertPath::Clean, ExpertPath::Adv}) {
      int64_t oracle_param_total = 0, oracle_mac_total = 0;
      for (size_t li = 0; li < arch.convs.size(); ++li) {
        auto mask = materialize_mask(arch.convs[li], plan, path, rng.next_u64() | 1u);
        oracle_param_total += mask.popcount();
        oracle_mac_total += oracle_macs(arch.convs[li], mask);
      }
      CHECK(conv_nonzeros(arch, plan, path) == oracle_param_total);
      CHECK(mac_count(arch, plan, path) == oracle_mac_total);
    }
  }
}

TEST_CASE("lowering any density never increases any count") {
  auto arch = resnet34_cifar_arch(10, 3, 32, "DDSS");
  PlanDensities hi{0.8, 0.7, 0.3};
  PlanDensities lo{0.6, 0.5, 0.2};
  CHECK(count_params(arch, lo, ExpertPath::Clean) <= count_params(arch, hi, ExpertPath::Clean));
  CHECK(count_params(arch, lo, ExpertPath::Adv) <= count_params(arch, hi, ExpertPath::Adv));
  CHECK(mac_count(arch, lo, ExpertPath::Adv) <= mac_count(arch, hi, ExpertPath::Adv));
  CHECK(add_overhead(arch, lo, ExpertPath::Adv) <= add_overhead(arch, hi, ExpertPath::Adv));
}

TEST_CASE("energy estimates") {
  CostReport r;
  r.mac_count_clean = 1000;
  r.mac_count_adv = 1000;
  r.add_overhead_clean = 0;
  r.add_overhead_adv = 500;

  SUBCASE("zero add cost leaves only the MAC term") {
    EnergyCostTable t{2.0, 0.0, 1.8};
    auto e = energy_estimate(r, ExpertPath::Adv, t);
    CHECK(e.energy == doctest::Approx(2000.0));
  }
  SUBCASE("equal costs weight total op count") {
    EnergyCostTable t{1.0, 1.0, 1.8};
    auto e = energy_estimate(r, ExpertPath::Adv, t);
    CHECK(e.energy == doctest::Approx(1500.0));
    CHECK(e.shift_add_to_add_ratio == doctest::Approx(1.8));
  }
  SUBCASE("shift-add costing on an add-free report is exactly 1.8x") {
    CostReport macs_only = r;
    macs_only.add_overhead_adv = 0;
    EnergyCostTable t{1.0, 1.0, 1.8};
    auto e = energy_estimate(macs_only, ExpertPath::Adv, t);
    CHECK(e.energy_shift_add / e.energy == doctest::Approx(1.8));
  }
  SUBCASE("negative costs are rejected") {
    EnergyCostTable t{-1.0, 1.0, 1.8};
    CHECK_THROWS_AS(energy_estimate(r, ExpertPath::Adv, t), ConfigError);
  }
}

TEST_CASE("report text prints three-decimal normalized params") {
  auto arch = resnet34_cifar_arch(10, 3, 32, "DDDD");
  PlanDensities dense{1.0, 1.0, 1.0};
  auto text = format_cost_report(make_cost_report(arch, dense));
  CHECK(text.find("1.000") != std::string::npos);
}
