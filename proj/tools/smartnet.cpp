#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "smartnet/accounting.hpp"
#include "smartnet/checkpoint.hpp"
#include "smartnet/config.hpp"
#include "smartnet/dataset.hpp"
#include "smartnet/sensitivity.hpp"
#include "smartnet/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace smartnet;

namespace {

struct LoadedData {
  Dataset train;
  Dataset test;
};

LoadedData load_data(const RunConfig& cfg) {
  LoadedData d;
  const std::string source = cfg.get("data.source");
  if (source == "synthetic") {
    const uint64_t world = derive_seed(cfg.get_u64("run.seed"), "data-world");
    d.train = make_synthetic_dataset(cfg.get_int("data.synth_train"), world,
                                     static_cast<int>(cfg.get_int("data.synth_classes")),
                                     static_cast<int>(cfg.get_int("data.synth_image_size")),
                                     static_cast<int>(cfg.get_int("data.synth_channels")), 0);
    d.test = make_synthetic_dataset(cfg.get_int("data.synth_test"), world,
                                    static_cast<int>(cfg.get_int("data.synth_classes")),
                                    static_cast<int>(cfg.get_int("data.synth_image_size")),
                                    static_cast<int>(cfg.get_int("data.synth_channels")), 1);
  } else if (source == "idx") {
    d.train = parse_idx_dataset(cfg.get("data.idx_train_images"), cfg.get("data.idx_train_labels"),
                                static_cast<int>(cfg.get_int("data.num_classes")));
    d.test = parse_idx_dataset(cfg.get("data.idx_test_images"), cfg.get("data.idx_test_labels"),
                               static_cast<int>(cfg.get_int("data.num_classes")));
  } else if (source == "cifar") {
    d.train = parse_cifar_binary(cfg.get("data.cifar_train"));
    d.test = parse_cifar_binary(cfg.get("data.cifar_test"));
  } else {
    throw ConfigError("data.source must be synthetic, idx or cifar");
  }
  if (const int64_t lim = cfg.get_int("data.limit_train"); lim > 0) d.train = take(d.train, lim);
  if (const int64_t lim = cfg.get_int("data.limit_test"); lim > 0) d.test = take(d.test, lim);
  if (d.train.num_classes != d.test.num_classes) {
    const int nc = std::max(d.train.num_classes, d.test.num_classes);
    d.train.num_classes = nc;
    d.test.num_classes = nc;
  }
  return d;
}

ModelConfig model_config_from(const RunConfig& cfg, const Dataset& ref) {
  ModelConfig mc;
  mc.in_channels = ref.images->dim(1);
  mc.image_size = ref.images->dim(2);
  mc.num_classes = ref.num_classes;
  mc.base_width = static_cast<int>(cfg.get_int("arch.base_width"));
  mc.stage_tags = cfg.get("arch.stage_tags");
  if (mc.stage_tags.size() != 4) throw ConfigError("arch.stage_tags must name four stages");
  for (char t : mc.stage_tags)
    if (t != 'D' && t != 'S') throw ConfigError("arch.stage_tags must use only D and S");
  return mc;
}

AttackConfig attack_config_from(const RunConfig& cfg) {
  AttackConfig a;
  const std::string kind = cfg.get("attack.kind");
  if (kind == "pgd")
    a.kind = AttackKind::PGD;
  else if (kind == "fgsm")
    a.kind = AttackKind::FGSM;
  else
    throw ConfigError("attack.kind must be pgd or fgsm");
  a.epsilon = cfg.get_double("attack.eps");
  a.steps = static_cast<int>(cfg.get_int("attack.steps"));
  a.attack_step = cfg.get_double("attack.step_size");
  a.random_start = cfg.get_bool("attack.random_start");
  a.validate();
  return a;
}

TrainConfig train_config_from(const RunConfig& cfg) {
  TrainConfig t;
  t.epochs = static_cast<int>(cfg.get_int("train.epochs"));
  t.batch_size = static_cast<int>(cfg.get_int("train.batch_size"));
  t.lr = cfg.get_double("train.lr");
  t.momentum = cfg.get_double("train.momentum");
  t.weight_decay = cfg.get_double("train.weight_decay");
  t.seed = cfg.get_u64("run.seed");
  t.attack = attack_config_from(cfg);
  t.augment = cfg.get_bool("data.augment");
  t.holdout = static_cast<int>(cfg.get_int("train.holdout"));
  t.eval_per_epoch = cfg.get_bool("train.eval_per_epoch");
  return t;
}

void prepare_out_dir(const RunConfig& cfg) {
  const fs::path dir = cfg.get("run.out_dir");
  fs::create_directories(dir);
  cfg.write_resolved((dir / "resolved.cfg").string());
  if (const int64_t th = cfg.get_int("run.threads"); th > 0) {
    setenv("SMARTNET_THREADS", std::to_string(th).c_str(), 1);
  }
}

json epoch_json(const EpochStats& st) {
  json j;
  j["epoch"] = st.epoch;
  j["loss_clean"] = st.loss_clean;
  j["loss_adv"] = st.loss_adv;
  j["ca"] = st.ca;
  j["ra"] = st.ra;
  j["lr"] = st.lr;
  j["alphas"] = st.alphas;
  return j;
}

int cmd_train(const RunConfig& cfg) {
  prepare_out_dir(cfg);
  const fs::path out = cfg.get("run.out_dir");
  LoadedData data = load_data(cfg);
  TrainConfig tc = train_config_from(cfg);
  const std::string mode = cfg.get("train.mode");
  std::ofstream hist(out / "history.jsonl");

  if (mode == "smart") {
    SmartNet<float> net(model_config_from(cfg, data.train), derive_seed(tc.seed, "model"));
    net.apply_mask_plan(cfg.get_double("mask.c_clean"), cfg.get_double("mask.c_adv"),
                        cfg.get_double("mask.c_inter"), derive_seed(tc.seed, "mask"));
    const int ck_every = static_cast<int>(cfg.get_int("train.checkpoint_every"));
    std::function<void(int, SmartNet<float>&, const EpochStats&)> on_epoch =
        [&](int epoch, SmartNet<float>& m, const EpochStats& st) {
          hist << epoch_json(st).dump() << "\n";
          hist.flush();
          std::cout << "epoch " << epoch << "  L_C " << st.loss_clean << "  L_A " << st.loss_adv
                    << "  CA " << st.ca << "  RA " << st.ra << "\n";
          if (ck_every > 0 && (epoch + 1) % ck_every == 0)
            snapshot_model(m, epoch).save((out / ("epoch" + std::to_string(epoch) + ".ckpt")).string());
        };
    smart_train(net, data.train, data.test, tc, on_epoch);
    snapshot_model(net, tc.epochs - 1).save((out / "model.ckpt").string());
    std::cout << "checkpoint written: " << (out / "model.ckpt").string() << "\n";
    std::cout << "state hash: " << std::hex << net.state_hash() << std::dec << "\n";
  } else if (mode == "pgd_at") {
    PlainNet<float> net(model_config_from(cfg, data.train), derive_seed(tc.seed, "model"));
    const double lam = cfg.get_double("train.lambda_fixed");
    auto history = pgd_at_train(net, data.train, tc, lam);
    for (const auto& st : history.epochs) {
      hist << epoch_json(st).dump() << "\n";
      std::cout << "epoch " << st.epoch << "  L_C " << st.loss_clean << "  L_A " << st.loss_adv
                << "\n";
    }
    auto res = evaluate_plain(net, take(data.test, std::min<int64_t>(tc.holdout, data.test.size())),
                              &tc.attack, tc.seed);
    std::cout << "pgd_at baseline (lambda=" << lam << "): CA " << res.ca << "  RA " << res.ra << "\n";
  } else {
    throw ConfigError("train.mode must be smart or pgd_at");
  }
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint) {
  prepare_out_dir(cfg);
  const fs::path out = cfg.get("run.out_dir");
  SmartNet<float> net = restore_model(Checkpoint::load(checkpoint));
  LoadedData data = load_data(cfg);
  AttackConfig attack = attack_config_from(cfg);
  const auto lambdas = cfg.get_double_list("eval.lambdas");
  const int eval_batch = static_cast<int>(cfg.get_int("eval.batch_size"));
  const uint64_t seed = cfg.get_u64("run.seed");

  std::ofstream rows(out / "eval.jsonl");
  std::printf("%8s %10s %10s\n", "lambda", "CA", "RA");
  for (double lam : lambdas) {
    auto res = evaluate(net, data.test, lam, &attack, derive_seed(seed, "sweep"), eval_batch);
    std::printf("%8.2f %10.4f %10.4f\n", lam, res.ca, res.ra);
    json j;
    j["lambda"] = lam;
    j["ca"] = res.ca;
    j["ra"] = res.ra;
    rows << j.dump() << "\n";
  }
  return 0;
}

int cmd_attack(const RunConfig& cfg, const std::string& checkpoint) {
  prepare_out_dir(cfg);
  const fs::path out = cfg.get("run.out_dir");
  SmartNet<float> net = restore_model(Checkpoint::load(checkpoint));
  LoadedData data = load_data(cfg);
  AttackConfig attack = attack_config_from(cfg);
  const double lam = cfg.get_double("eval.attack_lambda");
  const uint64_t seed = cfg.get_u64("run.seed");
  auto res = evaluate(net, data.test, lam, &attack, derive_seed(seed, "attack-cmd"),
                      static_cast<int>(cfg.get_int("eval.batch_size")));
  const char* kind = attack.kind == AttackKind::FGSM ? "fgsm" : "pgd";
  if (attack.kind == AttackKind::FGSM) {
    std::printf("attack fgsm  eps %.6f  lambda %.2f\n", attack.epsilon, lam);
  } else {
    std::printf("attack pgd  eps %.6f  steps %d  step-size %.6f  lambda %.2f\n", attack.epsilon,
                attack.steps, attack.step_size(), lam);
  }
  std::printf("clean accuracy     %.4f\n", res.ca);
  std::printf("perturbed accuracy %.4f\n", res.ra);
  json j;
  j["attack"] = kind;
  j["eps"] = attack.epsilon;
  j["steps"] = attack.steps;
  j["lambda"] = lam;
  j["ca"] = res.ca;
  j["ra"] = res.ra;
  std::ofstream(out / "attack.jsonl") << j.dump() << "\n";
  return 0;
}

int cmd_sensitivity(const RunConfig& cfg) {
  prepare_out_dir(cfg);
  const fs::path out = cfg.get("run.out_dir");
  LoadedData data = load_data(cfg);
  SensitivityConfig sc;
  sc.densities = cfg.get_double_list("sens.densities");
  sc.epochs = static_cast<int>(cfg.get_int("sens.epochs"));
  sc.batch_size = static_cast<int>(cfg.get_int("sens.batch_size"));
  sc.lr = cfg.get_double("sens.lr");
  sc.redistributions_per_epoch = static_cast<int>(cfg.get_int("sens.redistributions_per_epoch"));
  sc.prune_fraction = cfg.get_double("sens.prune_fraction");
  sc.seed = cfg.get_u64("run.seed");
  auto results = sensitivity_analysis(model_config_from(cfg, data.train), data.train, sc);

  std::ofstream rows(out / "sensitivity.jsonl");
  for (const auto& res : results) {
    std::printf("density %.3f  budget %lld\n", res.density, static_cast<long long>(res.budget));
    std::printf("  %-12s %12s %12s %10s\n", "layer", "total", "nonzeros", "utility");
    for (const auto& u : res.layers) {
      std::printf("  %-12s %12lld %12lld %10.4f\n", u.layer.c_str(),
                  static_cast<long long>(u.total), static_cast<long long>(u.nonzeros), u.utility);
      json j;
      j["density"] = res.density;
      j["layer"] = u.layer;
      j["total"] = u.total;
      j["nonzeros"] = u.nonzeros;
      j["utility"] = u.utility;
      rows << j.dump() << "\n";
    }
  }
  return 0;
}

ArchSpec account_arch_from(const RunConfig& cfg) {
  const std::string name = cfg.get("account.arch");
  if (name == "resnet34_cifar")
    return resnet34_cifar_arch(static_cast<int>(cfg.get_int("account.num_classes")), 3, 32,
                               cfg.get("arch.stage_tags"));
  if (name == "desknet") {
    ModelConfig mc;
    mc.in_channels = static_cast<int>(cfg.get_int("data.synth_channels"));
    mc.image_size = static_cast<int>(cfg.get_int("data.synth_image_size"));
    mc.num_classes = static_cast<int>(cfg.get_int("account.num_classes"));
    mc.base_width = static_cast<int>(cfg.get_int("arch.base_width"));
    mc.stage_tags = cfg.get("arch.stage_tags");
    return desknet_arch(mc);
  }
  throw ConfigError("account.arch must be resnet34_cifar or desknet");
}

int cmd_account(const RunConfig& cfg) {
  prepare_out_dir(cfg);
  const fs::path out = cfg.get("run.out_dir");
  ArchSpec arch = account_arch_from(cfg);
  PlanDensities plan{cfg.get_double("mask.c_clean"), cfg.get_double("mask.c_adv"),
                     cfg.get_double("mask.c_inter")};
  validate_plan_entry(1000000, plan.c_clean, plan.c_adv, plan.c_inter);
  CostReport report = make_cost_report(arch, plan);
  std::cout << format_cost_report(report);

  EnergyCostTable table{cfg.get_double("cost.mac"), cfg.get_double("cost.add"),
                        cfg.get_double("cost.shift_add")};
  auto e_clean = energy_estimate(report, ExpertPath::Clean, table);
  auto e_adv = energy_estimate(report, ExpertPath::Adv, table);
  std::printf("  energy ratios: mac/add %.3f, shift_add/add %.3f\n", e_adv.mac_to_add_ratio,
              e_adv.shift_add_to_add_ratio);
  std::printf("  energy (clean path) %.3e   (adv path) %.3e\n", e_clean.energy, e_adv.energy);
  std::printf("  energy, shift-add MACs (clean) %.3e   (adv) %.3e\n", e_clean.energy_shift_add,
              e_adv.energy_shift_add);

  json j;
  j["arch"] = report.arch;
  j["dense_total_params"] = report.dense_total_params;
  j["dense_conv_params"] = report.dense_conv_params;
  j["nonzero_params_clean_path"] = report.nonzero_params_clean_path;
  j["nonzero_params_adv_path"] = report.nonzero_params_adv_path;
  j["normalized_params_clean"] = report.normalized_params_clean;
  j["normalized_params_adv"] = report.normalized_params_adv;
  j["normalized_conv_only_clean"] = report.normalized_conv_only_clean;
  j["normalized_conv_only_adv"] = report.normalized_conv_only_adv;
  j["mac_count_clean"] = report.mac_count_clean;
  j["mac_count_adv"] = report.mac_count_adv;
  j["mac_overhead"] = report.mac_overhead;
  j["add_overhead_clean"] = report.add_overhead_clean;
  j["add_overhead_adv"] = report.add_overhead_adv;
  j["noise_scalar_multiplies"] = report.noise_scalar_multiplies;
  j["energy_clean"] = e_clean.energy;
  j["energy_adv"] = e_adv.energy;
  std::ofstream(out / "account.jsonl") << j.dump() << "\n";
  return 0;
}

int cmd_masks(const RunConfig& cfg) {
  prepare_out_dir(cfg);
  const fs::path out = cfg.get("run.out_dir");
  ArchSpec arch = account_arch_from(cfg);
  const double cc = cfg.get_double("mask.c_clean");
  const double ca = cfg.get_double("mask.c_adv");
  const double ci = cfg.get_double("mask.c_inter");
  const uint64_t seed = derive_seed(cfg.get_u64("run.seed"), "mask");

  Checkpoint ck;
  json plan_json;
  plan_json["arch"] = arch.name;
  plan_json["c_clean"] = cc;
  plan_json["c_adv"] = ca;
  plan_json["c_inter"] = ci;
  plan_json["seed"] = seed;
  size_t idx = 0;
  for (const auto& conv : arch.convs) {
    SparsityMask mc(conv.weights()), ma(conv.weights());
    if (conv.tag == 'S') {
      auto pair = generate_mask_pair(conv.weights(), cc, ca, ci, derive_seed(seed, "mask", idx));
      mc = std::move(pair.first);
      ma = std::move(pair.second);
    } else {
      mc = SparsityMask::all_ones(conv.weights());
      ma = SparsityMask::all_ones(conv.weights());
    }
    ck.bitsets["mask_clean/" + conv.name] = {mc.size(), mc.words()};
    ck.bitsets["mask_adv/" + conv.name] = {ma.size(), ma.words()};
    std::printf("%-14s %10lld elements  C(M_C) %.4f  C(M_A) %.4f  C(M_i) %.4f\n", conv.name.c_str(),
                static_cast<long long>(conv.weights()), mc.density(), ma.density(),
                intersection_density(mc, ma));
    ++idx;
  }
  ck.strs["mask_plan"] = plan_json.dump();
  const std::string path = (out / "masks.ckpt").string();
  ck.save(path);
  std::cout << "mask container written: " << path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"smartnet: conditional sparse-expert adversarial training"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path;
  std::vector<std::string> overrides;
  double eps = -1.0, step_size = -1.0;
  int steps = -1;
  std::string attack_kind;

  auto add_common = [&](CLI::App* cmd, bool with_checkpoint) {
    cmd->add_option("--config", config_path, "configuration file");
    cmd->add_option("--set", overrides, "override: key=value")->take_all();
    cmd->add_option("--eps", eps, "attack epsilon (L-inf budget)");
    cmd->add_option("--steps", steps, "attack step count");
    cmd->add_option("--step-size", step_size, "attack step size");
    cmd->add_option("--attack", attack_kind, "attack kind: pgd or fgsm");
    if (with_checkpoint) cmd->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  };

  CLI::App* train = app.add_subcommand("train", "train a model");
  CLI::App* evalc = app.add_subcommand("eval", "lambda-sweep CA/RA table");
  CLI::App* attackc = app.add_subcommand("attack", "perturbed-image accuracy");
  CLI::App* sens = app.add_subcommand("sensitivity", "layer-wise parameter utility");
  CLI::App* account = app.add_subcommand("account", "analytic cost report");
  CLI::App* masks = app.add_subcommand("masks", "generate and persist mask plans");
  add_common(train, false);
  add_common(evalc, true);
  add_common(attackc, true);
  add_common(sens, false);
  add_common(account, false);
  add_common(masks, false);

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& kv : overrides) cfg.apply_override(kv);
    if (eps >= 0) cfg.set("attack.eps", std::to_string(eps));
    if (steps >= 0) cfg.set("attack.steps", std::to_string(steps));
    if (step_size >= 0) cfg.set("attack.step_size", std::to_string(step_size));
    if (!attack_kind.empty()) cfg.set("attack.kind", attack_kind);

    if (train->parsed()) return cmd_train(cfg);
    if (evalc->parsed()) return cmd_eval(cfg, checkpoint_path);
    if (attackc->parsed()) return cmd_attack(cfg, checkpoint_path);
    if (sens->parsed()) return cmd_sensitivity(cfg);
    if (account->parsed()) return cmd_account(cfg);
    if (masks->parsed()) return cmd_masks(cfg);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const DomainError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
