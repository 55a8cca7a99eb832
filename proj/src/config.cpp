#include "smartnet/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "smartnet/common.hpp"

namespace smartnet {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<std::pair<std::string, std::string>>& RunConfig::known_keys() {
  static const std::vector<std::pair<std::string, std::string>> keys = {
      {"run.seed", "1"},
      {"run.out_dir", "out"},
      {"run.threads", "0"},

      {"data.source", "synthetic"},  // synthetic | idx | cifar
      {"data.idx_train_images", ""},
      {"data.idx_train_labels", ""},
      {"data.idx_test_images", ""},
      {"data.idx_test_labels", ""},
      {"data.cifar_train", ""},
      {"data.cifar_test", ""},
      {"data.num_classes", "0"},
      {"data.limit_train", "0"},
      {"data.limit_test", "0"},
      {"data.augment", "false"},
      {"data.synth_train", "4000"},
      {"data.synth_test", "1000"},
      {"data.synth_classes", "10"},
      {"data.synth_image_size", "28"},
      {"data.synth_channels", "1"},

      {"arch.base_width", "8"},
      {"arch.stage_tags", "DDSS"},

      {"mask.c_clean", "0.5"},
      {"mask.c_adv", "0.5"},
      {"mask.c_inter", "0.25"},

      {"train.mode", "smart"},  // smart | pgd_at
      {"train.epochs", "2"},
      {"train.batch_size", "128"},
      {"train.lr", "0.1"},
      {"train.momentum", "0.9"},
      {"train.weight_decay", "0.0005"},
      {"train.lambda_fixed", "1.0"},
      {"train.holdout", "512"},
      {"train.eval_per_epoch", "true"},
      {"train.checkpoint_every", "0"},

      {"attack.kind", "pgd"},  // pgd | fgsm
      {"attack.eps", "0.03137254901960784"},
      {"attack.steps", "7"},
      {"attack.step_size", "0"},
      {"attack.random_start", "false"},

      {"eval.lambdas", "0.0,0.2,0.7,1.0"},
      {"eval.batch_size", "100"},
      {"eval.attack_lambda", "1.0"},

      {"sens.densities", "0.05,0.1,0.2"},
      {"sens.epochs", "2"},
      {"sens.batch_size", "64"},
      {"sens.lr", "0.05"},
      {"sens.redistributions_per_epoch", "2"},
      {"sens.prune_fraction", "0.3"},

      {"account.arch", "resnet34_cifar"},  // resnet34_cifar | desknet
      {"account.num_classes", "10"},

      {"cost.mac", "1.0"},
      {"cost.add", "1.0"},
      {"cost.shift_add", "1.8"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& [k, v] : known_keys()) values_[k] = v;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key: " + key);
  it->second = value;
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    set(key, value);
  }
}

void RunConfig::apply_override(const std::string& kv) {
  const size_t eq = kv.find('=');
  if (eq == std::string::npos) throw ConfigError("override must look like key=value: " + kv);
  set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key: " + key);
  return it->second;
}

int64_t RunConfig::get_int(const std::string& key) const {
  try {
    size_t pos = 0;
    const int64_t v = std::stoll(get(key), &pos);
    if (pos != get(key).size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not an integer: " + get(key));
  }
}

uint64_t RunConfig::get_u64(const std::string& key) const {
  try {
    size_t pos = 0;
    const uint64_t v = std::stoull(get(key), &pos);
    if (pos != get(key).size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not an unsigned integer: " + get(key));
  }
}

double RunConfig::get_double(const std::string& key) const {
  try {
    size_t pos = 0;
    const double v = std::stod(get(key), &pos);
    if (pos != get(key).size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not a number: " + get(key));
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key " + key + " is not a boolean: " + v);
}

std::vector<double> RunConfig::get_double_list(const std::string& key) const {
  std::vector<double> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + " has a non-numeric entry: " + item);
    }
  }
  if (out.empty()) throw ConfigError("config key " + key + " is an empty list");
  return out;
}

std::string RunConfig::resolved_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
  return os.str();
}

void RunConfig::write_resolved(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write resolved config: " + path);
  out << resolved_text();
}

}  // namespace smartnet
