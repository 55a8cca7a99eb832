#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace smartnet {

// Flat dotted-key run configuration. Unknown keys are rejected; CLI
// overrides take precedence over file values, which take precedence over
// defaults. resolved_text() emits every key, defaults included.
class RunConfig {
 public:
  RunConfig();

  void load_file(const std::string& path);
  void apply_override(const std::string& key_equals_value);  // "key=value"
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;

  std::string resolved_text() const;
  void write_resolved(const std::string& path) const;

  static const std::vector<std::pair<std::string, std::string>>& known_keys();

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace smartnet
