#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace agra {

// Flat key=value run configuration with a closed schema: every key is
// registered with a type, default, and (for enums) the allowed values.
// Unknown keys are rejected on sight, and the resolved config serializes
// to a canonical sorted text that is embedded in every output artifact.
class Config {
 public:
  static Config defaults();

  // Parses "key = value" lines; '#' starts a comment. Later keys win.
  void load_file(const std::string& path);
  void load_text(const std::string& text, const std::string& origin);

  // Single override, the CLI's --set key=value form.
  void set(const std::string& key, const std::string& value);
  void set_override(const std::string& spec);  // "key=value"

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_str(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  // Validated enum fetch; throws ConfigError when the value is not allowed.
  std::string get_enum(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;
  std::vector<std::string> get_str_list(const std::string& key) const;

  // Canonical serialization: sorted "key = value" lines.
  std::string text() const;
  uint64_t hash() const;
  std::string hash_hex() const;

  static const std::vector<std::string>& known_keys();
  static std::string describe(const std::string& key);

 private:
  void validate(const std::string& key, const std::string& value) const;
  std::map<std::string, std::string> values_;
};

// AGRA_OUTPUT_ROOT, when set, re-roots relative output directories; absolute
// paths pass through.
std::string resolve_output_dir(const std::string& dir);

}  // namespace agra
