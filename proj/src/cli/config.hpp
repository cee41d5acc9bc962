#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace itdt::cli {

struct ConfigKey {
  const char* name;
  const char* default_value;  // "" = unset
  const char* help;
};

/// Every recognised key, in --print-config order.
const std::vector<ConfigKey>& config_keys();

/// `key = value` lines; `#` starts a comment; blank lines ignored. Unknown
/// keys and repeated keys are errors. Relative paths stay as written.
class Config {
 public:
  Config();

  static Config parse(std::string_view text, const std::string& origin = "<config>");
  static Config load(const std::string& path);

  /// Applies one `key=value` override.
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;
  std::string str(const std::string& key) const;
  std::string required(const std::string& key) const;
  double real(const std::string& key) const;
  long integer(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<std::string> list(const std::string& key) const;
  std::vector<long> int_list(const std::string& key) const;

  /// Throws Error(kInvalidArgument) when the seed is absent: every randomized
  /// command needs one.
  std::uint64_t seed(const std::string& key = "seed") const;

  /// Paths are resolved against the config file's directory.
  std::string path(const std::string& key) const;
  std::string resolve(const std::string& p) const;

  void print(std::ostream& out) const;

 private:
  std::map<std::string, std::string> values_;
  std::string base_dir_;
};

}  // namespace itdt::cli
