#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace selrank {

// Flat key=value configuration shared by every subcommand. Resolution
// precedence: command-line flags > config file > built-in defaults.
// Unknown keys are rejected at either level.
class Config {
 public:
  static const std::map<std::string, std::string>& defaults();

  // `path` may be empty (no file). Flag values win over file values.
  static Config resolve(const std::string& path,
                        const std::map<std::string, std::string>& flags);

  const std::string& str(const std::string& key) const;
  double num(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  bool boolean(const std::string& key) const;
  // head_limit-style keys where 0 disables the feature
  std::optional<int> optional_int(const std::string& key) const;

  // The fully resolved document, one sorted `key=value` line each.
  std::string render() const;

 private:
  std::map<std::string, std::string> values_;
};

// Parses `key = value` lines; '#' starts a comment.
std::map<std::string, std::string> read_config_file(const std::string& path);

}  // namespace selrank
