#ifndef CTPG_BENCH_CONFIG_H_
#define CTPG_BENCH_CONFIG_H_

#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctpg/ode.h"

namespace ctpg::bench {

// Anything wrong with a config file or flag; commands map it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flat `key = value` text. `#` starts a comment, blank lines are ignored,
// keys are dotted (env.name, solver.reltol, train.seed).
class KvConfig {
 public:
  static KvConfig parse(std::istream& in, const std::string& source = "<config>");
  static KvConfig parse_string(const std::string& text);
  static KvConfig load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

struct KeySpec {
  std::string key;
  std::string default_value;
  std::string help;
};

// The keys a command accepts, with defaults.
const std::vector<KeySpec>& command_keys(const std::string& command);
std::vector<std::string> command_names();

// A config checked against a command's key registry. Unknown keys and
// malformed values raise ConfigError naming the key.
class Settings {
 public:
  Settings(std::string command, const KvConfig& config);

  const std::string& command() const { return command_; }
  std::string str(const std::string& key) const;
  double num(const std::string& key) const;
  long integer(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  bool flag(const std::string& key) const;
  // Comma-separated numbers; empty string gives an empty list.
  std::vector<double> list(const std::string& key) const;
  std::vector<int> int_list(const std::string& key) const;
  // Rows separated by ';', entries by ','.
  Matrix matrix(const std::string& key) const;

  void override(const std::string& key, const std::string& value);

  // Stable 16-hex-digit FNV-1a hash of the command and every resolved value.
  std::string fingerprint() const;

 private:
  const std::string& raw(const std::string& key) const;

  std::string command_;
  std::map<std::string, std::string> values_;
};

std::string fnv1a_hex(const std::string& text);

}  // namespace ctpg::bench

#endif  // CTPG_BENCH_CONFIG_H_
