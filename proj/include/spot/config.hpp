#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace spot {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat `key = value` run configuration with a closed schema: unknown keys
/// are hard errors, every run logs the fully-resolved document, and the
/// resolved text is what checkpoint fingerprints hash.
class RunConfig {
 public:
  RunConfig();  // defaults for every key

  static RunConfig parse_file(const std::string& path);
  static RunConfig parse_text(const std::string& text, const std::string& origin = "<inline>");

  void set(const std::string& key, const std::string& value);
  bool has_key(const std::string& key) const { return values_.count(key) != 0; }

  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  float get_float(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;

  /// Canonical sorted `key = value` document covering every key.
  std::string resolved_text() const;
  std::uint64_t fingerprint() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace spot
