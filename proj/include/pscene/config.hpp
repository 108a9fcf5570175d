#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "pscene/types.hpp"

namespace pscene {

// Flat key = value configuration with '#' comments and dotted keys
// (e.g. "sampler.eta = 0.05"). Keys keep insertion-independent ordering so
// serialization round-trips deterministically.
class Config {
 public:
  Config() = default;

  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& path);
  std::string serialize() const;

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  bool operator==(const Config&) const = default;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace pscene
