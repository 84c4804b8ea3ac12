#pragma once

// Structured-text run configuration: [section] headers with key=value lines,
// '#' or ';' comments, plus command-line overrides of the form
// section.key=value. The canonical FNV-1a hash of the sorted entries goes
// into the run manifest.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "egcbf/dynamics.hpp"
#include "egcbf/learn.hpp"
#include "egcbf/net.hpp"
#include "egcbf/world.hpp"

namespace egcbf {

class Config {
 public:
  static Config load(const std::string& path);
  static Config parse(const std::string& text);

  void set(const std::string& section, const std::string& key, const std::string& value);
  /// Apply "section.key=value".
  void override_entry(const std::string& spec);

  bool has(const std::string& section, const std::string& key) const;
  std::string get_str(const std::string& section, const std::string& key,
                      const std::string& fallback) const;
  double get_num(const std::string& section, const std::string& key, double fallback) const;
  int get_int(const std::string& section, const std::string& key, int fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& section, const std::string& key,
                                const std::vector<int>& fallback) const;

  /// Canonical "section.key=value" lines, sorted.
  std::string canonical() const;
  uint64_t hash() const;

  WorldConfig world() const;
  ModelParams model() const;
  NetConfig net() const;
  TrainConfig train_config() const;

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

/// FNV-1a over a byte string.
uint64_t fnv1a(const std::string& text);

/// JSON run manifest: config hash, seed, build id and the invoking command.
void write_manifest(const std::string& path, const Config& cfg, uint64_t seed,
                    const std::string& command);

}  // namespace egcbf
