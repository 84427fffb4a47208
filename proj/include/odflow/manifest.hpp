#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

// Every artifact directory gets exactly one manifest.json: the subcommand,
// the verbatim command line, the fully resolved configuration, seeds, input
// file hashes (FNV-1a 64) and wall-clock timings. Timings are informational;
// rerunning the recorded command reproduces every other artifact byte for
// byte.

namespace odflow::cli {

std::uint64_t fnv1a64(const std::string& bytes);
std::string fnv1a64_hex(const std::string& bytes);

struct RunManifest {
  std::string subcommand;
  std::vector<std::string> command;
  nlohmann::json config;
  std::vector<std::uint64_t> seeds;
  std::string version;
  std::map<std::string, std::string> input_hashes;  // path -> fnv1a64 hex
  std::map<std::string, double> timings_seconds;

  void hash_input(const std::string& path);
  nlohmann::json to_json() const;
  void write(const std::string& dir) const;
  static RunManifest read(const std::string& path);
};

std::string version_string();

}  // namespace odflow::cli
