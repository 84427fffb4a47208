#include "odflow/manifest.hpp"

#include <filesystem>

#include "odflow/tntp.hpp"

namespace odflow::cli {

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string fnv1a64_hex(const std::string& bytes) {
  static const char* digits = "0123456789abcdef";
  std::uint64_t h = fnv1a64(bytes);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

void RunManifest::hash_input(const std::string& path) {
  input_hashes[path] = fnv1a64_hex(net::read_file(path));
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j;
  j["subcommand"] = subcommand;
  j["command"] = command;
  j["config"] = config;
  j["seeds"] = seeds;
  j["version"] = version;
  j["input_hashes"] = input_hashes;
  j["timings_seconds"] = timings_seconds;
  return j;
}

void RunManifest::write(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  const std::string path = (std::filesystem::path(dir) / "manifest.json").string();
  nlohmann::json j = to_json();
  // A dataset directory already carries its own manifest; nest it so the
  // directory keeps exactly one manifest.json.
  if (std::filesystem::exists(path)) {
    nlohmann::json existing = nlohmann::json::parse(net::read_file(path));
    if (!existing.contains("subcommand")) j["dataset"] = existing;
  }
  net::write_file(path, j.dump(2) + "\n");
}

RunManifest RunManifest::read(const std::string& path) {
  nlohmann::json j = nlohmann::json::parse(net::read_file(path));
  RunManifest m;
  m.subcommand = j.at("subcommand").get<std::string>();
  m.command = j.at("command").get<std::vector<std::string>>();
  m.config = j.at("config");
  m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  m.version = j.at("version").get<std::string>();
  m.input_hashes = j.at("input_hashes").get<std::map<std::string, std::string>>();
  m.timings_seconds = j.at("timings_seconds").get<std::map<std::string, double>>();
  return m;
}

std::string version_string() { return "odflow 0.1.0"; }

}  // namespace odflow::cli
