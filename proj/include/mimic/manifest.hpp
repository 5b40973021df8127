#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimic/io.hpp"
#include "mimic/version.hpp"

namespace mimic {

// Reproducibility record written at the end of every CLI run: the exact
// configuration, seed and artifact paths needed to re-run bit-identically,
// plus wall-clock per phase.
struct RunManifest {
  std::string tool_version = kVersion;
  std::string subcommand;
  std::vector<std::string> argv;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> config;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::map<std::string, double> phase_seconds;
};

inline void write_manifest(const std::filesystem::path& path, const RunManifest& m) {
  nlohmann::json j;
  j["tool_version"] = m.tool_version;
  j["subcommand"] = m.subcommand;
  j["argv"] = m.argv;
  j["seed"] = m.seed;
  j["config"] = m.config;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["phase_seconds"] = m.phase_seconds;
  write_file_atomic(path, j.dump(2) + "\n");
}

// Accumulates per-phase wall clock for the manifest.
class PhaseTimer {
 public:
  void start(const std::string& phase) {
    finish();
    current_ = phase;
    begin_ = std::chrono::steady_clock::now();
  }

  void finish() {
    if (current_.empty()) return;
    const auto elapsed = std::chrono::duration<double>(
        std::chrono::steady_clock::now() - begin_);
    seconds_[current_] += elapsed.count();
    current_.clear();
  }

  std::map<std::string, double> seconds() {
    finish();
    return seconds_;
  }

 private:
  std::string current_;
  std::chrono::steady_clock::time_point begin_;
  std::map<std::string, double> seconds_;
};

}  // namespace mimic
