#pragma once

// Flat key-value config files (key = value, '#' comments), the TrainConfig
// mapping, and the run manifest written into every run directory.

#include <map>
#include <string>
#include <vector>

#include "spats/train.hpp"

namespace spats {

using KvMap = std::map<std::string, std::string>;

KvMap read_kv_file(const std::string& path);

// Applies recognized keys onto cfg; unknown keys are ConfigErrors so typos
// fail loudly. Key list documented in docs/formats.md.
void apply_train_config(const KvMap& kv, TrainConfig* cfg);

// Serializes cfg back to the same key set (the config.snapshot file).
std::string train_config_to_kv(const TrainConfig& cfg);

struct RunManifest {
  std::string tool_version;
  uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> inputs;  // path, sha256
  std::string combined_hash;
  std::string config_snapshot;
};

RunManifest make_manifest(const TrainConfig& cfg,
                          const std::vector<std::string>& input_paths);

void write_manifest(const std::string& path, const RunManifest& m);

extern const char* kToolVersion;

}  // namespace spats
