#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nvs/data.hpp"
#include "nvs/model.hpp"
#include "nvs/training.hpp"

namespace nvs {

struct DataConfig {
  std::string dir;
  int scenes = 16;
  SampleMode mode = SampleMode::Object;
  int input_views = 0;   // 0 = mode default (object 4, scene 2)
  int target_views = 0;  // 0 = mode default (object 8, scene 6)
  int resolution = 32;

  int resolved_inputs() const {
    return input_views > 0 ? input_views : (mode == SampleMode::Object ? 4 : 2);
  }
  int resolved_targets() const {
    return target_views > 0 ? target_views : (mode == SampleMode::Object ? 8 : 6);
  }
};

// Everything a run needs, parsed from a key = value config file with
// dotted-key command-line overrides. Unknown keys are rejected; the full
// set, with current values, serializes into every checkpoint header.
struct RunConfig {
  std::uint64_t seed = 42;
  std::string out_dir = "out";
  bool deterministic = false;  // 64-bit sequential verification mode
  int threads = 0;             // 0 = hardware concurrency
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
};

// Applies "key = value"; throws ConfigError naming any unknown key.
void set_config_key(RunConfig& config, const std::string& key, const std::string& value);

// Every key with its current value, in stable order.
std::vector<std::pair<std::string, std::string>> dump_config(const RunConfig& config);

// file may be empty; overrides are "key=value" strings applied after it.
RunConfig load_run_config(const std::string& file, std::span<const std::string> overrides);

// Rebuilds a RunConfig from checkpoint meta entries ("config.<key>" lines).
RunConfig config_from_meta(std::span<const std::pair<std::string, std::string>> meta);

// dump_config with "config." prefixes, for checkpoint headers.
std::vector<std::pair<std::string, std::string>> config_meta(const RunConfig& config);

}  // namespace nvs
