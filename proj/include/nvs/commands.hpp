#pragma once

#include <string>
#include <vector>

#include "nvs/runconfig.hpp"

namespace nvs {

struct EvalOptions {
  std::string checkpoint;
  std::vector<int> sweep_counts;  // empty = no sweep
  bool timing = false;
  bool grids = false;
  int timing_repetitions = 9;
};

struct RenderOptions {
  std::string checkpoint;
  std::string scene_dir;  // input views + target camera manifest
};

// Subcommand bodies; the CLI parses flags and calls these. All of them
// return 0 on success and throw on error.
int cmd_gen_data(const RunConfig& config);
int cmd_train(const RunConfig& config, const std::string& resume_checkpoint);
int cmd_eval(const RunConfig& config, const EvalOptions& options,
             const std::vector<std::string>& explicit_overrides);
int cmd_render(const RunConfig& config, const RenderOptions& options,
               const std::vector<std::string>& explicit_overrides);

// Applies threads/deterministic settings to the process.
void apply_execution_mode(const RunConfig& config);

}  // namespace nvs
