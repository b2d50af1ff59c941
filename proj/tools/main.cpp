#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nvs/commands.hpp"

namespace {

// "1,2,4" -> {1, 2, 4}
std::vector<int> parse_counts(const std::string& s) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t comma = s.find(',', pos);
    if (comma == std::string::npos) comma = s.size();
    out.push_back(std::stoi(s.substr(pos, comma - pos)));
    pos = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse-view novel view synthesis with pure transformers"};
  app.require_subcommand(1);

  std::string config_file;
  std::vector<std::string> overrides;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "key = value config file");
    sub->add_option("--set,set", overrides, "dotted-key=value overrides");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset directory");
  add_common(gen);

  CLI::App* train = app.add_subcommand("train", "train a model, writing checkpoints + metrics");
  add_common(train);
  std::string resume;
  train->add_option("--resume", resume, "continue from a training checkpoint");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  add_common(eval);
  nvs::EvalOptions eval_opts;
  eval->add_option("--checkpoint", eval_opts.checkpoint, "checkpoint file")->required();
  std::string sweep;
  eval->add_option("--sweep", sweep, "comma-separated input view counts");
  eval->add_flag("--timing", eval_opts.timing, "measure decode time vs input view count");
  eval->add_flag("--grids", eval_opts.grids, "write input|prediction|truth image grids");
  eval->add_option("--timing-reps", eval_opts.timing_repetitions, "timing repetitions (>= 3)");

  CLI::App* render = app.add_subcommand("render", "render target views from input views");
  add_common(render);
  nvs::RenderOptions render_opts;
  render->add_option("--checkpoint", render_opts.checkpoint, "checkpoint file")->required();
  render->add_option("--scene", render_opts.scene_dir,
                     "scene directory with input views and target cameras")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    nvs::RunConfig config = nvs::load_run_config(config_file, overrides);
    nvs::apply_execution_mode(config);
    if (gen->parsed()) return nvs::cmd_gen_data(config);
    if (train->parsed()) return nvs::cmd_train(config, resume);
    if (eval->parsed()) {
      if (!sweep.empty()) eval_opts.sweep_counts = parse_counts(sweep);
      return nvs::cmd_eval(config, eval_opts, overrides);
    }
    if (render->parsed()) return nvs::cmd_render(config, render_opts, overrides);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
