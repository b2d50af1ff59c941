#include "nvs/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "nvs/checkpoint.hpp"
#include "nvs/eval.hpp"
#include "nvs/threading.hpp"

namespace fs = std::filesystem;

namespace nvs {

void apply_execution_mode(const RunConfig& config) {
  if (config.deterministic)
    set_thread_count(1);
  else if (config.threads > 0)
    set_thread_count(config.threads);
}

int cmd_gen_data(const RunConfig& config) {
  std::string dir = config.data.dir.empty() ? config.out_dir : config.data.dir;
  if (dir.empty()) throw ConfigError("gen-data: set data.dir or out_dir");
  int n = config.data.resolved_inputs();
  int m = config.data.resolved_targets();
  std::vector<SceneExample> examples;
  examples.reserve(config.data.scenes);
  Rng root(config.seed);
  for (int i = 0; i < config.data.scenes; ++i) {
    std::uint64_t scene_seed = root.fork(seed_tag::kSceneGen + i).next_u64();
    SceneSpec scene = generate_scene(scene_seed);
    examples.push_back(
        sample_example(scene, config.data.mode, n, m, scene_seed, config.data.resolution));
  }
  write_dataset(examples, dir);
  std::printf("wrote %d scenes (%d inputs + %d targets each, %dx%d) to %s\n",
              config.data.scenes, n, m, config.data.resolution, config.data.resolution,
              dir.c_str());
  return 0;
}

namespace {

template <typename S>
std::vector<SceneExample> assemble_batch(TrainState<S>& state, const RunConfig& config,
                                         const std::vector<SceneExample>& dataset) {
  std::vector<SceneExample> batch;
  int k = config.train.targets_per_example;
  for (int b = 0; b < config.train.batch_size; ++b) {
    const SceneExample& src = dataset[state.rng.uniform_index(dataset.size())];
    if (k <= 0 || static_cast<std::size_t>(k) >= src.targets.size()) {
      batch.push_back(src);
    } else {
      SceneExample sub;
      sub.inputs = src.inputs;
      std::vector<std::size_t> picks;
      while (picks.size() < static_cast<std::size_t>(k)) {
        std::size_t t = state.rng.uniform_index(src.targets.size());
        if (std::find(picks.begin(), picks.end(), t) == picks.end()) picks.push_back(t);
      }
      std::sort(picks.begin(), picks.end());
      for (std::size_t t : picks) sub.targets.push_back(src.targets[t]);
      batch.push_back(std::move(sub));
    }
  }
  return batch;
}

template <typename S>
int run_train(const RunConfig& config, const std::string& resume_checkpoint) {
  config.model.validate();
  config.train.validate();
  if (config.data.dir.empty()) throw ConfigError("train: data.dir is required");
  std::vector<SceneExample> dataset = read_dataset(config.data.dir);
  double lambda = config.train.resolve_lambda(config.data.mode);

  fs::create_directories(config.out_dir);
  TrainState<S> state = [&] {
    if (resume_checkpoint.empty()) return TrainState<S>::init(config.model, config.seed);
    Checkpoint<S> ckpt = read_checkpoint<S>(resume_checkpoint);
    RunConfig stored = config_from_meta(ckpt.meta);
    if (!(stored.model == config.model))
      throw ConfigError("resume: checkpoint model config does not match the requested one");
    return train_state_from_checkpoint(ckpt, config.model);
  }();

  // reproducibility: snapshot the effective config next to the outputs
  {
    std::ofstream snap(config.out_dir + "/config.snapshot");
    for (auto& [k, v] : dump_config(config)) snap << k << " = " << v << "\n";
  }

  std::ofstream log(config.out_dir + "/metrics.log",
                    resume_checkpoint.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot open " + config.out_dir + "/metrics.log");

  auto save = [&](const std::string& name) {
    Checkpoint<S> ckpt = make_train_checkpoint(state, config_meta(config));
    write_checkpoint(config.out_dir + "/" + name, ckpt);
  };

  while (state.step < config.train.total_steps) {
    std::vector<SceneExample> batch = assemble_batch(state, config, dataset);
    StepMetrics m = train_step(state, config.train, std::span<const SceneExample>(batch), lambda);
    log << format_metrics_line(m) << "\n";
    log.flush();
    if (config.train.checkpoint_every > 0 && state.step % config.train.checkpoint_every == 0)
      save("checkpoint-" + std::to_string(state.step) + ".ckpt");
  }
  save("checkpoint-final.ckpt");
  std::printf("trained to step %ld (%ld skipped); checkpoint written to %s\n", state.step,
              state.skipped_steps, (config.out_dir + "/checkpoint-final.ckpt").c_str());
  return 0;
}

// Rejects explicit model.* overrides that contradict the checkpoint.
void check_model_overrides(const RunConfig& from_ckpt,
                           const std::vector<std::string>& explicit_overrides) {
  for (const std::string& ov : explicit_overrides) {
    std::size_t eq = ov.find('=');
    if (eq == std::string::npos) continue;
    std::string key = ov.substr(0, eq);
    key.erase(0, key.find_first_not_of(" \t"));
    key.erase(key.find_last_not_of(" \t") + 1);
    if (key.rfind("model.", 0) != 0) continue;
    RunConfig probe = from_ckpt;
    set_config_key(probe, key, ov.substr(eq + 1));
    if (!(probe.model == from_ckpt.model)) {
      std::string stored;
      for (auto& [k, v] : dump_config(from_ckpt))
        if (k == key) stored = v;
      throw ConfigError("checkpoint has " + key + " = " + stored +
                        " but the command line requests " + ov.substr(eq + 1));
    }
  }
}

template <typename S>
int run_eval(const RunConfig& cli_config, const EvalOptions& options,
             const std::vector<std::string>& explicit_overrides) {
  Checkpoint<S> ckpt = read_checkpoint<S>(options.checkpoint);
  RunConfig config = config_from_meta(ckpt.meta);
  check_model_overrides(config, explicit_overrides);
  config.data = cli_config.data;
  config.out_dir = cli_config.out_dir;
  ModelWeights<S> weights = weights_from_checkpoint(ckpt, config.model);

  if (config.data.dir.empty()) throw ConfigError("eval: data.dir is required");
  std::vector<SceneExample> examples = read_dataset(config.data.dir);
  fs::create_directories(config.out_dir);

  EvalReport report = evaluate(config.model, weights, std::span<const SceneExample>(examples));
  if (!options.sweep_counts.empty())
    report.sweep = view_count_sweep(config.model, weights,
                                    std::span<const SceneExample>(examples),
                                    std::span<const int>(options.sweep_counts));
  if (options.timing) {
    std::vector<int> counts = {1, 2, 4, 8};
    report.timing = decode_timing(config.model, weights, std::span<const int>(counts),
                                  options.timing_repetitions, config.data.resolution);
  }
  write_report(report, config.out_dir + "/report.txt", config.out_dir + "/report.kv");
  if (options.grids) {
    fs::create_directories(config.out_dir + "/grids");
    for (std::size_t i = 0; i < examples.size(); ++i) {
      const SceneExample& ex = examples[i];
      std::vector<PosedImage> inputs;
      for (const View& v : ex.inputs) inputs.push_back({v.image, v.camera});
      ViewSynthesizer<S> synth(config.model, weights, inputs);
      std::vector<Image> row;
      for (const View& v : ex.inputs) row.push_back(v.image);
      row.push_back(synth.render(ex.targets[0].camera));
      row.push_back(ex.targets[0].image);
      char name[64];
      std::snprintf(name, sizeof(name), "/grids/scene_%04zu.png", i);
      write_png(config.out_dir + name, image_grid(row));
    }
  }
  std::printf("%s", render_report_text(report).c_str());
  return 0;
}

template <typename S>
int run_render(const RunConfig& cli_config, const RenderOptions& options,
               const std::vector<std::string>& explicit_overrides) {
  Checkpoint<S> ckpt = read_checkpoint<S>(options.checkpoint);
  RunConfig config = config_from_meta(ckpt.meta);
  check_model_overrides(config, explicit_overrides);
  ModelWeights<S> weights = weights_from_checkpoint(ckpt, config.model);
  SceneExample job = read_scene_dir(options.scene_dir);
  if (job.inputs.empty()) throw ConfigError("render: scene has no input views");
  if (job.targets.empty()) throw ConfigError("render: scene has no target cameras");
  fs::create_directories(cli_config.out_dir);
  std::vector<PosedImage> inputs;
  for (const View& v : job.inputs) inputs.push_back({v.image, v.camera});
  ViewSynthesizer<S> synth(config.model, weights, inputs);
  for (std::size_t i = 0; i < job.targets.size(); ++i) {
    Image pred = synth.render(job.targets[i].camera);
    char name[64];
    std::snprintf(name, sizeof(name), "/render_%03zu.ppm", i);
    write_ppm(cli_config.out_dir + name, pred);
  }
  std::printf("wrote %zu rendered views to %s\n", job.targets.size(), cli_config.out_dir.c_str());
  return 0;
}

}  // namespace

int cmd_train(const RunConfig& config, const std::string& resume_checkpoint) {
  return config.deterministic ? run_train<double>(config, resume_checkpoint)
                              : run_train<float>(config, resume_checkpoint);
}

int cmd_eval(const RunConfig& config, const EvalOptions& options,
             const std::vector<std::string>& explicit_overrides) {
  return config.deterministic ? run_eval<double>(config, options, explicit_overrides)
                              : run_eval<float>(config, options, explicit_overrides);
}

int cmd_render(const RunConfig& config, const RenderOptions& options,
               const std::vector<std::string>& explicit_overrides) {
  return config.deterministic ? run_render<double>(config, options, explicit_overrides)
                              : run_render<float>(config, options, explicit_overrides);
}

}  // namespace nvs
