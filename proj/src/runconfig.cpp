#include "nvs/runconfig.hpp"

#include <cstdio>
#include <fstream>
#include <functional>

namespace nvs {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

long parse_long(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    long x = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' needs an integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' needs a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: key '" + key + "' needs true or false, got '" + v + "'");
}

struct KeyEntry {
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<KeyEntry>& key_table() {
  static const std::vector<KeyEntry> table = {
      {"seed",
       [](RunConfig& c, const std::string& v) {
         c.seed = static_cast<std::uint64_t>(parse_long("seed", v));
       },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      {"out_dir", [](RunConfig& c, const std::string& v) { c.out_dir = v; },
       [](const RunConfig& c) { return c.out_dir; }},
      {"deterministic",
       [](RunConfig& c, const std::string& v) { c.deterministic = parse_bool("deterministic", v); },
       [](const RunConfig& c) { return c.deterministic ? "true" : "false"; }},
      {"threads",
       [](RunConfig& c, const std::string& v) {
         c.threads = static_cast<int>(parse_long("threads", v));
       },
       [](const RunConfig& c) { return std::to_string(c.threads); }},

      {"model.architecture",
       [](RunConfig& c, const std::string& v) { c.model.architecture = parse_architecture(v); },
       [](const RunConfig& c) { return to_string(c.model.architecture); }},
      {"model.encoder_layers",
       [](RunConfig& c, const std::string& v) {
         c.model.encoder_layers = static_cast<int>(parse_long("model.encoder_layers", v));
       },
       [](const RunConfig& c) { return std::to_string(c.model.encoder_layers); }},
      {"model.decoder_layers",
       [](RunConfig& c, const std::string& v) {
         c.model.decoder_layers = static_cast<int>(parse_long("model.decoder_layers", v));
       },
       [](const RunConfig& c) { return std::to_string(c.model.decoder_layers); }},
      {"model.dim",
       [](RunConfig& c, const std::string& v) {
         c.model.dim = static_cast<int>(parse_long("model.dim", v));
       },
       [](const RunConfig& c) { return std::to_string(c.model.dim); }},
      {"model.heads",
       [](RunConfig& c, const std::string& v) {
         c.model.heads = static_cast<int>(parse_long("model.heads", v));
       },
       [](const RunConfig& c) { return std::to_string(c.model.heads); }},
      {"model.mlp_ratio",
       [](RunConfig& c, const std::string& v) {
         c.model.mlp_ratio = static_cast<int>(parse_long("model.mlp_ratio", v));
       },
       [](const RunConfig& c) { return std::to_string(c.model.mlp_ratio); }},
      {"model.patch_size",
       [](RunConfig& c, const std::string& v) {
         c.model.patch_size = static_cast<int>(parse_long("model.patch_size", v));
       },
       [](const RunConfig& c) { return std::to_string(c.model.patch_size); }},
      {"model.latent_count",
       [](RunConfig& c, const std::string& v) {
         c.model.latent_count = static_cast<int>(parse_long("model.latent_count", v));
       },
       [](const RunConfig& c) { return std::to_string(c.model.latent_count); }},
      {"model.variant",
       [](RunConfig& c, const std::string& v) { c.model.variant = parse_variant(v); },
       [](const RunConfig& c) { return to_string(c.model.variant); }},

      {"train.peak_lr",
       [](RunConfig& c, const std::string& v) { c.train.peak_lr = parse_double("train.peak_lr", v); },
       [](const RunConfig& c) { return fmt_double(c.train.peak_lr); }},
      {"train.warmup_steps",
       [](RunConfig& c, const std::string& v) {
         c.train.warmup_steps = static_cast<int>(parse_long("train.warmup_steps", v));
       },
       [](const RunConfig& c) { return std::to_string(c.train.warmup_steps); }},
      {"train.total_steps",
       [](RunConfig& c, const std::string& v) {
         c.train.total_steps = static_cast<int>(parse_long("train.total_steps", v));
       },
       [](const RunConfig& c) { return std::to_string(c.train.total_steps); }},
      {"train.batch_size",
       [](RunConfig& c, const std::string& v) {
         c.train.batch_size = static_cast<int>(parse_long("train.batch_size", v));
       },
       [](const RunConfig& c) { return std::to_string(c.train.batch_size); }},
      {"train.lambda",
       [](RunConfig& c, const std::string& v) {
         c.train.lambda_perceptual = parse_double("train.lambda", v);
       },
       [](const RunConfig& c) { return fmt_double(c.train.lambda_perceptual); }},
      {"train.clip_norm",
       [](RunConfig& c, const std::string& v) {
         c.train.clip_norm = parse_double("train.clip_norm", v);
       },
       [](const RunConfig& c) { return fmt_double(c.train.clip_norm); }},
      {"train.skip_threshold",
       [](RunConfig& c, const std::string& v) {
         c.train.skip_threshold = parse_double("train.skip_threshold", v);
       },
       [](const RunConfig& c) { return fmt_double(c.train.skip_threshold); }},
      {"train.beta1",
       [](RunConfig& c, const std::string& v) { c.train.beta1 = parse_double("train.beta1", v); },
       [](const RunConfig& c) { return fmt_double(c.train.beta1); }},
      {"train.beta2",
       [](RunConfig& c, const std::string& v) { c.train.beta2 = parse_double("train.beta2", v); },
       [](const RunConfig& c) { return fmt_double(c.train.beta2); }},
      {"train.weight_decay",
       [](RunConfig& c, const std::string& v) {
         c.train.weight_decay = parse_double("train.weight_decay", v);
       },
       [](const RunConfig& c) { return fmt_double(c.train.weight_decay); }},
      {"train.targets_per_example",
       [](RunConfig& c, const std::string& v) {
         c.train.targets_per_example =
             static_cast<int>(parse_long("train.targets_per_example", v));
       },
       [](const RunConfig& c) { return std::to_string(c.train.targets_per_example); }},
      {"train.checkpoint_every",
       [](RunConfig& c, const std::string& v) {
         c.train.checkpoint_every = static_cast<int>(parse_long("train.checkpoint_every", v));
       },
       [](const RunConfig& c) { return std::to_string(c.train.checkpoint_every); }},

      {"data.dir", [](RunConfig& c, const std::string& v) { c.data.dir = v; },
       [](const RunConfig& c) { return c.data.dir; }},
      {"data.scenes",
       [](RunConfig& c, const std::string& v) {
         c.data.scenes = static_cast<int>(parse_long("data.scenes", v));
       },
       [](const RunConfig& c) { return std::to_string(c.data.scenes); }},
      {"data.mode",
       [](RunConfig& c, const std::string& v) { c.data.mode = parse_sample_mode(v); },
       [](const RunConfig& c) { return to_string(c.data.mode); }},
      {"data.input_views",
       [](RunConfig& c, const std::string& v) {
         c.data.input_views = static_cast<int>(parse_long("data.input_views", v));
       },
       [](const RunConfig& c) { return std::to_string(c.data.input_views); }},
      {"data.target_views",
       [](RunConfig& c, const std::string& v) {
         c.data.target_views = static_cast<int>(parse_long("data.target_views", v));
       },
       [](const RunConfig& c) { return std::to_string(c.data.target_views); }},
      {"data.resolution",
       [](RunConfig& c, const std::string& v) {
         c.data.resolution = static_cast<int>(parse_long("data.resolution", v));
       },
       [](const RunConfig& c) { return std::to_string(c.data.resolution); }},
  };
  return table;
}

}  // namespace

void set_config_key(RunConfig& config, const std::string& key, const std::string& value) {
  for (const KeyEntry& e : key_table()) {
    if (key == e.key) {
      e.set(config, value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> dump_config(const RunConfig& config) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const KeyEntry& e : key_table()) out.emplace_back(e.key, e.get(config));
  return out;
}

RunConfig load_run_config(const std::string& file, std::span<const std::string> overrides) {
  RunConfig config;
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open config file " + file);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      std::size_t eq = t.find('=');
      if (eq == std::string::npos)
        throw ParseError(file + ":" + std::to_string(lineno) + ": expected key = value");
      set_config_key(config, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
  }
  for (const std::string& ov : overrides) {
    std::size_t eq = ov.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override '" + ov + "' is not of the form key=value");
    set_config_key(config, trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
  }
  return config;
}

RunConfig config_from_meta(std::span<const std::pair<std::string, std::string>> meta) {
  RunConfig config;
  for (const auto& [k, v] : meta)
    if (k.rfind("config.", 0) == 0) set_config_key(config, k.substr(7), v);
  return config;
}

std::vector<std::pair<std::string, std::string>> config_meta(const RunConfig& config) {
  std::vector<std::pair<std::string, std::string>> out;
  for (auto& [k, v] : dump_config(config)) out.emplace_back("config." + k, v);
  return out;
}

}  // namespace nvs
