#pragma once

// Flat key=value experiment configuration. One key per line, '#' starts a
// comment, unknown keys are rejected. Tasks are declared as
// `task.<name> = <class list>` where the list mixes ids and ranges
// ("0-19", "20,22,24-26").

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "paintkit/coeff_search.hpp"
#include "paintkit/error.hpp"
#include "paintkit/io.hpp"
#include "paintkit/patch_pipeline.hpp"
#include "paintkit/text.hpp"
#include "paintkit/toy_lab.hpp"

namespace paintkit {

// Raised for malformed or incomplete configuration (usage errors).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct KeyInfo {
  const char* key;
  const char* fallback;  // nullptr: required when read
  const char* help;
};

inline const std::vector<KeyInfo>& config_keys() {
  static const std::vector<KeyInfo> keys = {
      {"out_dir", "out", "directory for every output file"},
      {"data_dir", "", "read tasks from <data_dir>/<name>.csv instead of generating them"},
      {"seed", nullptr, "task generation seed"},
      {"num_classes", nullptr, "size of the global class space"},
      {"dim", nullptr, "input dimension"},
      {"samples_per_class", nullptr, "examples drawn per class"},
      {"noise_scale", nullptr, "isotropic noise around each class mean"},
      {"supported", "", "comma list of supported task names"},
      {"patching", "", "comma list of patching task names"},
      {"pretrain_tasks", "", "tasks used for pretraining (default: supported)"},
      {"split", "", "task to split into disjoint halves A and B"},
      {"split_seed", "0", "seed of the class partition for split"},
      {"zero_shot", "", "zero-shot checkpoint (default: <out_dir>/zero_shot.ckpt)"},
      {"model.hidden", "64,64", "hidden widths"},
      {"model.embed_dim", "32", "encoder output width"},
      {"model.logit_scale", "20", "logit scale s"},
      {"model.head_seed", "0", "seed of the class-embedding head"},
      {"model.init_seed", "0", "weight initialization seed"},
      {"pretrain.iterations", "1500", ""},
      {"pretrain.batch_size", "64", ""},
      {"pretrain.lr", "3e-3", ""},
      {"pretrain.warmup", "100", ""},
      {"pretrain.weight_decay", "0.1", ""},
      {"pretrain.seed", "0", ""},
      {"finetune.iterations", "500", ""},
      {"finetune.batch_size", "64", ""},
      {"finetune.lr", "1e-3", ""},
      {"finetune.warmup", "50", ""},
      {"finetune.weight_decay", "0.1", ""},
      {"finetune.seed", "0", ""},
      {"finetune.init_reg", "0", "lambda of the distance-to-init penalty"},
      {"finetune.ema_decay", "", "EMA decay (empty: off)"},
      {"finetune.snapshot_every", "0", "snapshot cadence (0: off)"},
      {"finetune.schedule", "warmup_cosine", "warmup_cosine or constant"},
      {"strategy", "single", "single, joint, sequential or parallel"},
      {"search", "uniform", "parallel coefficient search: uniform or black_box"},
      {"alpha_grid", "0:1:0.05", "lo:hi:step or a comma list"},
      {"order_seeds", "0,1,2", "sequential task-order seeds"},
      {"weighting", "per_task", "per_task or per_group objective weighting"},
      {"interpolate", "true", "sequential: false disables interpolation"},
      {"forced_alpha", "", "skip selection and use this coefficient"},
      {"budget", "50", "black-box evaluation budget"},
      {"baselines", "false", "finetune: also trace baseline frontiers"},
      {"baseline.ema_decay", "0.99", ""},
      {"baseline.split", "test", "split the baseline frontiers are scored on"},
      {"broad_transfer", "false", "patch: split each patching task and report transfer to its B half"},
  };
  return keys;
}

inline const KeyInfo* find_key(std::string_view k) {
  for (const auto& info : config_keys()) {
    if (k == info.key) return &info;
  }
  return nullptr;
}

// Class list: "0-4,7,9-10".
inline std::vector<int> parse_class_list(std::string_view s) {
  std::vector<int> out;
  for (auto part : text::split(s, ',')) {
    part = text::trim(part);
    if (part.empty()) continue;
    if (auto dash = part.find('-'); dash != std::string_view::npos && dash > 0) {
      const auto lo = text::parse_integer(part.substr(0, dash), "class range start");
      const auto hi = text::parse_integer(part.substr(dash + 1), "class range end");
      if (hi < lo) throw Error(Errc::parse, "empty class range '" + std::string(part) + "'");
      for (auto c = lo; c <= hi; ++c) out.push_back(static_cast<int>(c));
    } else {
      out.push_back(static_cast<int>(text::parse_integer(part, "class id")));
    }
  }
  return out;
}

inline std::vector<std::string> parse_name_list(std::string_view s) {
  std::vector<std::string> out;
  for (auto part : text::split(s, ',')) {
    part = text::trim(part);
    if (!part.empty()) out.emplace_back(part);
  }
  return out;
}

class Config {
 public:
  Config() = default;

  static Config parse(std::string_view body, const std::string& origin = "config") {
    Config c;
    std::size_t lineno = 0;
    std::size_t start = 0;
    while (start <= body.size()) {
      auto end = body.find('\n', start);
      if (end == std::string_view::npos) end = body.size();
      auto line = body.substr(start, end - start);
      start = end + 1;
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = text::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      }
      c.set(std::string(text::trim(line.substr(0, eq))), std::string(text::trim(line.substr(eq + 1))));
    }
    return c;
  }

  static Config load(const std::filesystem::path& p) {
    try {
      return parse(io::read_file(p), p.string());
    } catch (const Error& e) {
      throw ConfigError(std::string("cannot read config: ") + e.what());
    }
  }

  // Dashes in keys are accepted as underscores so `--alpha-grid` works.
  void set(std::string key, std::string value) {
    std::replace(key.begin(), key.end(), '-', '_');
    if (key.rfind("task.", 0) == 0) {
      if (key.size() == 5) throw ConfigError("task key needs a name: task.<name>");
    } else if (!find_key(key)) {
      throw ConfigError("unknown config key '" + key + "'");
    }
    values_[key] = std::move(value);
  }

  bool has(const std::string& key) const {
    auto it = values_.find(key);
    return it != values_.end();
  }

  std::string str(const std::string& key) const {
    if (auto it = values_.find(key); it != values_.end()) return it->second;
    const KeyInfo* info = find_key(key);
    if (!info) throw ConfigError("unknown config key '" + key + "'");
    if (!info->fallback) throw ConfigError("missing required key '" + key + "'");
    return info->fallback;
  }

  double num(const std::string& key) const {
    double v = 0.0;
    if (!text::try_parse_number(str(key), v)) throw ConfigError("key '" + key + "' expects a number, got '" + str(key) + "'");
    return v;
  }

  std::uint64_t count(const std::string& key) const {
    const auto s = str(key);
    try {
      const auto v = text::parse_integer(s);
      if (v < 0) throw ConfigError("key '" + key + "' must be >= 0");
      return static_cast<std::uint64_t>(v);
    } catch (const Error&) {
      throw ConfigError("key '" + key + "' expects a non-negative integer, got '" + s + "'");
    }
  }

  bool flag(const std::string& key) const {
    const auto s = str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("key '" + key + "' expects true or false, got '" + s + "'");
  }

  std::vector<std::string> names(const std::string& key) const { return parse_name_list(str(key)); }

  // task.<name> entries in key order.
  std::vector<TaskPartition> partition() const {
    std::vector<TaskPartition> out;
    for (const auto& [k, v] : values_) {
      if (k.rfind("task.", 0) != 0) continue;
      try {
        out.push_back({k.substr(5), parse_class_list(v)});
      } catch (const Error& e) {
        throw ConfigError("key '" + k + "': " + e.what());
      }
    }
    return out;
  }

  const std::map<std::string, std::string>& values() const noexcept { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Typed views

inline TaskGenConfig task_gen_config(const Config& c) {
  TaskGenConfig g;
  g.seed = c.count("seed");
  g.num_classes = static_cast<int>(c.count("num_classes"));
  g.dim = c.count("dim");
  g.samples_per_class = c.count("samples_per_class");
  g.noise_scale = c.num("noise_scale");
  return g;
}

inline ModelConfig model_config(const Config& c, std::size_t input_dim) {
  ModelConfig m;
  m.input_dim = input_dim;
  m.hidden.clear();
  for (const auto& h : c.names("model.hidden")) {
    try {
      m.hidden.push_back(static_cast<std::size_t>(text::parse_integer(h, "hidden width")));
    } catch (const Error& e) {
      throw ConfigError(std::string("key 'model.hidden': ") + e.what());
    }
  }
  m.embed_dim = c.count("model.embed_dim");
  m.logit_scale = c.num("model.logit_scale");
  m.head_seed = c.count("model.head_seed");
  m.init_seed = c.count("model.init_seed");
  return m;
}

inline TrainConfig train_config(const Config& c, const std::string& prefix) {
  TrainConfig t;
  t.iterations = c.count(prefix + ".iterations");
  t.batch_size = c.count(prefix + ".batch_size");
  t.peak_lr = c.num(prefix + ".lr");
  t.warmup = c.count(prefix + ".warmup");
  t.weight_decay = c.num(prefix + ".weight_decay");
  t.seed = c.count(prefix + ".seed");
  if (prefix == "finetune") {
    t.init_reg = c.num("finetune.init_reg");
    if (!c.str("finetune.ema_decay").empty()) t.ema_decay = c.num("finetune.ema_decay");
    t.snapshot_every = c.count("finetune.snapshot_every");
    const auto sched = c.str("finetune.schedule");
    if (sched == "constant") {
      t.schedule = LrSchedule::constant;
    } else if (sched != "warmup_cosine") {
      throw ConfigError("key 'finetune.schedule' expects warmup_cosine or constant");
    }
  }
  try {
    t.validate();
  } catch (const Error& e) {
    throw ConfigError(prefix + ": " + e.what());
  }
  return t;
}

inline PatchSpec patch_spec(const Config& c) {
  PatchSpec s;
  try {
    s.strategy = parse_strategy(c.str("strategy"));
    s.search = parse_search_method(c.str("search"));
    s.grid = parse_grid(c.str("alpha_grid"));
    s.weighting = parse_weighting(c.str("weighting"));
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  s.order_seeds.clear();
  for (const auto& seed : c.names("order_seeds")) {
    try {
      const auto v = text::parse_integer(seed, "order seed");
      if (v < 0) throw Error(Errc::out_of_range, "order seeds must be >= 0");
      s.order_seeds.push_back(static_cast<std::uint64_t>(v));
    } catch (const Error& e) {
      throw ConfigError(std::string("key 'order_seeds': ") + e.what());
    }
  }
  s.train = train_config(c, "finetune");
  s.black_box.budget = c.count("budget");
  s.interpolate = c.flag("interpolate");
  if (!c.str("forced_alpha").empty()) s.forced_alpha = c.num("forced_alpha");
  if (s.strategy == Strategy::sequential && s.order_seeds.empty()) throw ConfigError("sequential strategy needs order_seeds");
  return s;
}

// Tasks from <data_dir>/<name>.csv when data_dir is set, otherwise generated
// from the task.<name> entries.
inline std::map<std::string, TaskDataset> load_tasks(const Config& c) {
  std::map<std::string, TaskDataset> out;
  const auto data_dir = c.str("data_dir");
  if (!data_dir.empty()) {
    if (!std::filesystem::is_directory(data_dir)) throw ConfigError("data_dir '" + data_dir + "' is not a directory");
    for (const auto& e : std::filesystem::directory_iterator(data_dir)) {
      if (e.path().extension() != ".csv") continue;
      const auto name = e.path().stem().string();
      out.emplace(name, task_from_csv(io::read_file(e.path()), name));
    }
    return out;
  }
  const auto parts = c.partition();
  if (parts.empty()) throw ConfigError("missing required key 'task.<name>' (no tasks declared)");
  for (auto& t : generate_tasks(task_gen_config(c), parts)) {
    auto name = t.name;
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

inline std::vector<TaskDataset> select_tasks(const std::map<std::string, TaskDataset>& all, const std::vector<std::string>& names,
                                             const std::string& key) {
  std::vector<TaskDataset> out;
  for (const auto& n : names) {
    auto it = all.find(n);
    if (it == all.end()) throw ConfigError("key '" + key + "' names unknown task '" + n + "'");
    out.push_back(it->second);
  }
  return out;
}

}  // namespace paintkit
