#pragma once

// Two-step patching: fine-tune the zero-shot model on the patching task(s),
// then choose mixing coefficients on held-out validation accuracy over the
// supported and patching tasks. Multi-task variants merge the data (joint),
// repeat the procedure task by task (sequential), or combine independently
// fine-tuned models (parallel).
//
// Every accuracy read goes through an access log so callers can check that
// coefficient selection touched only validation splits and that headline
// numbers came only from test splits.

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "paintkit/coeff_search.hpp"
#include "paintkit/error.hpp"
#include "paintkit/metrics.hpp"
#include "paintkit/parallel.hpp"
#include "paintkit/toy_lab.hpp"
#include "paintkit/weight_store.hpp"

namespace paintkit {

enum class Strategy { single, joint, sequential, parallel };
enum class SearchMethod { grid, uniform, black_box };
enum class ObjectiveWeighting { per_task, per_group };
enum class Phase { selection, report };

constexpr std::string_view to_string(Strategy s) noexcept {
  switch (s) {
    case Strategy::single: return "single";
    case Strategy::joint: return "joint";
    case Strategy::sequential: return "sequential";
    case Strategy::parallel: return "parallel";
  }
  return "?";
}

constexpr std::string_view to_string(SearchMethod m) noexcept {
  switch (m) {
    case SearchMethod::grid: return "grid";
    case SearchMethod::uniform: return "uniform";
    case SearchMethod::black_box: return "black_box";
  }
  return "?";
}

constexpr std::string_view to_string(ObjectiveWeighting w) noexcept {
  return w == ObjectiveWeighting::per_task ? "per_task" : "per_group";
}

constexpr std::string_view to_string(Phase p) noexcept { return p == Phase::selection ? "selection" : "report"; }

inline Strategy parse_strategy(std::string_view s) {
  if (s == "single") return Strategy::single;
  if (s == "joint") return Strategy::joint;
  if (s == "sequential") return Strategy::sequential;
  if (s == "parallel") return Strategy::parallel;
  throw Error(Errc::parse, "unknown strategy '" + std::string(s) + "'");
}

inline SearchMethod parse_search_method(std::string_view s) {
  if (s == "grid") return SearchMethod::grid;
  if (s == "uniform") return SearchMethod::uniform;
  if (s == "black_box" || s == "black-box") return SearchMethod::black_box;
  throw Error(Errc::parse, "unknown search method '" + std::string(s) + "'");
}

inline ObjectiveWeighting parse_weighting(std::string_view s) {
  if (s == "per_task") return ObjectiveWeighting::per_task;
  if (s == "per_group") return ObjectiveWeighting::per_group;
  throw Error(Errc::parse, "unknown objective weighting '" + std::string(s) + "'");
}

struct PatchSpec {
  Strategy strategy = Strategy::single;
  SearchMethod search = SearchMethod::uniform;  // parallel only; other strategies grid-search alpha
  std::vector<double> grid = default_grid();
  std::vector<std::uint64_t> order_seeds = {0};  // sequential only
  ObjectiveWeighting weighting = ObjectiveWeighting::per_task;
  TrainConfig train;
  BlackBoxOptions black_box;
  std::optional<double> forced_alpha;  // single/joint/sequential: skip selection
  bool interpolate = true;             // sequential: false fixes alpha = 1 at every step
};

struct AccessEvent {
  std::string task;
  Split split;
  Phase phase;
  friend bool operator==(const AccessEvent&, const AccessEvent&) = default;
};

struct TaskAccuracy {
  std::string task;
  std::string role;  // "supported" or "patching"
  double val = 0.0;  // percent, at the chosen coefficients
  double test = 0.0;
  double zero_shot_test = 0.0;
};

// One weight-space combination: base <- multi_combine(base, finetuned[models], coeffs).
// The first step's base is the zero-shot model, later steps use the previous result.
struct ProvenanceStep {
  std::vector<std::size_t> models;
  std::vector<double> coeffs;
};

struct NamedFrontier {
  std::string name;
  Frontier frontier;
};

struct PatchResult {
  Strategy strategy = Strategy::single;
  Checkpoint patched;
  CoeffVector coeffs;  // of the last step
  std::vector<Checkpoint> finetuned;
  std::vector<std::string> finetuned_on;  // task name per fine-tuned model
  std::vector<ProvenanceStep> provenance;
  std::vector<NamedFrontier> frontiers;  // validation accuracies, percent
  std::vector<SearchResult> searches;    // one per selection step
  std::vector<TaskAccuracy> accuracies;
  std::vector<AccessEvent> access_log;
  std::optional<std::uint64_t> order_seed;
  std::vector<std::string> order;  // task order actually applied

  double combined_test() const {
    std::vector<double> s, p;
    for (const auto& a : accuracies) (a.role == "supported" ? s : p).push_back(a.test);
    return combined_accuracy(s, p);
  }
};

struct SequentialResult {
  std::vector<PatchResult> per_seed;
  std::vector<TaskAccuracy> averaged;  // accuracies averaged over seeds
  double combined_test() const {
    std::vector<double> s, p;
    for (const auto& a : averaged) (a.role == "supported" ? s : p).push_back(a.test);
    return combined_accuracy(s, p);
  }
};

// Replays the provenance record from the zero-shot weights.
inline Checkpoint reconstruct(const Checkpoint& zs, const PatchResult& r) {
  Checkpoint cur = zs;
  for (const auto& step : r.provenance) {
    std::vector<Checkpoint> fts;
    for (auto i : step.models) fts.push_back(r.finetuned.at(i));
    cur = multi_combine(cur, fts, step.coeffs);
  }
  return cur;
}

namespace detail {

class AccessLog {
 public:
  explicit AccessLog(std::vector<AccessEvent>& events) : events_(events) {}

  double accuracy(const ToyModel& m, const TaskDataset& t, Split s, Phase p) {
    events_.push_back({t.name, s, p});
    return 100.0 * evaluate(m, t, s);
  }

 private:
  std::vector<AccessEvent>& events_;
};

struct TaskSet {
  std::vector<const TaskDataset*> supported, patching;

  std::size_t size() const { return supported.size() + patching.size(); }
  const TaskDataset& at(std::size_t i) const {
    return i < supported.size() ? *supported[i] : *patching[i - supported.size()];
  }
  std::string key(std::size_t i) const {
    return (i < supported.size() ? "supported/" : "patching/") + at(i).name;
  }
};

inline double objective(const std::vector<double>& accs, std::size_t n_supported, ObjectiveWeighting w) {
  if (w == ObjectiveWeighting::per_task) {
    double s = 0.0;
    for (double a : accs) s += a;
    return s / static_cast<double>(accs.size());
  }
  std::span<const double> all(accs);
  return combined_accuracy(all.first(n_supported), all.subspan(n_supported));
}

// Validation accuracies of every task for one candidate model.
inline std::vector<double> val_accuracies(AccessLog& log, const ModelConfig& arch, const Checkpoint& w, const TaskSet& ts) {
  ToyModel m{arch, w};
  std::vector<double> out;
  for (std::size_t i = 0; i < ts.size(); ++i) out.push_back(log.accuracy(m, ts.at(i), Split::val, Phase::selection));
  return out;
}

inline std::vector<double> sweep_grid(std::span<const double> grid) {
  std::set<double> g(grid.begin(), grid.end());
  g.insert(0.0);
  g.insert(1.0);
  return {g.begin(), g.end()};
}

struct Sweep {
  std::map<double, std::vector<double>> accs;  // alpha -> per-task val accuracy
  Frontier frontier;
};

// Evaluates lerp(base, target, alpha) on the configured grid plus both endpoints.
inline Sweep sweep_line(AccessLog& log, const ModelConfig& arch, const Checkpoint& base, const Checkpoint& target,
                        std::span<const double> grid, const TaskSet& ts) {
  std::map<double, std::vector<double>> accs;
  std::vector<SweepRecord> recs;
  for (double a : sweep_grid(grid)) {
    auto v = val_accuracies(log, arch, lerp(base, target, a), ts);
    SweepRecord r{a, {}};
    for (std::size_t i = 0; i < ts.size(); ++i) r.accuracy[ts.key(i)] = v[i];
    recs.push_back(std::move(r));
    accs.emplace(a, std::move(v));
  }
  std::vector<std::string> s_ids, p_ids;
  for (std::size_t i = 0; i < ts.size(); ++i) (i < ts.supported.size() ? s_ids : p_ids).push_back(ts.key(i));
  return {std::move(accs), sweep_to_frontier(recs, s_ids, p_ids)};
}

inline void check_tasks(std::span<const TaskDataset> patching, std::span<const TaskDataset> supported) {
  if (patching.empty()) throw Error(Errc::invalid_argument, "patching needs at least one patching task");
  if (supported.empty()) throw Error(Errc::invalid_argument, "patching needs at least one supported task");
  std::set<std::string> p, s;
  for (const auto& t : patching) {
    if (!p.insert(t.name).second) throw Error(Errc::conflict, "patching task '" + t.name + "' listed twice");
  }
  for (const auto& t : supported) {
    if (!s.insert(t.name).second) throw Error(Errc::conflict, "supported task '" + t.name + "' listed twice");
  }
}

inline TrainConfig train_config_for(const PatchSpec& spec, std::size_t task_index) {
  TrainConfig c = spec.train;
  c.seed = spec.train.seed + task_index;
  return c;
}

// Test accuracies of the chosen model (and of the zero-shot model) per task.
inline std::vector<TaskAccuracy> report(AccessLog& log, const ModelConfig& arch, const Checkpoint& zs,
                                        const Checkpoint& chosen, const std::vector<double>& val, const TaskSet& ts) {
  ToyModel m{arch, chosen}, z{arch, zs};
  std::vector<TaskAccuracy> out;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const auto& t = ts.at(i);
    out.push_back({t.name, i < ts.supported.size() ? "supported" : "patching", val[i],
                   log.accuracy(m, t, Split::test, Phase::report), log.accuracy(z, t, Split::test, Phase::report)});
  }
  return out;
}

// Fine-tunes `base` on `train_on`, then picks alpha on the validation sets of
// `ts` (or takes the forced value). Appends one provenance step to `r`.
inline std::vector<double> patch_step(PatchResult& r, AccessLog& log, const ModelConfig& arch, const Checkpoint& base,
                                      const TaskDataset& train_on, const TrainConfig& cfg, const TaskSet& ts,
                                      const PatchSpec& spec, std::optional<double> forced, const std::string& label) {
  Checkpoint ft = finetune(ToyModel{arch, base}, train_on, cfg).final_weights;
  const std::size_t idx = r.finetuned.size();
  r.finetuned.push_back(ft);
  r.finetuned_on.push_back(train_on.name);

  double alpha;
  std::vector<double> val;
  if (forced) {
    alpha = *forced;
    r.patched = lerp(base, ft, alpha);
    val = val_accuracies(log, arch, r.patched, ts);
  } else {
    auto sw = sweep_line(log, arch, base, ft, spec.grid, ts);
    SearchObjective obj([&](const CoeffVector& c) {
      return objective(sw.accs.at(c.values[0]), ts.supported.size(), spec.weighting);
    });
    auto sr = grid_search_1d(obj, spec.grid);
    alpha = sr.best.values[0];
    val = sw.accs.at(alpha);
    r.patched = lerp(base, ft, alpha);
    r.searches.push_back(std::move(sr));
    r.frontiers.push_back({label, std::move(sw.frontier)});
  }
  r.coeffs = CoeffVector{{alpha}};
  r.provenance.push_back({{idx}, {alpha}});
  return val;
}

inline TaskSet make_task_set(std::span<const TaskDataset> supported, std::span<const TaskDataset> patching) {
  TaskSet ts;
  for (const auto& t : supported) ts.supported.push_back(&t);
  for (const auto& t : patching) ts.patching.push_back(&t);
  return ts;
}

}  // namespace detail

// Single patching task.
inline PatchResult patch_single(const ToyModel& zs, const TaskDataset& task, std::span<const TaskDataset> supported,
                                const PatchSpec& spec) {
  detail::check_tasks(std::span<const TaskDataset>(&task, 1), supported);
  PatchResult r;
  r.strategy = Strategy::single;
  detail::AccessLog log(r.access_log);
  const auto ts = detail::make_task_set(supported, std::span<const TaskDataset>(&task, 1));
  auto val = detail::patch_step(r, log, zs.arch, zs.weights, task, detail::train_config_for(spec, 0), ts, spec,
                                spec.forced_alpha, task.name);
  r.order = {task.name};
  r.accuracies = detail::report(log, zs.arch, zs.weights, r.patched, val, ts);
  return r;
}

// Fine-tunes once on the union of the patching tasks; accuracies stay per task.
inline PatchResult patch_joint(const ToyModel& zs, std::span<const TaskDataset> patching,
                               std::span<const TaskDataset> supported, const PatchSpec& spec) {
  detail::check_tasks(patching, supported);
  if (patching.size() == 1) {
    auto r = patch_single(zs, patching[0], supported, spec);
    r.strategy = Strategy::joint;
    return r;
  }
  const TaskDataset merged = merge_tasks(patching, "joint");
  PatchResult r;
  r.strategy = Strategy::joint;
  detail::AccessLog log(r.access_log);
  const auto ts = detail::make_task_set(supported, patching);
  auto val = detail::patch_step(r, log, zs.arch, zs.weights, merged, detail::train_config_for(spec, 0), ts, spec,
                                spec.forced_alpha, "joint");
  for (const auto& t : patching) r.order.push_back(t.name);
  r.accuracies = detail::report(log, zs.arch, zs.weights, r.patched, val, ts);
  return r;
}

// Patches one task at a time in a seeded order. Step i fine-tunes the current
// patched model and interpolates from it; selection sees the supported tasks
// and the patching tasks visited so far. Final accuracies cover all tasks.
inline PatchResult patch_sequential_once(const ToyModel& zs, std::span<const TaskDataset> patching,
                                         std::span<const TaskDataset> supported, const PatchSpec& spec,
                                         std::uint64_t order_seed) {
  detail::check_tasks(patching, supported);
  std::vector<std::size_t> order(patching.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(order_seed);
  std::shuffle(order.begin(), order.end(), rng);

  PatchResult r;
  r.strategy = Strategy::sequential;
  r.order_seed = order_seed;
  detail::AccessLog log(r.access_log);
  Checkpoint cur = zs.weights;
  std::vector<TaskDataset> seen;
  seen.reserve(patching.size());
  for (std::size_t step = 0; step < order.size(); ++step) {
    const TaskDataset& t = patching[order[step]];
    seen.push_back(t);
    const auto ts = detail::make_task_set(supported, seen);
    const std::optional<double> forced = spec.interpolate ? spec.forced_alpha : std::optional<double>(1.0);
    detail::patch_step(r, log, zs.arch, cur, t, detail::train_config_for(spec, order[step]), ts, spec, forced,
                       "step" + std::to_string(step) + ":" + t.name);
    cur = r.patched;
    r.order.push_back(t.name);
  }
  const auto all = detail::make_task_set(supported, patching);
  std::vector<double> val;
  {
    ToyModel m{zs.arch, cur};
    for (std::size_t i = 0; i < all.size(); ++i) val.push_back(log.accuracy(m, all.at(i), Split::val, Phase::selection));
  }
  r.accuracies = detail::report(log, zs.arch, zs.weights, r.patched, val, all);
  return r;
}

inline SequentialResult patch_sequential(const ToyModel& zs, std::span<const TaskDataset> patching,
                                         std::span<const TaskDataset> supported, const PatchSpec& spec) {
  if (spec.order_seeds.empty()) throw Error(Errc::invalid_argument, "sequential patching needs at least one order seed");
  SequentialResult out;
  for (auto seed : spec.order_seeds) out.per_seed.push_back(patch_sequential_once(zs, patching, supported, spec, seed));
  out.averaged = out.per_seed.front().accuracies;
  const double n = static_cast<double>(out.per_seed.size());
  for (std::size_t i = 0; i < out.averaged.size(); ++i) {
    double v = 0, t = 0;
    for (const auto& r : out.per_seed) {
      v += r.accuracies[i].val;
      t += r.accuracies[i].test;
    }
    out.averaged[i].val = v / n;
    out.averaged[i].test = t / n;
  }
  return out;
}

// Fine-tunes every patching task from the zero-shot model (concurrently), then
// picks one coefficient per model. Uniform search walks the ray toward the
// average of the fine-tuned models; black-box search starts from the best ray
// point. The ray sweep is reported as the frontier either way.
inline PatchResult patch_parallel(const ToyModel& zs, std::span<const TaskDataset> patching,
                                  std::span<const TaskDataset> supported, const PatchSpec& spec) {
  detail::check_tasks(patching, supported);
  if (spec.search == SearchMethod::grid) throw Error(Errc::invalid_argument, "parallel patching uses uniform or black_box search");
  PatchResult r;
  r.strategy = Strategy::parallel;
  detail::AccessLog log(r.access_log);
  const auto ts = detail::make_task_set(supported, patching);
  const std::size_t k = patching.size();

  std::vector<std::optional<Checkpoint>> fts(k);
  parallel_for(k, [&](std::size_t i) {
    fts[i] = finetune(zs, patching[i], detail::train_config_for(spec, i)).final_weights;
  });
  for (std::size_t i = 0; i < k; ++i) {
    r.finetuned.push_back(std::move(*fts[i]));
    r.finetuned_on.push_back(patching[i].name);
    r.order.push_back(patching[i].name);
  }

  const Checkpoint avg = average(r.finetuned);
  auto sw = detail::sweep_line(log, zs.arch, zs.weights, avg, spec.grid, ts);
  SearchObjective ray_obj([&](const CoeffVector& c) {
    return detail::objective(sw.accs.at(c.values[0]), ts.supported.size(), spec.weighting);
  });
  auto ray = grid_search_1d(ray_obj, spec.grid);
  const double kd = static_cast<double>(k);
  std::vector<double> coeffs(k, ray.best.values[0] / kd);
  std::map<std::vector<double>, std::vector<double>> cache;

  if (spec.search == SearchMethod::black_box) {
    SearchObjective obj([&](const CoeffVector& c) {
      auto v = detail::val_accuracies(log, zs.arch, multi_combine(zs.weights, r.finetuned, c.values), ts);
      const double f = detail::objective(v, ts.supported.size(), spec.weighting);
      cache.emplace(c.values, std::move(v));
      return f;
    });
    BlackBoxOptions opts = spec.black_box;
    opts.start = coeffs;
    auto bb = black_box_search(obj, k, opts);
    coeffs = bb.best.values;
    r.searches.push_back(std::move(bb));
  } else {
    SearchResult spread;
    for (const auto& e : ray.trace) spread.trace.push_back({CoeffVector{std::vector<double>(k, e.coeffs.values[0] / kd)}, e.value});
    spread.best = CoeffVector{coeffs};
    spread.best_value = ray.best_value;
    spread.evaluations = ray.evaluations;
    r.searches.push_back(std::move(spread));
  }

  r.patched = multi_combine(zs.weights, r.finetuned, coeffs);
  r.coeffs = CoeffVector{coeffs};
  std::vector<std::size_t> all(k);
  std::iota(all.begin(), all.end(), std::size_t{0});
  r.provenance.push_back({all, coeffs});
  r.frontiers.push_back({"uniform_ray", std::move(sw.frontier)});

  std::vector<double> val;
  if (auto it = cache.find(coeffs); it != cache.end()) {
    val = it->second;
  } else {
    val = detail::val_accuracies(log, zs.arch, r.patched, ts);
  }
  r.accuracies = detail::report(log, zs.arch, zs.weights, r.patched, val, ts);
  return r;
}

// Dispatches single/joint/parallel. Sequential runs go through patch_sequential.
inline PatchResult patch(const ToyModel& zs, std::span<const TaskDataset> patching, std::span<const TaskDataset> supported,
                         const PatchSpec& spec) {
  switch (spec.strategy) {
    case Strategy::single:
      if (patching.size() != 1) throw Error(Errc::invalid_argument, "single patching takes exactly one patching task");
      return patch_single(zs, patching[0], supported, spec);
    case Strategy::joint: return patch_joint(zs, patching, supported, spec);
    case Strategy::parallel: return patch_parallel(zs, patching, supported, spec);
    case Strategy::sequential: break;
  }
  throw Error(Errc::invalid_argument, "use patch_sequential for the sequential strategy");
}

// ---------------------------------------------------------------------------
// Disjoint-class splits and broad transfer

struct SplitProtocol {
  std::string source;
  std::uint64_t seed = 0;
  TaskDataset a, b;
};

// Shuffles the class ids with `seed`; A takes the first ceil(n / 2). Each
// example keeps its split membership in whichever half it lands.
inline SplitProtocol split_task(const TaskDataset& task, std::uint64_t seed) {
  if (task.class_ids.size() < 2) throw Error(Errc::invalid_argument, "task '" + task.name + "' needs at least 2 classes to split");
  std::vector<int> classes = task.class_ids;
  std::mt19937_64 rng(seed);
  std::shuffle(classes.begin(), classes.end(), rng);
  const std::set<int> in_a(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>((classes.size() + 1) / 2));

  SplitProtocol sp{task.name, seed, {}, {}};
  sp.a.name = task.name + "_A";
  sp.b.name = task.name + "_B";
  std::vector<std::size_t> new_index(task.size());
  std::vector<char> to_a(task.size());
  for (auto* h : {&sp.a, &sp.b}) h->dim = task.dim;
  for (std::size_t i = 0; i < task.size(); ++i) {
    to_a[i] = in_a.count(task.labels[i]) ? 1 : 0;
    TaskDataset& h = to_a[i] ? sp.a : sp.b;
    new_index[i] = h.size();
    auto x = task.input(i);
    h.inputs.insert(h.inputs.end(), x.begin(), x.end());
    h.labels.push_back(task.labels[i]);
  }
  for (Split s : {Split::train, Split::val, Split::test}) {
    for (auto i : task.indices(s)) {
      TaskDataset& h = to_a[i] ? sp.a : sp.b;
      auto& dst = s == Split::train ? h.train : s == Split::val ? h.val : h.test;
      dst.push_back(new_index[i]);
    }
  }
  for (int c : task.class_ids) (in_a.count(c) ? sp.a : sp.b).class_ids.push_back(c);
  return sp;
}

struct BroadTransferReport {
  std::string task;
  double unpatched_b = 0.0;  // percent, test split
  double patched_b = 0.0;
  double delta = 0.0;
  PatchResult patch;
};

// Patches on A only (B is never trained on nor used for selection), then
// scores B's test split through the open-vocabulary head.
inline BroadTransferReport broad_transfer_eval(const ToyModel& zs, const TaskDataset& a, const TaskDataset& b,
                                               std::span<const TaskDataset> supported, const PatchSpec& spec,
                                               std::string label = {}) {
  BroadTransferReport out;
  out.task = label.empty() ? a.name : std::move(label);
  out.patch = patch_single(zs, a, supported, spec);
  detail::AccessLog log(out.patch.access_log);
  out.unpatched_b = log.accuracy(zs, b, Split::test, Phase::report);
  out.patched_b = log.accuracy(ToyModel{zs.arch, out.patch.patched}, b, Split::test, Phase::report);
  out.delta = out.patched_b - out.unpatched_b;
  return out;
}

inline std::string broad_transfer_to_csv(std::span<const BroadTransferReport> rows) {
  std::string out = "task,unpatched_B,patched_B,delta\n";
  for (const auto& r : rows) {
    out += r.task + ',' + text::format_number(r.unpatched_b) + ',' + text::format_number(r.patched_b) + ',' +
           text::format_number(r.delta) + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Export

inline nlohmann::ordered_json accuracies_to_json(const std::vector<TaskAccuracy>& accs) {
  auto j = nlohmann::ordered_json::array();
  for (const auto& a : accs) {
    j.push_back({{"task", a.task}, {"role", a.role}, {"val", a.val}, {"test", a.test}, {"zero_shot_test", a.zero_shot_test}});
  }
  return j;
}

inline nlohmann::ordered_json patch_result_to_json(const PatchResult& r) {
  nlohmann::ordered_json j;
  j["strategy"] = std::string(to_string(r.strategy));
  if (r.order_seed) j["order_seed"] = *r.order_seed;
  j["order"] = r.order;
  j["coefficients"] = r.coeffs.values;
  j["combined_test"] = r.combined_test();
  j["accuracies"] = accuracies_to_json(r.accuracies);
  auto fr = nlohmann::ordered_json::array();
  for (const auto& f : r.frontiers) fr.push_back({{"name", f.name}, {"points", frontier_to_json(f.frontier)}});
  j["frontiers"] = std::move(fr);
  auto prov = nlohmann::ordered_json::array();
  for (const auto& s : r.provenance) {
    std::vector<std::string> names;
    for (auto i : s.models) names.push_back(r.finetuned_on.at(i));
    prov.push_back({{"models", s.models}, {"finetuned_on", names}, {"coeffs", s.coeffs}});
  }
  j["provenance"] = std::move(prov);
  auto searches = nlohmann::ordered_json::array();
  for (const auto& s : r.searches) searches.push_back(search_result_to_json(s));
  j["searches"] = std::move(searches);
  return j;
}

}  // namespace paintkit
