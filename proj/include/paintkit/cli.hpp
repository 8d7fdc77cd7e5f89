#pragma once

// paintkit command-line front end.
//
//   gen-tasks  generate task CSVs (and an optional disjoint-class split)
//   pretrain   train the zero-shot model on the supported tasks
//   finetune   fine-tune on each patching task; optionally trace baselines
//   patch      run a patching strategy and write reports
//   metrics    frontier metrics, checkpoint similarity, CKA
//   report     collect result files into plot-ready CSV/JSON
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime or data
// error.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "paintkit/error.hpp"
#include "paintkit/experiment.hpp"
#include "paintkit/io.hpp"
#include "paintkit/metrics.hpp"
#include "paintkit/patch_pipeline.hpp"
#include "paintkit/toy_lab.hpp"
#include "paintkit/weight_store.hpp"

namespace paintkit::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

namespace detail {

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Every JSON artifact starts with a created_at field; everything after it is
// a pure function of the configuration.
inline void write_json(const fs::path& p, ojson body) {
  ojson j;
  j["created_at"] = utc_timestamp();
  for (auto& [k, v] : body.items()) j[k] = v;
  io::atomic_write(p, j.dump(2) + "\n");
}

inline std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

// Turns leftover "--key value" / "--key=value" tokens into config overrides.
inline void apply_overrides(Config& c, const std::vector<std::string>& extras) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& tok = extras[i];
    if (tok.rfind("--", 0) != 0 || tok.size() == 2) throw ConfigError("unexpected argument '" + tok + "'");
    std::string key = tok.substr(2), value;
    if (auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.resize(eq);
    } else if (i + 1 < extras.size() && extras[i + 1].rfind("--", 0) != 0) {
      value = extras[++i];
    } else {
      value = "true";
    }
    c.set(key, value);
  }
}

inline fs::path out_dir(const Config& c) { return c.str("out_dir"); }

inline fs::path zero_shot_path(const Config& c) {
  const auto p = c.str("zero_shot");
  return p.empty() ? out_dir(c) / "zero_shot.ckpt" : fs::path(p);
}

inline std::vector<TaskDataset> role_tasks(const Config& c, const std::map<std::string, TaskDataset>& all,
                                           const std::string& key) {
  const auto names = c.names(key);
  if (names.empty()) throw ConfigError("missing required key '" + key + "'");
  return select_tasks(all, names, key);
}

inline ToyModel run_pretrain(const Config& c, const std::map<std::string, TaskDataset>& all, std::ostream& out) {
  auto names = c.names("pretrain_tasks");
  const std::string key = names.empty() ? "supported" : "pretrain_tasks";
  if (names.empty()) names = c.names("supported");
  if (names.empty()) throw ConfigError("missing required key 'supported'");
  auto base = select_tasks(all, names, key);
  const ModelConfig arch = model_config(c, base.front().dim);
  ToyModel zs = pretrain(arch, train_config(c, "pretrain"), base);
  Checkpoint ck = model_to_checkpoint(zs);
  ck.meta()["model_id"] = "zero_shot";
  const auto path = zero_shot_path(c);
  save_checkpoint(ck, path);
  for (const auto& t : base) out << "zero-shot " << t.name << " val " << fmt(100 * evaluate(zs, t, Split::val), 2) << "\n";
  out << "wrote " << path.string() << "\n";
  return zs;
}

inline ToyModel zero_shot(const Config& c, const std::map<std::string, TaskDataset>& all, bool allow_pretrain,
                          std::ostream& out) {
  const auto path = zero_shot_path(c);
  if (fs::exists(path)) return model_from_checkpoint(load_checkpoint(path));
  if (!c.str("zero_shot").empty()) throw ConfigError("zero_shot checkpoint '" + path.string() + "' does not exist");
  if (allow_pretrain) return run_pretrain(c, all, out);
  throw Error(Errc::missing_data, "no zero-shot checkpoint at " + path.string() + " (run pretrain or pass --pretrain)");
}

inline Checkpoint tagged(const ToyModel& zs, Checkpoint w, const std::string& id) {
  write_arch_meta(zs.arch, w.meta());
  w.meta()["model_id"] = id;
  return w;
}

// ---------------------------------------------------------------------------

inline int cmd_gen_tasks(const Config& c, std::ostream& out) {
  const auto parts = c.partition();
  if (parts.empty()) throw ConfigError("missing required key 'task.<name>' (no tasks declared)");
  const auto tasks = generate_tasks(task_gen_config(c), parts);
  const fs::path dir = out_dir(c) / "tasks";
  for (const auto& t : tasks) {
    io::atomic_write(dir / (t.name + ".csv"), task_to_csv(t));
    out << "task " << t.name << ": " << t.class_ids.size() << " classes, " << t.size() << " examples\n";
  }
  if (const auto name = c.str("split"); !name.empty()) {
    auto it = std::find_if(tasks.begin(), tasks.end(), [&](const TaskDataset& t) { return t.name == name; });
    if (it == tasks.end()) throw ConfigError("key 'split' names unknown task '" + name + "'");
    const auto sp = split_task(*it, c.count("split_seed"));
    io::atomic_write(dir / (sp.a.name + ".csv"), task_to_csv(sp.a));
    io::atomic_write(dir / (sp.b.name + ".csv"), task_to_csv(sp.b));
    out << "split " << name << ": " << sp.a.class_ids.size() << " / " << sp.b.class_ids.size() << " classes\n";
  }
  out << "wrote " << dir.string() << "\n";
  return kExitOk;
}

inline int cmd_pretrain(const Config& c, std::ostream& out) {
  run_pretrain(c, load_tasks(c), out);
  return kExitOk;
}

inline int cmd_finetune(const Config& c, std::ostream& out) {
  const auto all = load_tasks(c);
  const ToyModel zs = zero_shot(c, all, false, out);
  const auto patching = role_tasks(c, all, "patching");
  const PatchSpec spec = patch_spec(c);
  const bool baselines = c.flag("baselines");
  if (baselines && spec.train.snapshot_every == 0) throw ConfigError("baselines need finetune.snapshot_every > 0");
  std::vector<TaskDataset> supported;
  if (baselines) supported = role_tasks(c, all, "supported");

  for (std::size_t i = 0; i < patching.size(); ++i) {
    const auto& t = patching[i];
    TrainConfig tc = spec.train;
    tc.seed = spec.train.seed + i;
    const auto rec = finetune(zs, t, tc);
    const auto path = out_dir(c) / ("finetuned_" + t.name + ".ckpt");
    save_checkpoint(tagged(zs, rec.final_weights, "finetuned_" + t.name), path);
    out << "finetuned " << t.name << ": val " << fmt(100 * evaluate(ToyModel{zs.arch, rec.final_weights}, t, Split::val), 2)
        << " (zero-shot " << fmt(100 * evaluate(zs, t, Split::val), 2) << ")\n";

    if (!baselines) continue;
    const TaskDataset supp = supported.size() == 1 ? supported[0] : merge_tasks(supported, "supported");
    BaselineOptions opts;
    opts.ema_decay = c.num("baseline.ema_decay");
    try {
      opts.split = parse_split(c.str("baseline.split"));
    } catch (const Error& e) {
      throw ConfigError(std::string("key 'baseline.split': ") + e.what());
    }
    const auto fr = baseline_frontiers(zs, t, supp, tc, opts);
    ojson summary = ojson::object();
    for (const auto& [name, lf] : fr) {
      io::atomic_write(out_dir(c) / "baselines" / t.name / (name + ".csv"), frontier_to_csv(lf.frontier));
      summary[name] = {{"sweep", lf.sweep},
                       {"labels", lf.labels},
                       {"points", frontier_to_json(lf.frontier)},
                       {"distance_to_endpoints", distance_to_endpoints(lf.frontier)},
                       {"distance_to_optimal", distance_to_optimal(lf.frontier)},
                       {"path_correction_cost", path_correction_cost(lf.frontier)}};
      out << "  baseline " << name << ": distance_to_optimal " << fmt(distance_to_optimal(lf.frontier)) << "\n";
    }
    write_json(out_dir(c) / "baselines" / t.name / "baselines.json", {{"task", t.name}, {"baselines", summary}});
  }
  return kExitOk;
}

// <stem>.json plus the patched checkpoint <ckpt>.ckpt.
inline void write_patch_result(const fs::path& dir, const std::string& stem, const std::string& ckpt, const ToyModel& zs,
                               const PatchResult& r, const ojson& config) {
  ojson body = patch_result_to_json(r);
  body["checkpoint"] = ckpt + ".ckpt";
  body["config"] = config;
  write_json(dir / (stem + ".json"), std::move(body));
  save_checkpoint(tagged(zs, r.patched, ckpt), dir / (ckpt + ".ckpt"));
}

inline int cmd_patch(const Config& c, bool allow_pretrain, std::ostream& out) {
  const auto all = load_tasks(c);
  const auto supported = role_tasks(c, all, "supported");
  const auto patching = role_tasks(c, all, "patching");
  const PatchSpec spec = patch_spec(c);
  const ToyModel zs = zero_shot(c, all, allow_pretrain, out);
  const fs::path dir = out_dir(c);
  const ojson config = c.values();

  if (c.flag("broad_transfer")) {
    std::vector<BroadTransferReport> rows;
    ojson details = ojson::array();
    for (const auto& t : patching) {
      const auto sp = split_task(t, c.count("split_seed"));
      rows.push_back(broad_transfer_eval(zs, sp.a, sp.b, supported, spec, t.name));
      const auto& r = rows.back();
      details.push_back({{"task", r.task},
                         {"task_a", sp.a.name},
                         {"task_b", sp.b.name},
                         {"classes_a", sp.a.class_ids},
                         {"classes_b", sp.b.class_ids},
                         {"alpha", r.patch.coeffs.values},
                         {"unpatched_B", r.unpatched_b},
                         {"patched_B", r.patched_b},
                         {"delta", r.delta}});
      out << "broad transfer " << r.task << ": B " << fmt(r.unpatched_b, 2) << " -> " << fmt(r.patched_b, 2) << "\n";
    }
    io::atomic_write(dir / "broad_transfer.csv", broad_transfer_to_csv(rows));
    write_json(dir / "broad_transfer.json", {{"rows", details}, {"config", config}});
    return kExitOk;
  }

  if (spec.strategy == Strategy::sequential) {
    const auto res = patch_sequential(zs, patching, supported, spec);
    ojson seeds = ojson::array();
    for (const auto& r : res.per_seed) {
      const std::string stem = "report_seed" + std::to_string(*r.order_seed);
      write_patch_result(dir, stem, "patched_seed" + std::to_string(*r.order_seed), zs, r, config);
      for (std::size_t i = 0; i < r.frontiers.size(); ++i) {
        io::atomic_write(dir / (stem + "_step" + std::to_string(i) + "_frontier.csv"), frontier_to_csv(r.frontiers[i].frontier));
      }
      std::vector<std::vector<double>> steps;
      for (const auto& p : r.provenance) steps.push_back(p.coeffs);
      seeds.push_back({{"seed", *r.order_seed}, {"order", r.order}, {"step_coefficients", steps},
                       {"combined_test", r.combined_test()}, {"file", stem + ".json"}});
      out << "seed " << *r.order_seed << ": combined test " << fmt(r.combined_test(), 2) << "\n";
    }
    write_json(dir / "report.json", {{"strategy", "sequential"},
                                     {"interpolate", spec.interpolate},
                                     {"accuracies", accuracies_to_json(res.averaged)},
                                     {"combined_test", res.combined_test()},
                                     {"per_seed", seeds},
                                     {"config", config}});
    out << "averaged combined test " << fmt(res.combined_test(), 2) << "\n";
    return kExitOk;
  }

  const auto r = patch(zs, patching, supported, spec);
  write_patch_result(dir, "report", "patched", zs, r, config);
  if (!r.frontiers.empty()) io::atomic_write(dir / "frontier.csv", frontier_to_csv(r.frontiers.front().frontier));
  out << "coefficients";
  for (double a : r.coeffs.values) out << " " << text::format_number(a);
  out << "\ncombined test " << fmt(r.combined_test(), 2) << "\n";
  for (const auto& a : r.accuracies) {
    out << "  " << a.role << " " << a.task << ": test " << fmt(a.test, 2) << " (zero-shot " << fmt(a.zero_shot_test, 2) << ")\n";
  }
  return kExitOk;
}

struct MetricsArgs {
  std::vector<std::string> frontiers;
  std::vector<std::string> checkpoints;
  std::vector<std::string> reps;
  std::string out;
};

inline int cmd_metrics(const MetricsArgs& a, std::ostream& out) {
  if (a.frontiers.empty() && a.checkpoints.empty() && a.reps.empty()) {
    throw ConfigError("metrics needs --frontier, --checkpoints or --reps");
  }
  ojson j = ojson::object();
  ojson fr = ojson::array();
  for (const auto& path : a.frontiers) {
    const Frontier f = frontier_from_csv(io::read_file(path));
    const double de = distance_to_endpoints(f), dopt = distance_to_optimal(f), pc = path_correction_cost(f);
    out << "frontier " << path << "\n"
        << "  distance_to_endpoints " << fmt(de) << "\n"
        << "  distance_to_optimal   " << fmt(dopt) << "\n"
        << "  path_correction_cost  " << fmt(pc) << "\n";
    fr.push_back({{"file", path}, {"distance_to_endpoints", de}, {"distance_to_optimal", dopt}, {"path_correction_cost", pc}});
  }
  if (!fr.empty()) j["frontiers"] = fr;
  if (!a.checkpoints.empty()) {
    const auto x = load_checkpoint(a.checkpoints.at(0)), y = load_checkpoint(a.checkpoints.at(1));
    const double cs = cosine_similarity(x, y), l1 = l1_mean_distance(x, y);
    out << "checkpoints " << a.checkpoints[0] << " " << a.checkpoints[1] << "\n"
        << "  cosine_similarity " << fmt(cs, 6) << "\n"
        << "  l1_mean_distance  " << fmt(l1, 6) << "\n";
    j["checkpoints"] = {{"a", a.checkpoints[0]}, {"b", a.checkpoints[1]}, {"cosine_similarity", cs}, {"l1_mean_distance", l1}};
  }
  if (!a.reps.empty()) {
    const auto x = rep_matrix_from_csv(io::read_file(a.reps.at(0))), y = rep_matrix_from_csv(io::read_file(a.reps.at(1)));
    const double k = cka(x, y);
    out << "representations " << a.reps[0] << " " << a.reps[1] << "\n  cka " << fmt(k, 6) << "\n";
    j["representations"] = {{"a", a.reps[0]}, {"b", a.reps[1]}, {"cka", k}};
  }
  if (!a.out.empty()) write_json(a.out, std::move(j));
  return kExitOk;
}

inline int cmd_report(const fs::path& dir, std::ostream& out) {
  if (!fs::is_directory(dir)) throw Error(Errc::missing_data, "results directory '" + dir.string() + "' does not exist");
  struct Series {
    std::string name;
    Frontier frontier;
  };
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Series> series;
  for (const auto& f : files) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(io::read_file(f));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::parse, f.string() + ": " + e.what());
    }
    if (!j.contains("frontiers")) continue;
    for (const auto& fr : j["frontiers"]) {
      series.push_back({f.stem().string() + "/" + fr.at("name").get<std::string>(), frontier_from_json(fr.at("points"))});
    }
  }
  if (series.empty()) throw Error(Errc::missing_data, "no patch results with frontiers in '" + dir.string() + "'");

  const fs::path plot = dir / "plot";
  std::string csv = "series,alpha,x,y\n";
  ojson bundle_series = ojson::array();
  for (const auto& s : series) {
    for (const auto& p : s.frontier.points()) {
      csv += s.name + ',' + text::format_number(p.alpha) + ',' + text::format_number(p.supported_acc) + ',' +
             text::format_number(p.patching_acc) + '\n';
    }
    bundle_series.push_back({{"name", s.name}, {"points", frontier_to_json(s.frontier)}});
  }
  io::atomic_write(plot / "series.csv", csv);

  // Pointwise mean over the series that share the most common alpha set.
  std::map<std::vector<double>, std::vector<const Frontier*>> by_alphas;
  for (const auto& s : series) {
    std::vector<double> alphas;
    for (const auto& p : s.frontier.points()) alphas.push_back(p.alpha);
    by_alphas[alphas].push_back(&s.frontier);
  }
  auto best = std::max_element(by_alphas.begin(), by_alphas.end(),
                               [](const auto& a, const auto& b) { return a.second.size() < b.second.size(); });
  std::vector<FrontierPoint> mean_pts;
  for (std::size_t i = 0; i < best->first.size(); ++i) {
    double x = 0, y = 0;
    for (const auto* f : best->second) {
      x += f->points()[i].supported_acc;
      y += f->points()[i].patching_acc;
    }
    const double n = static_cast<double>(best->second.size());
    mean_pts.push_back({best->first[i], x / n, y / n});
  }
  const Frontier averaged(std::move(mean_pts));
  io::atomic_write(plot / "averaged.csv", frontier_to_csv(averaged));

  std::string bcsv = "method,task,alpha,x,y\n";
  ojson bundle_baselines = ojson::array();
  if (fs::is_directory(dir / "baselines")) {
    std::vector<fs::path> bfiles;
    for (const auto& e : fs::recursive_directory_iterator(dir / "baselines")) {
      if (e.path().extension() == ".csv") bfiles.push_back(e.path());
    }
    std::sort(bfiles.begin(), bfiles.end());
    for (const auto& b : bfiles) {
      const auto method = b.stem().string(), task = b.parent_path().filename().string();
      const Frontier f = frontier_from_csv(io::read_file(b));
      for (const auto& p : f.points()) {
        bcsv += method + ',' + task + ',' + text::format_number(p.alpha) + ',' + text::format_number(p.supported_acc) + ',' +
                text::format_number(p.patching_acc) + '\n';
      }
      bundle_baselines.push_back({{"method", method}, {"task", task}, {"points", frontier_to_json(f)}});
    }
  }
  if (!bundle_baselines.empty()) io::atomic_write(plot / "baselines.csv", bcsv);

  write_json(plot / "bundle.json", {{"series", bundle_series},
                                    {"averaged", {{"members", best->second.size()}, {"points", frontier_to_json(averaged)}}},
                                    {"baselines", bundle_baselines}});
  out << series.size() << " series, " << best->second.size() << " averaged, " << bundle_baselines.size()
      << " baseline frontiers\nwrote " << plot.string() << "\n";
  return kExitOk;
}

}  // namespace detail

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"paintkit: weight interpolation patching on a toy open-vocabulary classifier", "paintkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  std::string config_path;
  bool pretrain_flag = false;
  std::string results_dir;
  detail::MetricsArgs margs;

  auto with_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "key=value configuration file");
    sub->allow_extras();
    sub->footer("Any config key can be overridden with --key value (dashes or underscores).");
    return sub;
  };
  auto* gen = with_config(app.add_subcommand("gen-tasks", "generate task CSVs"));
  auto* pre = with_config(app.add_subcommand("pretrain", "train the zero-shot model"));
  auto* fin = with_config(app.add_subcommand("finetune", "fine-tune on each patching task"));
  auto* pat = with_config(app.add_subcommand("patch", "run a patching strategy"));
  pat->add_flag("--pretrain", pretrain_flag, "pretrain when no zero-shot checkpoint exists");
  auto* met = app.add_subcommand("metrics", "frontier metrics, checkpoint similarity and CKA");
  met->add_option("-f,--frontier", margs.frontiers, "frontier CSV (alpha,supported_acc,patching_acc)");
  met->add_option("--checkpoints", margs.checkpoints, "two checkpoints to compare")->expected(2);
  met->add_option("--reps", margs.reps, "two representation CSVs for CKA")->expected(2);
  met->add_option("-o,--out", margs.out, "also write the metrics as JSON");
  auto* rep = app.add_subcommand("report", "collect results into plot data");
  rep->add_option("results_dir", results_dir, "directory holding patch results")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    auto config = [&](CLI::App* sub) {
      Config c = config_path.empty() ? Config{} : Config::load(config_path);
      detail::apply_overrides(c, sub->remaining());
      return c;
    };
    if (gen->parsed()) return detail::cmd_gen_tasks(config(gen), out);
    if (pre->parsed()) return detail::cmd_pretrain(config(pre), out);
    if (fin->parsed()) return detail::cmd_finetune(config(fin), out);
    if (pat->parsed()) return detail::cmd_patch(config(pat), pretrain_flag, out);
    if (met->parsed()) return detail::cmd_metrics(margs, out);
    if (rep->parsed()) return detail::cmd_report(results_dir, out);
  } catch (const ConfigError& e) {
    err << "paintkit: config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "paintkit: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "paintkit: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace paintkit::cli
