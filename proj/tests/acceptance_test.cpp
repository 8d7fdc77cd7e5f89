// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only if
// every criterion passes. Tolerances and runtime limits are pinned below.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "paintkit/experiment.hpp"
#include "paintkit/patch_pipeline.hpp"
#include "test_util.hpp"
#include "toy_util.hpp"

using namespace paintkit;

namespace {

struct Check {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      detail = what;
    }
  }
};

double max_abs_diff(const Checkpoint& a, const Checkpoint& b) {
  const auto x = flatten(a).values, y = flatten(b).values;
  if (x.size() != y.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

template <class F>
Errc code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::io;
}

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1e", v);
  return buf;
}

// ---------------------------------------------------------------------------

Check checkpoint_round_trip() {
  Check c;
  std::mt19937_64 rng(101);
  test::TempDir dir;
  for (int i = 0; i < 200; ++i) {
    const auto ck = test::random_checkpoint(rng, i % 2 ? DType::f32 : DType::f64);
    const auto path = dir / ("c" + std::to_string(i) + ".ckpt");
    save_checkpoint(ck, path);
    const auto back = load_checkpoint(path);
    c.require(bitwise_equal(ck, back) && ck.meta() == back.meta(), "round-trip mismatch at instance " + std::to_string(i));
    c.require(encode_checkpoint(back) == encode_checkpoint(ck), "re-encoding differs at instance " + std::to_string(i));
  }

  Checkpoint small;
  small.add("w", Tensor({2, 2}, {1, 2, 3, 4}));
  const auto good = encode_checkpoint(small);
  auto bad_magic = good;
  bad_magic[0] = 'X';
  c.require(code_of([&] { decode_checkpoint(bad_magic); }) == Errc::bad_magic, "bad magic not detected");
  for (std::size_t cut : {std::size_t{1}, std::size_t{3}, good.size() / 2, good.size() - 1}) {
    c.require(code_of([&] { decode_checkpoint(good.substr(0, good.size() - cut)); }) == Errc::truncated,
              "truncation by " + std::to_string(cut) + " bytes not detected");
  }
  // first dim byte follows magic(8) version(4) count(4) namelen(2) name(1) dtype(1) rank(1)
  auto shrunk = good;
  shrunk[21] = 1;
  c.require(code_of([&] { decode_checkpoint(shrunk); }) == Errc::shape_mismatch, "shape mismatch not detected");
  io::atomic_write(dir / "bad.ckpt", bad_magic);
  c.require(code_of([&] { load_checkpoint(dir / "bad.ckpt"); }) == Errc::bad_magic, "bad magic file not detected");
  if (c.ok) c.detail = "200 checkpoints bit-exact, 7 malformed fixtures rejected";
  return c;
}

Check interpolation_identities() {
  Check c;
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_sym = 0.0, worst_avg = 0.0;
  for (int i = 0; i < 100; ++i) {
    Checkpoint zs;
    do zs = test::random_checkpoint(rng); while (zs.empty());
    const auto a = test::random_like(rng, zs), b = test::random_like(rng, zs);
    c.require(bitwise_equal(lerp(a, b, 0.0), a) && bitwise_equal(lerp(a, b, 1.0), b), "lerp endpoints not exact");
    const double alpha = u(rng);
    worst_sym = std::max(worst_sym, max_abs_diff(lerp(a, b, alpha), lerp(b, a, 1.0 - alpha)));

    const std::size_t k = 1 + rng() % 5;
    std::vector<Checkpoint> fts;
    for (std::size_t j = 0; j < k; ++j) fts.push_back(test::random_like(rng, zs));
    const double beta = u(rng);
    const std::vector<double> alphas(k, beta / static_cast<double>(k));
    worst_avg = std::max(worst_avg, max_abs_diff(multi_combine(zs, fts, alphas), lerp(zs, average(fts), beta)));
  }
  c.require(worst_sym <= 1e-12, "lerp symmetry error " + std::to_string(worst_sym));
  c.require(worst_avg <= 1e-10, "equal-coefficient combination error " + std::to_string(worst_avg));
  if (c.ok) c.detail = "100 instances, symmetry err " + sci(worst_sym) + ", average err " + sci(worst_avg);
  return c;
}

Check table_fixtures() {
  Check c;
  const double supp[] = {oracle::kB32Supported};
  const double combined = combined_accuracy(supp, oracle::b32_patching_alpha0());
  c.require(std::abs(combined - 54.4) <= 0.05, "combined accuracy " + num(combined));

  const auto f = frontier_from_csv(io::read_file(std::string(PAINTKIT_DATA_DIR) + "/vitl14_mnist_sweep.csv"));
  const auto& rows = oracle::vitl14_mnist_sweep();
  c.require(f.size() == 21, "fixture has " + std::to_string(f.size()) + " rows");
  const double de = distance_to_endpoints(f), dopt = distance_to_optimal(f);
  c.require(std::abs(de - oracle::enum_distance_to_endpoints(rows)) <= 1e-9 && std::abs(de - 0.15) <= 1e-9,
            "distance_to_endpoints " + num(de, 12));
  c.require(std::abs(dopt - oracle::enum_distance_to_optimal(rows)) <= 1e-9 && std::abs(dopt - 0.20) <= 1e-9,
            "distance_to_optimal " + num(dopt, 12));

  SearchObjective obj([&](const CoeffVector& a) {
    for (const auto& p : f.points())
      if (p.alpha == a.values[0]) return (p.supported_acc + p.patching_acc) / 2;
    throw Error(Errc::out_of_range, "alpha off the fixture grid");
  });
  const auto r = grid_search_1d(obj, default_grid());
  c.require(r.best.values[0] == 0.30, "alpha* = " + num(r.best.values[0], 2));
  if (c.ok) c.detail = "combined " + num(combined, 2) + ", d_end " + num(de) + ", d_opt " + num(dopt) + ", alpha* 0.30";
  return c;
}

Check metric_oracles() {
  Check c;
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_pc = 0.0;
  for (int i = 0; i < 50; ++i) {
    std::vector<oracle::Point> pts;
    for (int j = 0; j <= 20; ++j) pts.push_back({j / 20.0, u(rng), u(rng)});
    pts.front().x = 0.9 + 0.1 * u(rng);
    pts.back().y = 0.9 + 0.1 * u(rng);
    std::vector<FrontierPoint> fp;
    for (const auto& p : pts) fp.push_back({p.alpha, p.x, p.y});
    const double got = path_correction_cost(Frontier(fp, AccuracyUnit::fraction));
    worst_pc = std::max(worst_pc, std::abs(got - oracle::sampled_path_correction_cost(pts, 1.0)));
  }
  c.require(worst_pc <= 1e-6, "path correction cost error " + std::to_string(worst_pc));

  auto to_rep = [](const Eigen::MatrixXd& m) {
    std::vector<double> d;
    for (int r = 0; r < m.rows(); ++r)
      for (int k = 0; k < m.cols(); ++k) d.push_back(m(r, k));
    return RepMatrix(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()), d);
  };
  std::normal_distribution<double> g;
  double worst_cka = 0.0, worst_inv = 0.0;
  for (int i = 0; i < 50; ++i) {
    const int n = 10 + static_cast<int>(rng() % 30), p = 2 + static_cast<int>(rng() % 8), q = 2 + static_cast<int>(rng() % 8);
    Eigen::MatrixXd a(n, p), b(n, q);
    for (int r = 0; r < n; ++r) {
      for (int k = 0; k < p; ++k) a(r, k) = g(rng);
      for (int k = 0; k < q; ++k) b(r, k) = g(rng);
    }
    worst_cka = std::max(worst_cka, std::abs(cka(to_rep(a), to_rep(b)) - oracle::eigen_cka(a, b)));
    const Eigen::MatrixXd rotated = a * oracle::random_orthogonal(rng, p);
    const Eigen::MatrixXd scaled = a * (0.1 + 10 * u(rng));
    for (const Eigen::MatrixXd* m : {static_cast<const Eigen::MatrixXd*>(&a), &rotated, &scaled}) worst_inv = std::max(worst_inv, std::abs(cka(to_rep(a), to_rep(*m)) - 1.0));
  }
  c.require(worst_cka <= 1e-9, "CKA oracle error " + std::to_string(worst_cka));
  c.require(worst_inv <= 1e-9, "CKA invariance error " + std::to_string(worst_inv));
  if (c.ok) {
    c.detail = "path cost err " + sci(worst_pc) + ", CKA err " + sci(worst_cka) + ", invariance err " + sci(worst_inv);
  }
  return c;
}

Check gradient_check() {
  Check c;
  std::mt19937_64 rng(505);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) worst = std::max(worst, test::gradient_check_error(rng, i % 2 ? 0.3 : 0.0));
  c.require(worst < 1e-4, "relative error " + std::to_string(worst));
  if (c.ok) c.detail = "20 instances, worst relative error " + sci(worst);
  return c;
}

Check search_contracts() {
  Check c;
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    const double a = u(rng), b = u(rng), d = u(rng);
    auto f = [&](double x) { return a * x * x + b * x + d * std::sin(7 * x); };
    const auto grid = make_grid(0.0, 1.0, 0.01 * (1 + i % 5));
    SearchObjective obj([&](const CoeffVector& x) { return f(x.values[0]); });
    const auto r = grid_search_1d(obj, grid);
    double best = -INFINITY, arg = 0;
    for (double x : grid)
      if (f(x) > best) best = f(x), arg = x;
    c.require(obj.evaluations() == grid.size() && r.evaluations == grid.size(), "grid search evaluation count");
    c.require(r.best.values[0] == arg, "grid search argmax differs");
  }

  auto concave = [](const CoeffVector& x) {
    const double p = x.values[0] - 0.3, q = x.values[1] - 0.69;
    return -(p * p) - (q * q);
  };
  double oracle_best = -INFINITY;
  for (int i = 0; i <= 100; ++i)
    for (int j = 0; i + j <= 100; ++j) oracle_best = std::max(oracle_best, concave(CoeffVector{{i / 100.0, j / 100.0}}));
  bool feasible = true;
  SearchObjective obj([&](const CoeffVector& x) {
    feasible &= x.values[0] >= 0 && x.values[1] >= 0 && x.sum() <= 1 + kCoeffSumSlack;
    return concave(x);
  });
  const auto r = black_box_search(obj, 2, {.budget = 50});
  c.require(feasible, "black-box search left the feasible set");
  c.require(obj.evaluations() <= 50, "black-box budget exceeded");
  c.require(std::abs(r.best_value - oracle_best) <= 1e-2, "black-box gap " + std::to_string(oracle_best - r.best_value));
  if (c.ok) c.detail = "20 grids exact, black-box gap " + sci(oracle_best - r.best_value) + " in " + std::to_string(obj.evaluations()) + " evals";
  return c;
}

// Frozen from the first passing run of the pinned scenario (percent points).
// Each bound keeps 1 point of slack for floating-point drift across toolchains.
constexpr double kMaxSupportedDrop = 0.5;        // observed -0.50 (supported accuracy rose)
constexpr double kMinPatchingGain = 73.0;        // observed 74.00
constexpr double kMinSequentialMargin = 3.75;    // observed 4.78 (94.50 vs 89.72)
constexpr double kMaxJointSpecializedGap = 3.75; // observed 2.75 (96.75 vs 99.50)

Check core_phenomenon() {
  Check c;
  const auto cfg = Config::load(std::string(PAINTKIT_DATA_DIR) + "/toy_scenario.cfg");
  const auto all = load_tasks(cfg);
  const auto supported = select_tasks(all, cfg.names("supported"), "supported");
  const auto held = select_tasks(all, cfg.names("patching"), "patching");
  const auto three = select_tasks(all, {"t1", "t2", "t3"}, "patching");
  const ModelConfig arch = model_config(cfg, supported.front().dim);
  const ToyModel zs = pretrain(arch, train_config(cfg, "pretrain"), supported);
  PatchSpec spec = patch_spec(cfg);

  const auto single = patch_single(zs, held.front(), supported, spec);
  const auto& f = single.frontiers.front().frontier;
  const double x0 = f.zero_shot().supported_acc, y1 = f.fine_tuned().patching_acc;
  const FrontierPoint* hit = nullptr;
  for (const auto& p : f.points()) {
    if (p.supported_acc >= x0 - 2.0 && p.patching_acc >= y1 - 5.0) {
      hit = &p;
      break;
    }
  }
  c.require(hit != nullptr, "no alpha within 2 points of zero-shot and 5 of fine-tuned");

  const auto& s_acc = single.accuracies.at(0);
  const auto& p_acc = single.accuracies.at(1);
  const double drop = s_acc.zero_shot_test - s_acc.test, gain = p_acc.test - p_acc.zero_shot_test;
  std::printf("  single: alpha %.2f, supported drop %.2f, patching gain %.2f\n", single.coeffs.values[0], drop, gain);
  c.require(drop <= 2.0 && gain >= 20.0, "single patch drop " + num(drop, 2) + " gain " + num(gain, 2));
  c.require(drop <= kMaxSupportedDrop, "supported drop " + num(drop, 2) + " above frozen bound");
  c.require(gain >= kMinPatchingGain, "patching gain " + num(gain, 2) + " below frozen bound");

  spec.order_seeds = {0, 1, 2};
  const auto seq = patch_sequential(zs, three, supported, spec);
  PatchSpec plain = spec;
  plain.interpolate = false;
  const auto seq_ft = patch_sequential(zs, three, supported, plain);
  const double margin = seq.combined_test() - seq_ft.combined_test();
  std::printf("  sequential: patching %.2f vs fine-tuning %.2f\n", seq.combined_test(), seq_ft.combined_test());
  c.require(margin >= 0.0, "sequential patching below sequential fine-tuning by " + num(-margin, 2));
  c.require(margin >= kMinSequentialMargin, "sequential margin " + num(margin, 2) + " below frozen bound");

  const auto joint = patch_joint(zs, three, supported, spec);
  std::vector<double> spec_patch;
  for (std::size_t i = 0; i < three.size(); ++i) {
    const auto ft = finetune(zs, three[i], detail::train_config_for(spec, i));
    spec_patch.push_back(100.0 * evaluate(ToyModel{arch, ft.final_weights}, three[i], Split::test));
  }
  const double spec_supp[] = {s_acc.zero_shot_test};
  const double specialized = combined_accuracy(spec_supp, spec_patch);
  const double gap = specialized - joint.combined_test();
  std::printf("  joint: %.2f vs specialized %.2f\n", joint.combined_test(), specialized);
  c.require(gap <= kMaxJointSpecializedGap, "joint vs specialized gap " + num(gap, 2) + " above frozen bound");

  if (c.ok) {
    c.detail = "alpha " + num(hit->alpha, 2) + " at (" + num(hit->supported_acc, 1) + ", " + num(hit->patching_acc, 1) +
               "), sequential margin " + num(margin, 2) + ", joint gap " + num(gap, 2);
  }
  return c;
}

Check hygiene_and_reconstruction() {
  Check c;
  const ModelConfig arch{.input_dim = 6, .hidden = {24}, .embed_dim = 8};
  TaskGenConfig g{.seed = 11, .num_classes = 15, .dim = 6, .samples_per_class = 30, .noise_scale = 0.8};
  auto tasks = generate_tasks(g, {{"base", {0, 1, 2, 3, 4, 5}}, {"p1", {6, 7, 8}}, {"p2", {9, 10, 11}}, {"p3", {12, 13, 14}}});
  const std::vector<TaskDataset> supported{tasks[0]};
  const std::vector<TaskDataset> patching{tasks[1], tasks[2], tasks[3]};
  const ToyModel zs = pretrain(arch, {.iterations = 200, .batch_size = 32, .peak_lr = 1e-2, .warmup = 20}, supported);
  PatchSpec spec;
  spec.train = {.iterations = 60, .batch_size = 32, .peak_lr = 1e-2, .warmup = 6};
  spec.order_seeds = {0, 1};

  std::vector<PatchResult> results;
  results.push_back(patch_single(zs, patching[0], supported, spec));
  results.push_back(patch_joint(zs, patching, supported, spec));
  for (auto& r : patch_sequential(zs, patching, supported, spec).per_seed) results.push_back(std::move(r));
  spec.search = SearchMethod::uniform;
  results.push_back(patch_parallel(zs, patching, supported, spec));
  spec.search = SearchMethod::black_box;
  results.push_back(patch_parallel(zs, patching, supported, spec));
  const auto halves = split_task(patching[2], 5);
  results.push_back(broad_transfer_eval(zs, halves.a, halves.b, supported, spec).patch);

  std::size_t selection_reads = 0;
  for (const auto& r : results) {
    std::size_t last_selection = 0, first_report = r.access_log.size();
    for (std::size_t i = 0; i < r.access_log.size(); ++i) {
      const auto& e = r.access_log[i];
      if (e.phase == Phase::selection) {
        c.require(e.split == Split::val, "selection read " + std::string(to_string(e.split)) + " of " + e.task);
        last_selection = i;
        ++selection_reads;
      } else {
        c.require(e.split == Split::test, "report read " + std::string(to_string(e.split)) + " of " + e.task);
        first_report = std::min(first_report, i);
      }
    }
    c.require(first_report > last_selection, "test split read before selection finished");
    c.require(bitwise_equal(reconstruct(zs.weights, r), r.patched), "reconstruction differs for " + std::string(to_string(r.strategy)));
  }

  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto sp = split_task(tasks[0], seed);
    std::vector<int> both = sp.a.class_ids;
    both.insert(both.end(), sp.b.class_ids.begin(), sp.b.class_ids.end());
    const std::set<int> uniq(both.begin(), both.end());
    c.require(uniq.size() == both.size(), "split halves overlap for seed " + std::to_string(seed));
    c.require(std::vector<int>(uniq.begin(), uniq.end()) == tasks[0].class_ids, "split halves miss classes for seed " + std::to_string(seed));
    c.require(sp.a.size() + sp.b.size() == tasks[0].size(), "split loses examples for seed " + std::to_string(seed));
  }
  if (c.ok) {
    c.detail = std::to_string(results.size()) + " results reconstructed, " + std::to_string(selection_reads) +
               " selection reads all on val, 100 splits";
  }
  return c;
}

struct Criterion {
  int id;
  const char* name;
  double limit_s;
  std::function<Check()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "checkpoint round-trip", 10, checkpoint_round_trip},
      {2, "interpolation identities", 5, interpolation_identities},
      {3, "reference fixtures", 5, table_fixtures},
      {4, "metric oracles", 30, metric_oracles},
      {5, "gradient check", 30, gradient_check},
      {6, "search contracts", 10, search_contracts},
      {7, "core phenomenon at toy scale", 300, core_phenomenon},
      {8, "hygiene and reconstruction", 60, hygiene_and_reconstruction},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Check c;
    try {
      c = cr.run();
    } catch (const std::exception& e) {
      c = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.ok && secs > cr.limit_s) c = {false, "runtime " + num(secs, 1) + " s over " + num(cr.limit_s, 0) + " s"};
    std::printf("[%s] %d %s: %s (%.2f s)\n", c.ok ? "PASS" : "FAIL", cr.id, cr.name, c.detail.c_str(), secs);
    std::fflush(stdout);
    failed += c.ok ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
