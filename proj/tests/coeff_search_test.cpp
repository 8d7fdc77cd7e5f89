#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "paintkit/coeff_search.hpp"
#include "test_util.hpp"

using namespace paintkit;

namespace {

void expect_consistent(const SearchResult& r) {
  ASSERT_FALSE(r.trace.empty());
  EXPECT_EQ(r.evaluations, r.trace.size());
  double mx = -INFINITY;
  bool found = false;
  for (const auto& e : r.trace) {
    mx = std::max(mx, e.value);
    if (e.coeffs == r.best && e.value == r.best_value) found = true;
  }
  EXPECT_EQ(r.best_value, mx);
  EXPECT_TRUE(found);
}

double pinned_concave(const CoeffVector& c) {
  const double a = c.values[0] - 0.3, b = c.values[1] - 0.69;
  return -(a * a) - (b * b);
}

}  // namespace

TEST(Grid, DefaultGridHas21ExactPoints) {
  auto g = default_grid();
  ASSERT_EQ(g.size(), 21u);
  EXPECT_EQ(g.front(), 0.0);
  EXPECT_EQ(g.back(), 1.0);
  EXPECT_EQ(g[7], 0.35);
  EXPECT_EQ(parse_grid("0:1:0.05"), g);
  EXPECT_EQ(parse_grid("0, 0.5,1"), (std::vector<double>{0, 0.5, 1}));
  EXPECT_THROW(parse_grid("0:1"), Error);
}

TEST(GridSearch1d, ConstantObjectivePicksSmallest) {
  SearchObjective obj([](const CoeffVector&) { return 1.0; });
  auto g = default_grid();
  std::reverse(g.begin(), g.end());
  auto r = grid_search_1d(obj, g);
  EXPECT_EQ(r.best.values[0], 0.0);
  EXPECT_EQ(obj.evaluations(), 21u);
  expect_consistent(r);
}

TEST(GridSearch1d, UniqueMaximizer) {
  SearchObjective obj([](const CoeffVector& c) { return -(c.values[0] - 0.35) * (c.values[0] - 0.35); });
  auto r = grid_search_1d(obj, default_grid());
  EXPECT_EQ(r.best.values[0], 0.35);
  expect_consistent(r);
}

TEST(GridSearch1d, MnistSweepCombinedAccuracyPicksFirstTiedMaximizer) {
  const auto& rows = oracle::vitl14_mnist_sweep();
  SearchObjective obj([&](const CoeffVector& c) {
    const auto& row = rows[static_cast<std::size_t>(std::llround(c.values[0] * 20))];
    return (row.x + row.y) / 2;
  });
  auto r = grid_search_1d(obj, default_grid());
  EXPECT_EQ(r.best.values[0], 0.30);
  EXPECT_EQ(r.best_value, 87.5);
  // enumeration: first row attaining the maximum
  double best = -1;
  double first = -1;
  for (const auto& row : rows) {
    if ((row.x + row.y) / 2 > best) {
      best = (row.x + row.y) / 2;
      first = row.alpha;
    }
  }
  EXPECT_EQ(r.best.values[0], first);
}

TEST(GridSearch1d, Errors) {
  SearchObjective obj([](const CoeffVector&) { return 0.0; });
  EXPECT_THROW(grid_search_1d(obj, std::vector<double>{}), Error);
  EXPECT_THROW(grid_search_1d(obj, std::vector<double>{0.0, 1.5}), Error);
}

TEST(UniformSearch, ReducesToLerpAndSpreadsBeta) {
  auto zs = test::single("w", {0.0});
  std::vector<Checkpoint> fts = {test::single("w", {1.0}), test::single("w", {3.0})};
  std::vector<double> seen;
  auto eval = [&](const Checkpoint& c) {
    seen.push_back(c.at("w")[0]);
    return -(c.at("w")[0] - 1.2) * (c.at("w")[0] - 1.2);
  };
  auto r = uniform_search_parallel(zs, fts, eval, default_grid());
  ASSERT_EQ(seen.size(), 21u);
  EXPECT_EQ(seen[0], 0.0);  // beta = 0 is exactly the zero-shot model
  EXPECT_DOUBLE_EQ(r.best.sum(), 0.6);
  EXPECT_DOUBLE_EQ(r.best.values[0], 0.3);
  EXPECT_DOUBLE_EQ(r.best.values[1], 0.3);
  expect_consistent(r);

  // k = 1 is grid search over lerp
  std::vector<Checkpoint> one = {fts[1]};
  auto r1 = uniform_search_parallel(zs, one, eval, default_grid());
  SearchObjective direct([&](const CoeffVector& c) { return eval(lerp(zs, fts[1], c.values[0])); });
  auto g = grid_search_1d(direct, default_grid());
  EXPECT_EQ(r1.best, g.best);
  EXPECT_EQ(r1.best_value, g.best_value);

  std::vector<Checkpoint> bad = {test::single("v", {1.0})};
  EXPECT_THROW(uniform_search_parallel(zs, bad, eval, default_grid()), Error);
}

TEST(Projection, LandsInFeasibleSet) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.5, 1.5);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> x(1 + rng() % 5);
    for (auto& v : x) v = u(rng);
    auto p = project_to_feasible(x);
    double s = 0;
    for (double v : p) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      s += v;
    }
    EXPECT_LE(s, 1.0 + kCoeffSumSlack);
  }
  EXPECT_EQ(project_to_feasible({0.5, 0.5}), (std::vector<double>{0.5, 0.5}));
  auto thirds = project_to_feasible({0.5, 0.5, 0.5});
  for (double v : thirds) EXPECT_NEAR(v, 1.0 / 3, 1e-15);
}

TEST(BlackBox, BudgetOneReturnsInit) {
  SearchObjective obj(pinned_concave);
  auto r = black_box_search(obj, 2, {.budget = 1});
  EXPECT_EQ(r.evaluations, 1u);
  EXPECT_EQ(r.best.values, (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(r.best_value, pinned_concave(CoeffVector{{0.5, 0.5}}));

  SearchObjective obj3([](const CoeffVector& c) { return c.sum(); });
  auto r3 = black_box_search(obj3, 3, {.budget = 1});
  EXPECT_NEAR(r3.best.sum(), 1.0, 1e-12);  // infeasible init is projected
}

TEST(BlackBox, ConcaveObjectiveMatchesExhaustiveOracle) {
  // exhaustive 0.01 grid oracle over the feasible triangle
  double oracle_best = -INFINITY;
  for (int i = 0; i <= 100; ++i)
    for (int j = 0; i + j <= 100; ++j) oracle_best = std::max(oracle_best, pinned_concave(CoeffVector{{i / 100.0, j / 100.0}}));

  for (std::uint64_t seed : {0u, 1u, 2u, 3u}) {
    std::size_t calls = 0;
    SearchObjective obj([&](const CoeffVector& c) {
      ++calls;
      EXPECT_GE(c.values[0], 0.0);
      EXPECT_GE(c.values[1], 0.0);
      EXPECT_LE(c.sum(), 1.0 + kCoeffSumSlack);
      return pinned_concave(c);
    });
    auto r = black_box_search(obj, 2, {.budget = 50, .seed = seed});
    EXPECT_LE(calls, 50u);
    EXPECT_NEAR(r.best_value, oracle_best, 1e-2);
    expect_consistent(r);
    // best-so-far along the trace never decreases and ends at best_value
    double running = -INFINITY;
    for (const auto& e : r.trace) running = std::max(running, e.value);
    EXPECT_EQ(running, r.best_value);
  }
}

TEST(BlackBox, WarmStartIsFirstEvaluation) {
  SearchObjective obj(pinned_concave);
  auto r = black_box_search(obj, 2, {.budget = 5, .start = {0.1, 0.2}});
  EXPECT_EQ(r.trace.front().coeffs.values, (std::vector<double>{0.1, 0.2}));
  EXPECT_GE(r.best_value, pinned_concave(CoeffVector{{0.1, 0.2}}));
  EXPECT_THROW(black_box_search(obj, 2, {.start = {0.1}}), Error);
}

TEST(BlackBox, OneCoefficientAgreesWithGrid) {
  auto f = [](const CoeffVector& c) { return std::sin(3.0 * c.values[0]) - c.values[0] * c.values[0]; };
  SearchObjective grid_obj(f), bb_obj(f);
  auto g = grid_search_1d(grid_obj, default_grid());
  auto b = black_box_search(bb_obj, 1, {});
  EXPECT_LE(std::abs(b.best.values[0] - g.best.values[0]), 0.05);
}

TEST(BlackBox, DeterministicPerSeed) {
  SearchObjective a(pinned_concave), b(pinned_concave);
  auto r1 = black_box_search(a, 2, {.seed = 9});
  auto r2 = black_box_search(b, 2, {.seed = 9});
  ASSERT_EQ(r1.trace.size(), r2.trace.size());
  for (std::size_t i = 0; i < r1.trace.size(); ++i) EXPECT_EQ(r1.trace[i].coeffs, r2.trace[i].coeffs);
}

TEST(Exhaustive2d, FeasibilityAndTieBreak) {
  SearchObjective obj([](const CoeffVector& c) { return c.sum(); });
  auto r = exhaustive_search_2d(obj, std::vector<double>{0.0, 1.0});
  ASSERT_EQ(r.trace.size(), 3u);
  EXPECT_EQ(r.trace[0].coeffs.values, (std::vector<double>{0, 0}));
  EXPECT_EQ(r.trace[1].coeffs.values, (std::vector<double>{0, 1}));
  EXPECT_EQ(r.trace[2].coeffs.values, (std::vector<double>{1, 0}));

  SearchObjective obj2([](const CoeffVector& c) { return c.sum(); });
  auto r2 = exhaustive_search_2d(obj2, std::vector<double>{0.0, 0.5, 1.0});
  EXPECT_EQ(r2.best.values, (std::vector<double>{0, 1}));
  EXPECT_THROW(exhaustive_search_2d(obj2, std::vector<double>{}), Error);
}

TEST(Exhaustive2d, MatchesTableArgmax) {
  const double table[3][3] = {{0.1, 0.7, 0.3}, {0.65, 0.9, 0.0}, {0.2, 0.0, 0.0}};
  const std::vector<double> grid = {0.0, 0.5, 1.0};
  SearchObjective obj([&](const CoeffVector& c) {
    return table[std::llround(c.values[0] * 2)][std::llround(c.values[1] * 2)];
  });
  auto r = exhaustive_search_2d(obj, grid);
  // by hand: feasible cells are those with i + j <= 2; the largest is 0.9 at (0.5, 0.5)
  EXPECT_EQ(r.best.values, (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(r.best_value, 0.9);
  EXPECT_EQ(r.trace.size(), 6u);
}

TEST(SearchResultJson, CarriesBestAndTrace) {
  SearchObjective obj([](const CoeffVector& c) { return c.values[0]; });
  auto r = grid_search_1d(obj, std::vector<double>{0.0, 1.0});
  auto j = search_result_to_json(r);
  EXPECT_EQ(j["best"][0], 1.0);
  EXPECT_EQ(j["trace"].size(), 2u);
  EXPECT_EQ(j["evaluations"], 2);
}
