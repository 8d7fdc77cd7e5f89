#pragma once

// Mixing-coefficient selection against a held-out objective (higher is
// better): 1D grid search, uniform search along the ray to the average of
// several fine-tuned models, a budgeted derivative-free search over k
// coefficients, and exhaustive search over coefficient pairs.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "paintkit/error.hpp"
#include "paintkit/text.hpp"
#include "paintkit/weight_store.hpp"

namespace paintkit {

struct CoeffVector {
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
  double sum() const noexcept { return std::accumulate(values.begin(), values.end(), 0.0); }

  friend bool operator==(const CoeffVector&, const CoeffVector&) = default;
  friend auto operator<=>(const CoeffVector&, const CoeffVector&) = default;
};

// Wraps a scalar objective and counts calls.
class SearchObjective {
 public:
  using Fn = std::function<double(const CoeffVector&)>;

  explicit SearchObjective(Fn fn) : fn_(std::move(fn)) {}

  double operator()(const CoeffVector& c) {
    ++evaluations_;
    return fn_(c);
  }

  std::size_t evaluations() const noexcept { return evaluations_; }

 private:
  Fn fn_;
  std::size_t evaluations_ = 0;
};

struct TraceEntry {
  CoeffVector coeffs;
  double value = 0.0;
};

struct SearchResult {
  CoeffVector best;
  double best_value = -INFINITY;
  std::size_t evaluations = 0;
  std::vector<TraceEntry> trace;
};

// n + 1 evenly spaced points lo, ..., hi with n = round((hi - lo) / step).
// Points are computed as lo + i * (hi - lo) / n, so 0:1:0.05 yields i / 20.
inline std::vector<double> make_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || !(hi >= lo)) throw Error(Errc::invalid_argument, "grid needs step > 0 and hi >= lo");
  const auto n = static_cast<long long>(std::llround((hi - lo) / step));
  if (n == 0) return {lo};
  std::vector<double> g;
  for (long long i = 0; i <= n; ++i) g.push_back(i == n ? hi : lo + static_cast<double>(i) * (hi - lo) / static_cast<double>(n));
  return g;
}

// {0, 0.05, ..., 1}
inline std::vector<double> default_grid() { return make_grid(0.0, 1.0, 0.05); }

// Parses "lo:hi:step" or a comma list "0,0.5,1".
inline std::vector<double> parse_grid(std::string_view spec) {
  spec = text::trim(spec);
  if (spec.find(':') != std::string_view::npos) {
    auto parts = text::split(spec, ':');
    if (parts.size() != 3) throw Error(Errc::parse, "grid spec must be lo:hi:step");
    return make_grid(text::parse_number(parts[0], "grid lo"), text::parse_number(parts[1], "grid hi"),
                     text::parse_number(parts[2], "grid step"));
  }
  std::vector<double> g;
  for (auto p : text::split(spec, ',')) g.push_back(text::parse_number(p, "grid value"));
  return g;
}

namespace detail {

inline void check_grid(std::span<const double> grid) {
  if (grid.empty()) throw Error(Errc::invalid_argument, "empty coefficient grid");
  for (double a : grid) {
    if (!(a >= 0.0 && a <= 1.0)) throw Error(Errc::out_of_range, "grid value " + text::format_number(a) + " outside [0, 1]");
  }
}

inline void record(SearchResult& r, CoeffVector c, double v, bool better) {
  if (better) {
    r.best = c;
    r.best_value = v;
  }
  r.trace.push_back({std::move(c), v});
  ++r.evaluations;
}

}  // namespace detail

// Evaluates each grid point once, in grid order. Ties go to the smallest
// coefficient.
inline SearchResult grid_search_1d(SearchObjective& obj, std::span<const double> grid) {
  detail::check_grid(grid);
  SearchResult r;
  for (double a : grid) {
    const double v = obj(CoeffVector{{a}});
    const bool better = r.trace.empty() || v > r.best_value || (v == r.best_value && a < r.best.values[0]);
    detail::record(r, CoeffVector{{a}}, v, better);
  }
  return r;
}

// Searches beta over lerp(zs, mean(fts), beta). The returned coefficients
// are beta / k for each of the k models.
inline SearchResult uniform_search_parallel(const Checkpoint& zs, std::span<const Checkpoint> fts,
                                            const std::function<double(const Checkpoint&)>& eval,
                                            std::span<const double> grid) {
  detail::check_grid(grid);
  if (fts.empty()) throw Error(Errc::invalid_argument, "uniform search needs at least one fine-tuned model");
  const Checkpoint avg = average(fts);
  validate_compatible(zs, avg);
  SearchObjective obj([&](const CoeffVector& c) { return eval(lerp(zs, avg, c.values[0])); });
  auto ray = grid_search_1d(obj, grid);
  const double k = static_cast<double>(fts.size());
  auto spread = [&](const CoeffVector& c) { return CoeffVector{std::vector<double>(fts.size(), c.values[0] / k)}; };
  SearchResult r;
  r.best = spread(ray.best);
  r.best_value = ray.best_value;
  r.evaluations = ray.evaluations;
  for (auto& e : ray.trace) r.trace.push_back({spread(e.coeffs), e.value});
  return r;
}

// Euclidean projection onto {x in [0,1]^k : sum x <= 1}.
inline std::vector<double> project_to_feasible(std::vector<double> x) {
  for (auto& v : x) v = std::clamp(v, 0.0, 1.0);
  const double total = std::accumulate(x.begin(), x.end(), 0.0);
  if (total <= 1.0) return x;
  // Projection onto the probability simplex (sort-and-threshold).
  std::vector<double> u = x;
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0, theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumsum += u[j];
    const double t = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) theta = t;
  }
  for (auto& v : x) v = std::max(v - theta, 0.0);
  return x;
}

struct BlackBoxOptions {
  std::size_t budget = 50;
  double init = 0.5;
  std::uint64_t seed = 0;
  double initial_step = 0.25;
  double min_step = 1e-4;
  std::vector<double> start;  // overrides `init` when non-empty (size k)
};

// Coordinate pattern search with step halving over [0,1]^k with sum <= 1.
// Starts from the projected `start` (or all-`init`) point, never spends more than
// `budget` evaluations, and returns the best point evaluated. The seed
// fixes the coordinate visiting order of each sweep.
inline SearchResult black_box_search(SearchObjective& obj, std::size_t k, const BlackBoxOptions& opts = {}) {
  if (k == 0) throw Error(Errc::invalid_argument, "black-box search needs k >= 1");
  if (opts.budget == 0) throw Error(Errc::invalid_argument, "black-box search needs a budget >= 1");
  std::mt19937_64 rng(opts.seed);
  SearchResult r;
  std::map<std::vector<double>, double> seen;

  if (!opts.start.empty() && opts.start.size() != k) {
    throw Error(Errc::shape_mismatch, "black-box start point has " + std::to_string(opts.start.size()) + " coefficients, expected " + std::to_string(k));
  }
  std::vector<double> x = project_to_feasible(opts.start.empty() ? std::vector<double>(k, opts.init) : opts.start);
  double fx = obj(CoeffVector{x});
  seen.emplace(x, fx);
  detail::record(r, CoeffVector{x}, fx, true);

  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  double step = opts.initial_step;
  while (r.evaluations < opts.budget && step >= opts.min_step) {
    std::shuffle(order.begin(), order.end(), rng);
    bool improved = false;
    for (std::size_t i : order) {
      for (double dir : {+1.0, -1.0}) {
        if (r.evaluations >= opts.budget) break;
        auto y = x;
        y[i] += dir * step;
        y = project_to_feasible(std::move(y));
        if (y == x) continue;
        double fy;
        if (auto it = seen.find(y); it != seen.end()) {
          fy = it->second;
        } else {
          fy = obj(CoeffVector{y});
          seen.emplace(y, fy);
          detail::record(r, CoeffVector{y}, fy, fy > r.best_value);
        }
        if (fy > fx) {
          x = std::move(y);
          fx = fy;
          improved = true;
          break;
        }
      }
    }
    if (!improved) step /= 2.0;
  }
  return r;
}

// All pairs (a1, a2) from grid x grid with a1 + a2 <= 1. Ties go to the
// lexicographically smallest pair.
inline SearchResult exhaustive_search_2d(SearchObjective& obj, std::span<const double> grid) {
  detail::check_grid(grid);
  std::vector<double> g(grid.begin(), grid.end());
  std::sort(g.begin(), g.end());
  SearchResult r;
  for (double a1 : g) {
    for (double a2 : g) {
      if (a1 + a2 > 1.0 + kCoeffSumSlack) continue;
      const double v = obj(CoeffVector{{a1, a2}});
      detail::record(r, CoeffVector{{a1, a2}}, v, r.trace.empty() || v > r.best_value);
    }
  }
  return r;
}

inline nlohmann::ordered_json search_result_to_json(const SearchResult& r) {
  nlohmann::ordered_json j;
  j["best"] = r.best.values;
  j["best_value"] = r.best_value;
  j["evaluations"] = r.evaluations;
  auto trace = nlohmann::ordered_json::array();
  for (const auto& e : r.trace) trace.push_back({{"coeffs", e.coeffs.values}, {"value", e.value}});
  j["trace"] = std::move(trace);
  return j;
}

}  // namespace paintkit
