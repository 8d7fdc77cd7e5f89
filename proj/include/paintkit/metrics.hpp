#pragma once

// Patching-effectiveness metrics over interpolation frontiers, and linear
// CKA between representation matrices.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "paintkit/error.hpp"
#include "paintkit/text.hpp"

namespace paintkit {

enum class AccuracyUnit { percent, fraction };

constexpr double unit_max(AccuracyUnit u) noexcept { return u == AccuracyUnit::percent ? 100.0 : 1.0; }

struct FrontierPoint {
  double alpha = 0.0;
  double supported_acc = 0.0;  // x_alpha
  double patching_acc = 0.0;   // y_alpha

  friend bool operator==(const FrontierPoint&, const FrontierPoint&) = default;
};

// Points sorted strictly ascending by alpha, with both endpoints present.
// Construction sorts its input, so callers may pass points in any order.
class Frontier {
 public:
  Frontier() = default;

  explicit Frontier(std::vector<FrontierPoint> points, AccuracyUnit unit = AccuracyUnit::percent)
      : points_(std::move(points)), unit_(unit) {
    const double hi = unit_max(unit_);
    for (const auto& p : points_) {
      if (!(p.alpha >= 0.0 && p.alpha <= 1.0)) {
        throw Error(Errc::out_of_range, "frontier alpha " + text::format_number(p.alpha) + " outside [0, 1]");
      }
      for (double acc : {p.supported_acc, p.patching_acc}) {
        if (!(acc >= 0.0 && acc <= hi)) {
          throw Error(Errc::out_of_range, "accuracy " + text::format_number(acc) + " outside [0, " +
                                              text::format_number(hi) + "]");
        }
      }
    }
    std::stable_sort(points_.begin(), points_.end(),
                     [](const FrontierPoint& a, const FrontierPoint& b) { return a.alpha < b.alpha; });
    for (std::size_t i = 1; i < points_.size(); ++i) {
      if (points_[i].alpha == points_[i - 1].alpha) {
        throw Error(Errc::conflict, "duplicate alpha " + text::format_number(points_[i].alpha) + " in frontier");
      }
    }
    if (points_.empty() || points_.front().alpha != 0.0 || points_.back().alpha != 1.0) {
      throw Error(Errc::missing_data, "frontier must contain alpha = 0 and alpha = 1");
    }
  }

  const std::vector<FrontierPoint>& points() const noexcept { return points_; }
  AccuracyUnit unit() const noexcept { return unit_; }
  std::size_t size() const noexcept { return points_.size(); }
  const FrontierPoint& zero_shot() const { return points_.front(); }
  const FrontierPoint& fine_tuned() const { return points_.back(); }

  friend bool operator==(const Frontier&, const Frontier&) = default;

 private:
  std::vector<FrontierPoint> points_;
  AccuracyUnit unit_ = AccuracyUnit::percent;
};

namespace detail {

inline double mean_of(std::span<const double> v) {
  if (v.empty()) throw Error(Errc::invalid_argument, "mean of an empty accuracy list");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double max_combined_half(const Frontier& f) {
  double best = -INFINITY;
  for (const auto& p : f.points()) best = std::max(best, (p.supported_acc + p.patching_acc) / 2.0);
  return best;
}

}  // namespace detail

// Mean of the supported-task mean and the patching-task mean.
inline double combined_accuracy(std::span<const double> supported_accs, std::span<const double> patching_accs) {
  return (detail::mean_of(supported_accs) + detail::mean_of(patching_accs)) / 2.0;
}

// (x_0 + y_1)/2 - max_a (x_a + y_a)/2. Negative when an interior point beats
// the two specialized endpoints.
inline double distance_to_endpoints(const Frontier& f) {
  return (f.zero_shot().supported_acc + f.fine_tuned().patching_acc) / 2.0 - detail::max_combined_half(f);
}

// (max_a x_a + max_a y_a)/2 - max_a (x_a + y_a)/2. Always >= 0.
inline double distance_to_optimal(const Frontier& f) {
  double max_x = -INFINITY, max_y = -INFINITY;
  for (const auto& p : f.points()) {
    max_x = std::max(max_x, p.supported_acc);
    max_y = std::max(max_y, p.patching_acc);
  }
  return (max_x + max_y) / 2.0 - detail::max_combined_half(f);
}

// Mean over sampled alphas of the distance from (x_a, y_a) to the ideal set
// {x = x_0} U {y = y_1}, counting only points strictly below both references.
// For such points the nearest member of the set is the foot of a
// perpendicular on one of the two lines, hence the closed-form minimum.
inline double path_correction_cost(const Frontier& f) {
  const double x0 = f.zero_shot().supported_acc;
  const double y1 = f.fine_tuned().patching_acc;
  double total = 0.0;
  for (const auto& p : f.points()) {
    if (p.supported_acc < x0 && p.patching_acc < y1) total += std::min(x0 - p.supported_acc, y1 - p.patching_acc);
  }
  return total / static_cast<double>(f.size());
}

// One alpha of an interpolation sweep: accuracy per task id.
struct SweepRecord {
  double alpha = 0.0;
  std::map<std::string, double> accuracy;
};

inline Frontier sweep_to_frontier(std::span<const SweepRecord> records, std::span<const std::string> supported_ids,
                                  std::span<const std::string> patching_ids,
                                  AccuracyUnit unit = AccuracyUnit::percent) {
  if (supported_ids.empty() || patching_ids.empty()) {
    throw Error(Errc::invalid_argument, "sweep needs at least one supported and one patching task");
  }
  auto group_mean = [](const SweepRecord& r, std::span<const std::string> ids) {
    double s = 0.0;
    for (const auto& id : ids) {
      auto it = r.accuracy.find(id);
      if (it == r.accuracy.end()) {
        throw Error(Errc::missing_data, "no accuracy for task '" + id + "' at alpha " + text::format_number(r.alpha));
      }
      s += it->second;
    }
    return s / static_cast<double>(ids.size());
  };
  std::map<double, FrontierPoint> by_alpha;
  for (const auto& r : records) {
    FrontierPoint p{r.alpha, group_mean(r, supported_ids), group_mean(r, patching_ids)};
    auto [it, inserted] = by_alpha.emplace(r.alpha, p);
    if (!inserted && !(it->second == p)) {
      throw Error(Errc::conflict, "conflicting accuracies recorded for alpha " + text::format_number(r.alpha));
    }
  }
  std::vector<FrontierPoint> pts;
  for (const auto& [_, p] : by_alpha) pts.push_back(p);
  return Frontier(std::move(pts), unit);
}

// ---------------------------------------------------------------------------
// Representation similarity

// n x d feature matrix, one sample per row.
class RepMatrix {
 public:
  RepMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows_ < 2) throw Error(Errc::invalid_argument, "representation matrix needs at least 2 samples");
    if (cols_ == 0) throw Error(Errc::invalid_argument, "representation matrix needs at least 1 feature");
    if (data_.size() != rows_ * cols_) throw Error(Errc::shape_mismatch, "representation data length mismatch");
    for (double v : data_) {
      if (!std::isfinite(v)) throw Error(Errc::non_finite, "representation holds a non-finite entry");
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<const double> data() const noexcept { return data_; }

 private:
  std::size_t rows_, cols_;
  std::vector<double> data_;
};

namespace detail {

inline std::vector<double> centered_columns(const RepMatrix& m) {
  std::vector<double> out(m.data().begin(), m.data().end());
  for (std::size_t c = 0; c < m.cols(); ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) mean += m(r, c);
    mean /= static_cast<double>(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) out[r * m.cols() + c] -= mean;
  }
  return out;
}

// ||X^T Y||_F^2 for row-major X (n x p), Y (n x q).
inline double cross_frobenius_sq(std::span<const double> x, std::size_t p, std::span<const double> y, std::size_t q,
                                 std::size_t n) {
  double total = 0.0;
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < q; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < n; ++r) s += x[r * p + i] * y[r * q + j];
      total += s * s;
    }
  }
  return total;
}

}  // namespace detail

// Linear CKA with column centering:
// ||B^T A||_F^2 / (||A^T A||_F ||B^T B||_F).
inline double cka(const RepMatrix& a, const RepMatrix& b) {
  if (a.rows() != b.rows()) {
    throw Error(Errc::shape_mismatch, "CKA needs equal sample counts, got " + std::to_string(a.rows()) + " and " +
                                          std::to_string(b.rows()));
  }
  const auto ca = detail::centered_columns(a);
  const auto cb = detail::centered_columns(b);
  const std::size_t n = a.rows();
  const double ab = detail::cross_frobenius_sq(cb, b.cols(), ca, a.cols(), n);
  const double aa = detail::cross_frobenius_sq(ca, a.cols(), ca, a.cols(), n);
  const double bb = detail::cross_frobenius_sq(cb, b.cols(), cb, b.cols(), n);
  if (aa == 0.0 || bb == 0.0) throw Error(Errc::degenerate, "representation is constant after centering");
  return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Import / export

inline std::string frontier_to_csv(const Frontier& f) {
  std::string out = "alpha,supported_acc,patching_acc\n";
  for (const auto& p : f.points()) {
    out += text::format_number(p.alpha) + "," + text::format_number(p.supported_acc) + "," +
           text::format_number(p.patching_acc) + "\n";
  }
  return out;
}

inline Frontier frontier_from_csv(std::string_view csv, AccuracyUnit unit = AccuracyUnit::percent) {
  auto rows = text::lines(csv);
  if (rows.empty()) throw Error(Errc::parse, "empty frontier CSV");
  auto header = text::split(rows.front(), ',');
  if (header.size() != 3 || text::trim(header[0]) != "alpha" || text::trim(header[1]) != "supported_acc" ||
      text::trim(header[2]) != "patching_acc") {
    throw Error(Errc::parse, "frontier CSV header must be alpha,supported_acc,patching_acc");
  }
  std::vector<FrontierPoint> pts;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    auto cells = text::split(rows[i], ',');
    if (cells.size() != 3) throw Error(Errc::parse, "frontier CSV row " + std::to_string(i) + " needs 3 fields");
    pts.push_back({text::parse_number(cells[0], "alpha"), text::parse_number(cells[1], "supported_acc"),
                   text::parse_number(cells[2], "patching_acc")});
  }
  return Frontier(std::move(pts), unit);
}

inline nlohmann::ordered_json frontier_to_json(const Frontier& f) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& p : f.points()) {
    arr.push_back({{"alpha", p.alpha}, {"supported_acc", p.supported_acc}, {"patching_acc", p.patching_acc}});
  }
  return arr;
}

inline Frontier frontier_from_json(const nlohmann::json& j, AccuracyUnit unit = AccuracyUnit::percent) {
  if (!j.is_array()) throw Error(Errc::parse, "frontier JSON must be a record list");
  std::vector<FrontierPoint> pts;
  try {
    for (const auto& r : j) {
      pts.push_back({r.at("alpha").get<double>(), r.at("supported_acc").get<double>(),
                     r.at("patching_acc").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::parse, std::string("frontier JSON: ") + e.what());
  }
  return Frontier(std::move(pts), unit);
}

// One sample per line; a leading non-numeric header line is skipped.
inline RepMatrix rep_matrix_from_csv(std::string_view csv) {
  auto rows = text::lines(csv);
  std::size_t first = 0;
  if (!rows.empty()) {
    double probe = 0.0;
    if (!text::try_parse_number(text::split(rows.front(), ',').front(), probe)) first = 1;
  }
  std::vector<double> data;
  std::size_t cols = 0;
  for (std::size_t i = first; i < rows.size(); ++i) {
    auto cells = text::split(rows[i], ',');
    if (cols == 0) cols = cells.size();
    if (cells.size() != cols) throw Error(Errc::parse, "ragged representation CSV at row " + std::to_string(i));
    for (auto c : cells) data.push_back(text::parse_number(c, "feature"));
  }
  const std::size_t n = cols == 0 ? 0 : data.size() / cols;
  return RepMatrix(n, cols, std::move(data));
}

inline std::string rep_matrix_to_csv(const RepMatrix& m) {
  std::string out;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out += (c ? "," : "") + text::format_number(m(r, c));
    out += "\n";
  }
  return out;
}

}  // namespace paintkit
