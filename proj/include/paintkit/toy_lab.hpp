#pragma once

// Desk-scale stand-in for a pretrained open-vocabulary classifier.
//
// Tasks are Gaussian clusters, one per global class id. The model is a small
// tanh MLP encoder whose unit-normalized output is scored against a frozen
// class-embedding head: logits = s * normalize(encoder(x)) . E^T, restricted
// to the classes of the task at hand. Head rows are generated from the class
// id, so every id has a classifier row without training and the head is
// never part of the trainable checkpoint.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "paintkit/error.hpp"
#include "paintkit/metrics.hpp"
#include "paintkit/parallel.hpp"
#include "paintkit/text.hpp"
#include "paintkit/weight_store.hpp"

namespace paintkit {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t salt = 0) {
  return splitmix64(splitmix64(a ^ salt) ^ b);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Data

enum class Split { train, val, test };

constexpr std::string_view to_string(Split s) noexcept {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw Error(Errc::parse, "unknown split '" + std::string(s) + "'");
}

struct TaskDataset {
  std::string name;
  std::size_t dim = 0;
  std::vector<double> inputs;  // n x dim, row-major
  std::vector<int> labels;     // global class ids
  std::vector<int> class_ids;  // ascending
  std::vector<std::size_t> train, val, test;

  std::size_t size() const noexcept { return labels.size(); }
  std::span<const double> input(std::size_t i) const { return {inputs.data() + i * dim, dim}; }

  const std::vector<std::size_t>& indices(Split s) const {
    switch (s) {
      case Split::train: return train;
      case Split::val: return val;
      default: return test;
    }
  }

  void validate() const {
    if (dim == 0) throw Error(Errc::invalid_argument, "task '" + name + "' has zero input dimension");
    if (inputs.size() != labels.size() * dim) throw Error(Errc::shape_mismatch, "task '" + name + "' input size mismatch");
    if (!std::is_sorted(class_ids.begin(), class_ids.end()) ||
        std::adjacent_find(class_ids.begin(), class_ids.end()) != class_ids.end()) {
      throw Error(Errc::invalid_argument, "task '" + name + "' class ids must be strictly ascending");
    }
    for (int l : labels) {
      if (!std::binary_search(class_ids.begin(), class_ids.end(), l)) {
        throw Error(Errc::invalid_argument, "task '" + name + "' has label " + std::to_string(l) + " outside its class set");
      }
    }
    std::vector<char> used(size(), 0);
    for (Split s : {Split::train, Split::val, Split::test}) {
      const auto& idx = indices(s);
      if (idx.empty()) {
        throw Error(Errc::missing_data, "task '" + name + "' has an empty " + std::string(to_string(s)) + " split");
      }
      for (auto i : idx) {
        if (i >= size()) throw Error(Errc::out_of_range, "task '" + name + "' split index out of range");
        if (used[i]++) throw Error(Errc::conflict, "task '" + name + "' splits overlap at example " + std::to_string(i));
      }
    }
    for (double v : inputs) {
      if (!std::isfinite(v)) throw Error(Errc::non_finite, "task '" + name + "' has a non-finite feature");
    }
  }

  friend bool operator==(const TaskDataset&, const TaskDataset&) = default;
};

struct TaskGenConfig {
  std::uint64_t seed = 0;
  int num_classes = 20;
  std::size_t dim = 16;
  std::size_t samples_per_class = 100;
  double noise_scale = 1.0;
};

struct TaskPartition {
  std::string name;
  std::vector<int> classes;
};

// Per class: val and test each take max(1, n / 10) samples, train the rest.
inline std::size_t held_out_per_class(std::size_t n) { return std::max<std::size_t>(1, n / 10); }

// The mean of class c and its samples come from a stream seeded by (seed, c),
// so a class looks the same whichever task it lands in.
inline std::vector<TaskDataset> generate_tasks(const TaskGenConfig& cfg, const std::vector<TaskPartition>& partition) {
  if (cfg.num_classes < 2 || cfg.dim == 0) throw Error(Errc::invalid_argument, "need num_classes >= 2 and dim >= 1");
  if (cfg.samples_per_class < 3) throw Error(Errc::invalid_argument, "need at least 3 samples per class");
  if (!(cfg.noise_scale >= 0.0) || !std::isfinite(cfg.noise_scale)) {
    throw Error(Errc::invalid_argument, "noise_scale must be finite and >= 0");
  }
  if (partition.empty()) throw Error(Errc::invalid_argument, "empty task partition");
  std::set<int> seen;
  std::set<std::string> names;
  for (const auto& p : partition) {
    if (!names.insert(p.name).second) throw Error(Errc::conflict, "duplicate task name '" + p.name + "'");
    std::set<int> own(p.classes.begin(), p.classes.end());
    if (own.size() != p.classes.size()) throw Error(Errc::conflict, "task '" + p.name + "' lists a class twice");
    if (own.size() < 2) throw Error(Errc::invalid_argument, "task '" + p.name + "' needs at least 2 classes");
    for (int c : own) {
      if (c < 0 || c >= cfg.num_classes) {
        throw Error(Errc::out_of_range, "class " + std::to_string(c) + " outside [0, " + std::to_string(cfg.num_classes) + ")");
      }
      if (!seen.insert(c).second) throw Error(Errc::conflict, "class " + std::to_string(c) + " appears in more than one task");
    }
  }

  const std::size_t n = cfg.samples_per_class;
  const std::size_t held = held_out_per_class(n);
  if (2 * held >= n) throw Error(Errc::invalid_argument, "samples_per_class too small for a train split");

  std::vector<TaskDataset> out;
  for (const auto& p : partition) {
    TaskDataset t;
    t.name = p.name;
    t.dim = cfg.dim;
    t.class_ids = p.classes;
    std::sort(t.class_ids.begin(), t.class_ids.end());
    for (int c : t.class_ids) {
      std::mt19937_64 rng(detail::mix_seed(cfg.seed, static_cast<std::uint64_t>(c), 0xda7a));
      std::normal_distribution<double> normal(0.0, 1.0);
      std::vector<double> mean(cfg.dim);
      for (auto& m : mean) m = normal(rng);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t id = t.labels.size();
        for (std::size_t j = 0; j < cfg.dim; ++j) t.inputs.push_back(mean[j] + cfg.noise_scale * normal(rng));
        t.labels.push_back(c);
        (i < n - 2 * held ? t.train : i < n - held ? t.val : t.test).push_back(id);
      }
    }
    t.validate();
    out.push_back(std::move(t));
  }
  return out;
}

// Concatenates tasks (labels keep their global ids). An example that appears
// in two different tasks with the same label is rejected.
inline TaskDataset merge_tasks(std::span<const TaskDataset> tasks, std::string name) {
  if (tasks.empty()) throw Error(Errc::invalid_argument, "nothing to merge");
  TaskDataset m;
  m.name = std::move(name);
  m.dim = tasks[0].dim;
  std::set<int> classes;
  std::map<std::pair<int, std::vector<double>>, std::size_t> owner;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    const auto& t = tasks[k];
    if (t.dim != m.dim) throw Error(Errc::shape_mismatch, "cannot merge tasks with different input dimensions");
    const std::size_t offset = m.size();
    for (std::size_t i = 0; i < t.size(); ++i) {
      auto x = t.input(i);
      auto key = std::make_pair(t.labels[i], std::vector<double>(x.begin(), x.end()));
      auto [it, fresh] = owner.emplace(std::move(key), k);
      if (!fresh && it->second != k) {
        throw Error(Errc::conflict, "example " + std::to_string(i) + " of task '" + t.name + "' duplicates an example of task '" +
                                        tasks[it->second].name + "'");
      }
    }
    m.inputs.insert(m.inputs.end(), t.inputs.begin(), t.inputs.end());
    m.labels.insert(m.labels.end(), t.labels.begin(), t.labels.end());
    classes.insert(t.class_ids.begin(), t.class_ids.end());
    for (auto i : t.train) m.train.push_back(offset + i);
    for (auto i : t.val) m.val.push_back(offset + i);
    for (auto i : t.test) m.test.push_back(offset + i);
  }
  m.class_ids.assign(classes.begin(), classes.end());
  return m;
}

// CSV with header id,split,label,f0,...,f{d-1}; rows in example order.
inline std::string task_to_csv(const TaskDataset& t) {
  std::vector<std::string_view> split_of(t.size(), "");
  for (Split s : {Split::train, Split::val, Split::test}) {
    for (auto i : t.indices(s)) split_of[i] = to_string(s);
  }
  std::string out = "id,split,label";
  for (std::size_t j = 0; j < t.dim; ++j) out += ",f" + std::to_string(j);
  out += '\n';
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (split_of[i].empty()) continue;
    out += std::to_string(i) + ',' + std::string(split_of[i]) + ',' + std::to_string(t.labels[i]);
    for (double v : t.input(i)) out += ',' + text::format_number(v);
    out += '\n';
  }
  return out;
}

inline TaskDataset task_from_csv(std::string_view csv, std::string name) {
  auto rows = text::lines(csv);
  if (rows.empty()) throw Error(Errc::parse, "task CSV is empty");
  auto header = text::split(rows[0], ',');
  if (header.size() < 4 || text::trim(header[0]) != "id" || text::trim(header[1]) != "split" || text::trim(header[2]) != "label") {
    throw Error(Errc::parse, "task CSV header must be id,split,label,f0,...");
  }
  TaskDataset t;
  t.name = std::move(name);
  t.dim = header.size() - 3;
  std::set<int> classes;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    auto cells = text::split(rows[r], ',');
    const std::string where = "task CSV line " + std::to_string(r + 1);
    if (cells.size() != header.size()) throw Error(Errc::parse, where + " has " + std::to_string(cells.size()) + " fields");
    const std::size_t id = t.size();
    if (text::parse_integer(cells[0], "example id") != static_cast<long long>(id)) {
      throw Error(Errc::parse, where + " id is not sequential");
    }
    const Split s = parse_split(text::trim(cells[1]));
    const auto label = text::parse_integer(cells[2], "label");
    if (label < 0 || label > INT32_MAX) throw Error(Errc::out_of_range, where + " label out of range");
    t.labels.push_back(static_cast<int>(label));
    classes.insert(static_cast<int>(label));
    for (std::size_t j = 3; j < cells.size(); ++j) t.inputs.push_back(text::parse_number(cells[j], "feature"));
    (s == Split::train ? t.train : s == Split::val ? t.val : t.test).push_back(id);
  }
  t.class_ids.assign(classes.begin(), classes.end());
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------
// Model

struct ModelConfig {
  std::size_t input_dim = 16;
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t embed_dim = 32;
  double logit_scale = 20.0;
  std::uint64_t head_seed = 0;
  std::uint64_t init_seed = 0;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Unit-norm head row for a global class id.
inline std::vector<double> class_embedding(int class_id, std::size_t dim, std::uint64_t head_seed = 0) {
  if (class_id < 0) throw Error(Errc::out_of_range, "class id must be >= 0");
  if (dim == 0) throw Error(Errc::invalid_argument, "embedding dimension must be >= 1");
  std::mt19937_64 rng(detail::mix_seed(head_seed, static_cast<std::uint64_t>(class_id), 0x4ead));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> e(dim);
  double nrm = 0.0;
  while (nrm == 0.0) {
    nrm = 0.0;
    for (auto& v : e) {
      v = normal(rng);
      nrm += v * v;
    }
  }
  nrm = std::sqrt(nrm);
  for (auto& v : e) v /= nrm;
  return e;
}

// Rows of class_embedding for each id, concatenated.
inline std::vector<double> head_matrix(const ModelConfig& arch, std::span<const int> class_ids) {
  std::vector<double> h;
  h.reserve(class_ids.size() * arch.embed_dim);
  for (int c : class_ids) {
    auto e = class_embedding(c, arch.embed_dim, arch.head_seed);
    h.insert(h.end(), e.begin(), e.end());
  }
  return h;
}

// Parameter layout and the forward/backward passes on a flat parameter
// vector. Layer l stores weight (out x in, row-major) then bias (out).
class Network {
 public:
  explicit Network(ModelConfig arch) : arch_(std::move(arch)) {
    if (arch_.input_dim == 0 || arch_.embed_dim == 0) throw Error(Errc::invalid_argument, "model dimensions must be >= 1");
    if (!(arch_.logit_scale > 0.0)) throw Error(Errc::invalid_argument, "logit scale must be > 0");
    dims_.push_back(arch_.input_dim);
    for (auto h : arch_.hidden) {
      if (h == 0) throw Error(Errc::invalid_argument, "hidden width must be >= 1");
      dims_.push_back(h);
    }
    dims_.push_back(arch_.embed_dim);
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      w_off_.push_back(off);
      off += dims_[l + 1] * dims_[l];
      b_off_.push_back(off);
      off += dims_[l + 1];
    }
    num_params_ = off;
  }

  const ModelConfig& arch() const noexcept { return arch_; }
  std::size_t num_params() const noexcept { return num_params_; }
  std::size_t num_layers() const noexcept { return w_off_.size(); }

  static std::string weight_name(std::size_t l) { return "encoder." + std::to_string(l) + ".weight"; }
  static std::string bias_name(std::size_t l) { return "encoder." + std::to_string(l) + ".bias"; }

  // Xavier-normal weights, zero biases.
  std::vector<double> init_params() const {
    std::vector<double> p(num_params_, 0.0);
    std::mt19937_64 rng(detail::mix_seed(arch_.init_seed, 0, 0x1417));
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const double sd = std::sqrt(2.0 / static_cast<double>(dims_[l] + dims_[l + 1]));
      std::normal_distribution<double> normal(0.0, sd);
      for (std::size_t i = 0; i < dims_[l + 1] * dims_[l]; ++i) p[w_off_[l] + i] = normal(rng);
    }
    return p;
  }

  Checkpoint to_checkpoint(std::span<const double> p) const {
    check_size(p.size());
    Checkpoint c;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const auto in = dims_[l], out = dims_[l + 1];
      c.add(weight_name(l), Tensor({out, in}, {p.begin() + w_off_[l], p.begin() + w_off_[l] + out * in}));
      c.add(bias_name(l), Tensor({out}, {p.begin() + b_off_[l], p.begin() + b_off_[l] + out}));
    }
    return c;
  }

  std::vector<double> from_checkpoint(const Checkpoint& c) const {
    if (c.size() != 2 * num_layers()) {
      throw Error(Errc::name_mismatch, "checkpoint holds " + std::to_string(c.size()) + " tensors, model expects " +
                                           std::to_string(2 * num_layers()));
    }
    std::vector<double> p(num_params_);
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const std::uint64_t in = dims_[l], out = dims_[l + 1];
      const Tensor& w = c.at(weight_name(l));
      const Tensor& b = c.at(bias_name(l));
      if (w.shape() != std::vector<std::uint64_t>{out, in} || b.shape() != std::vector<std::uint64_t>{out}) {
        throw Error(Errc::shape_mismatch, "layer " + std::to_string(l) + " shape does not match the model");
      }
      std::copy(w.data().begin(), w.data().end(), p.begin() + static_cast<std::ptrdiff_t>(w_off_[l]));
      std::copy(b.data().begin(), b.data().end(), p.begin() + static_cast<std::ptrdiff_t>(b_off_[l]));
    }
    return p;
  }

  // normalize(encoder(x)) written to `out` (embed_dim values).
  void embed(std::span<const double> p, std::span<const double> x, std::span<double> out) const {
    Workspace ws(*this);
    forward(p, x, ws);
    std::copy(ws.unit.begin(), ws.unit.end(), out.begin());
  }

  // Mean cross-entropy over `batch` plus lambda * ||p - anchor||^2.
  // Writes the gradient into `grad` when it is non-empty.
  double loss_and_grad(std::span<const double> p, const TaskDataset& data, std::span<const std::size_t> batch,
                       std::span<const int> classes, std::span<const double> head, std::span<const double> anchor,
                       double lambda, std::span<double> grad) const {
    check_size(p.size());
    if (batch.empty()) throw Error(Errc::invalid_argument, "empty batch");
    if (data.dim != arch_.input_dim) throw Error(Errc::shape_mismatch, "task input dimension does not match the model");
    const bool want_grad = !grad.empty();
    if (want_grad) {
      check_size(grad.size());
      std::fill(grad.begin(), grad.end(), 0.0);
    }
    const std::size_t k = classes.size(), e = arch_.embed_dim;
    Workspace ws(*this);
    std::vector<double> logits(k), g_unit(e), g_z(e);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (auto idx : batch) {
      const auto target = static_cast<std::size_t>(
          std::lower_bound(classes.begin(), classes.end(), data.labels[idx]) - classes.begin());
      if (target == k || classes[target] != data.labels[idx]) {
        throw Error(Errc::invalid_argument, "label " + std::to_string(data.labels[idx]) + " outside the class set");
      }
      forward(p, data.input(idx), ws);
      double mx = -INFINITY;
      for (std::size_t c = 0; c < k; ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j < e; ++j) s += ws.unit[j] * head[c * e + j];
        logits[c] = arch_.logit_scale * s;
        mx = std::max(mx, logits[c]);
      }
      double z = 0.0;
      for (std::size_t c = 0; c < k; ++c) z += std::exp(logits[c] - mx);
      loss += (std::log(z) + mx - logits[target]) * inv_b;
      if (!want_grad) continue;

      // d loss / d unit = s * sum_c (softmax_c - onehot_c) * E_c
      std::fill(g_unit.begin(), g_unit.end(), 0.0);
      for (std::size_t c = 0; c < k; ++c) {
        const double d = (std::exp(logits[c] - mx) / z - (c == target ? 1.0 : 0.0)) * arch_.logit_scale * inv_b;
        for (std::size_t j = 0; j < e; ++j) g_unit[j] += d * head[c * e + j];
      }
      // through u = z / |z|: (g - u (u . g)) / |z|
      double ug = 0.0;
      for (std::size_t j = 0; j < e; ++j) ug += ws.unit[j] * g_unit[j];
      for (std::size_t j = 0; j < e; ++j) g_z[j] = (g_unit[j] - ws.unit[j] * ug) / ws.norm;
      backward(p, ws, g_z, grad);
    }
    if (lambda != 0.0) {
      check_size(anchor.size());
      for (std::size_t i = 0; i < num_params_; ++i) {
        const double d = p[i] - anchor[i];
        loss += lambda * d * d;
        if (want_grad) grad[i] += 2.0 * lambda * d;
      }
    }
    return loss;
  }

  // Index into `classes` of the highest logit; ties go to the first class.
  std::size_t predict(std::span<const double> p, std::span<const double> x, std::span<const double> head,
                      std::size_t num_classes) const {
    Workspace ws(*this);
    forward(p, x, ws);
    std::size_t best = 0;
    double best_v = -INFINITY;
    for (std::size_t c = 0; c < num_classes; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < arch_.embed_dim; ++j) s += ws.unit[j] * head[c * arch_.embed_dim + j];
      if (s > best_v) {
        best_v = s;
        best = c;
      }
    }
    return best;
  }

 private:
  struct Workspace {
    explicit Workspace(const Network& n) {
      for (auto d : n.dims_) acts.emplace_back(d);
      unit.resize(n.arch_.embed_dim);
    }
    std::vector<std::vector<double>> acts;  // acts[0] = x, acts[L] = raw encoder output
    std::vector<double> unit;
    double norm = 0.0;
  };

  void check_size(std::size_t n) const {
    if (n != num_params_) {
      throw Error(Errc::shape_mismatch, "parameter vector has " + std::to_string(n) + " entries, model expects " +
                                            std::to_string(num_params_));
    }
  }

  void forward(std::span<const double> p, std::span<const double> x, Workspace& ws) const {
    std::copy(x.begin(), x.end(), ws.acts[0].begin());
    const std::size_t L = num_layers();
    for (std::size_t l = 0; l < L; ++l) {
      const auto in = dims_[l], out = dims_[l + 1];
      const double* w = p.data() + w_off_[l];
      const double* b = p.data() + b_off_[l];
      const auto& a = ws.acts[l];
      auto& nxt = ws.acts[l + 1];
      for (std::size_t o = 0; o < out; ++o) {
        double s = b[o];
        const double* row = w + o * in;
        for (std::size_t i = 0; i < in; ++i) s += row[i] * a[i];
        nxt[o] = l + 1 < L ? std::tanh(s) : s;
      }
    }
    const auto& z = ws.acts[L];
    double nrm = 0.0;
    for (double v : z) nrm += v * v;
    ws.norm = std::max(std::sqrt(nrm), 1e-12);
    for (std::size_t j = 0; j < z.size(); ++j) ws.unit[j] = z[j] / ws.norm;
  }

  // Accumulates parameter gradients given d loss / d (raw encoder output).
  void backward(std::span<const double> p, const Workspace& ws, std::vector<double> g, std::span<double> grad) const {
    for (std::size_t l = num_layers(); l-- > 0;) {
      const auto in = dims_[l], out = dims_[l + 1];
      const auto& a = ws.acts[l];
      double* gw = grad.data() + w_off_[l];
      double* gb = grad.data() + b_off_[l];
      for (std::size_t o = 0; o < out; ++o) {
        gb[o] += g[o];
        double* row = gw + o * in;
        for (std::size_t i = 0; i < in; ++i) row[i] += g[o] * a[i];
      }
      if (l == 0) break;
      const double* w = p.data() + w_off_[l];
      std::vector<double> prev(in, 0.0);
      for (std::size_t o = 0; o < out; ++o) {
        const double* row = w + o * in;
        for (std::size_t i = 0; i < in; ++i) prev[i] += row[i] * g[o];
      }
      for (std::size_t i = 0; i < in; ++i) prev[i] *= 1.0 - a[i] * a[i];  // tanh'
      g = std::move(prev);
    }
  }

  ModelConfig arch_;
  std::vector<std::size_t> dims_, w_off_, b_off_;
  std::size_t num_params_ = 0;
};

struct ToyModel {
  ModelConfig arch;
  Checkpoint weights;
};

inline ToyModel init_model(const ModelConfig& arch) {
  Network net(arch);
  return {arch, net.to_checkpoint(net.init_params())};
}

// Architecture keys stored in checkpoint metadata so a saved model can be
// rebuilt without its config.
inline void write_arch_meta(const ModelConfig& a, Meta& meta) {
  std::string hidden;
  for (std::size_t i = 0; i < a.hidden.size(); ++i) hidden += (i ? "," : "") + std::to_string(a.hidden[i]);
  meta["arch.input_dim"] = std::to_string(a.input_dim);
  meta["arch.hidden"] = hidden;
  meta["arch.embed_dim"] = std::to_string(a.embed_dim);
  meta["arch.logit_scale"] = text::format_number(a.logit_scale);
  meta["arch.head_seed"] = std::to_string(a.head_seed);
  meta["arch.init_seed"] = std::to_string(a.init_seed);
}

inline ModelConfig read_arch_meta(const Meta& meta) {
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = meta.find(k);
    if (it == meta.end()) throw Error(Errc::missing_data, "checkpoint metadata lacks '" + k + "'");
    return it->second;
  };
  auto to_size = [](const std::string& s, const char* what) {
    const auto v = text::parse_integer(s, what);
    if (v < 0) throw Error(Errc::out_of_range, std::string(what) + " must be >= 0");
    return static_cast<std::size_t>(v);
  };
  ModelConfig a;
  a.input_dim = to_size(get("arch.input_dim"), "arch.input_dim");
  a.hidden.clear();
  if (!get("arch.hidden").empty()) {
    for (auto h : text::split(get("arch.hidden"), ',')) a.hidden.push_back(to_size(std::string(h), "arch.hidden"));
  }
  a.embed_dim = to_size(get("arch.embed_dim"), "arch.embed_dim");
  a.logit_scale = text::parse_number(get("arch.logit_scale"), "arch.logit_scale");
  a.head_seed = to_size(get("arch.head_seed"), "arch.head_seed");
  a.init_seed = to_size(get("arch.init_seed"), "arch.init_seed");
  return a;
}

// Weights with architecture metadata attached, ready to save.
inline Checkpoint model_to_checkpoint(const ToyModel& m) {
  Checkpoint c = m.weights;
  write_arch_meta(m.arch, c.meta());
  return c;
}

inline ToyModel model_from_checkpoint(const Checkpoint& c) {
  ToyModel m{read_arch_meta(c.meta()), c};
  Network(m.arch).from_checkpoint(c);  // validates layout
  return m;
}

// ---------------------------------------------------------------------------
// Evaluation

inline double evaluate(const ToyModel& m, const TaskDataset& task, Split split) {
  const auto& idx = task.indices(split);
  if (idx.empty()) throw Error(Errc::missing_data, "task '" + task.name + "' has an empty " + std::string(to_string(split)) + " split");
  if (task.dim != m.arch.input_dim) throw Error(Errc::shape_mismatch, "task input dimension does not match the model");
  Network net(m.arch);
  const auto p = net.from_checkpoint(m.weights);
  const auto head = head_matrix(m.arch, task.class_ids);
  std::size_t correct = 0;
  for (auto i : idx) {
    const auto c = net.predict(p, task.input(i), head, task.class_ids.size());
    if (task.class_ids[c] == task.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

// normalize(encoder(x)) for each example of a split, one row per example.
inline RepMatrix features(const ToyModel& m, const TaskDataset& task, Split split) {
  const auto& idx = task.indices(split);
  Network net(m.arch);
  const auto p = net.from_checkpoint(m.weights);
  std::vector<double> out(idx.size() * m.arch.embed_dim);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    net.embed(p, task.input(idx[r]), std::span<double>(out.data() + r * m.arch.embed_dim, m.arch.embed_dim));
  }
  return RepMatrix(idx.size(), m.arch.embed_dim, std::move(out));
}

// ---------------------------------------------------------------------------
// Training

enum class LrSchedule { warmup_cosine, constant };

struct TrainConfig {
  std::size_t iterations = 500;
  std::size_t batch_size = 64;
  double peak_lr = 1e-3;
  std::size_t warmup = 50;
  double weight_decay = 0.1;
  std::uint64_t seed = 0;
  double init_reg = 0.0;  // lambda in lambda * ||theta - theta_init||^2
  std::optional<double> ema_decay;
  std::size_t snapshot_every = 0;  // 0 disables snapshots
  LrSchedule schedule = LrSchedule::warmup_cosine;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    auto bad = [](const std::string& m) { throw Error(Errc::invalid_argument, m); };
    if (batch_size == 0) bad("batch size must be >= 1");
    if (schedule == LrSchedule::warmup_cosine && warmup > iterations) bad("warmup must not exceed iterations");
    if (!(peak_lr >= 0.0) || !std::isfinite(peak_lr)) bad("learning rate must be finite and >= 0");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) bad("weight decay must be finite and >= 0");
    if (!(init_reg >= 0.0) || !std::isfinite(init_reg)) bad("init regularization must be finite and >= 0");
    if (ema_decay && !(*ema_decay >= 0.0 && *ema_decay < 1.0)) bad("EMA decay must be in [0, 1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) bad("Adam betas must be in [0, 1)");
    if (!(adam_eps > 0.0)) bad("Adam epsilon must be > 0");
  }
};

// Learning rate used by update `step` (0-based) of a run of `iterations`
// updates. Warmup rises linearly from 0; the cosine phase reaches peak at
// step == warmup and exactly 0 at the last step.
inline double learning_rate_at(const TrainConfig& c, std::size_t step) {
  if (c.schedule == LrSchedule::constant) return c.peak_lr;
  if (step < c.warmup) return c.peak_lr * static_cast<double>(step) / static_cast<double>(c.warmup);
  const std::size_t last = c.iterations == 0 ? 0 : c.iterations - 1;
  const double progress =
      last > c.warmup ? static_cast<double>(step - c.warmup) / static_cast<double>(last - c.warmup) : 1.0;
  return c.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

struct TrainRecord {
  Checkpoint final_weights;
  std::vector<std::pair<std::size_t, Checkpoint>> snapshots;      // live weights
  std::vector<std::pair<std::size_t, Checkpoint>> ema_snapshots;  // shadow weights, same steps
  std::optional<Checkpoint> ema_final;
  std::vector<double> loss_curve;

  friend bool operator==(const TrainRecord&, const TrainRecord&) = default;
};

// AdamW on the task's train split starting from `init`. The penalty anchor is
// `init`. Snapshots are taken at step 0, every `snapshot_every` updates, and
// after the last update.
inline TrainRecord train(const ModelConfig& arch, const Checkpoint& init, const TaskDataset& task, const TrainConfig& cfg) {
  cfg.validate();
  task.validate();
  Network net(arch);
  std::vector<double> p = net.from_checkpoint(init);
  const std::vector<double> anchor = p;
  const auto head = head_matrix(arch, task.class_ids);
  const std::size_t n = net.num_params();
  std::vector<double> m(n, 0.0), v(n, 0.0), g(n, 0.0);
  std::vector<double> ema = p;

  TrainRecord rec;
  auto snap = [&](std::size_t step) {
    rec.snapshots.emplace_back(step, net.to_checkpoint(p));
    if (cfg.ema_decay) rec.ema_snapshots.emplace_back(step, net.to_checkpoint(ema));
  };
  const bool snapshots = cfg.snapshot_every > 0;
  if (snapshots) snap(0);

  std::mt19937_64 rng(detail::mix_seed(cfg.seed, 0, 0x7a1));
  std::vector<std::size_t> order = task.train;
  std::size_t cursor = order.size();
  const std::size_t bsz = std::min(cfg.batch_size, order.size());
  std::vector<std::size_t> batch(bsz);
  double b1t = 1.0, b2t = 1.0;

  for (std::size_t step = 0; step < cfg.iterations; ++step) {
    for (auto& b : batch) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      b = order[cursor++];
    }
    const double loss = net.loss_and_grad(p, task, batch, task.class_ids, head, anchor, cfg.init_reg, g);
    if (!std::isfinite(loss)) {
      throw Error(Errc::divergence, "non-finite loss at step " + std::to_string(step) + " on task '" + task.name + "'");
    }
    rec.loss_curve.push_back(loss);

    const double lr = learning_rate_at(cfg, step);
    b1t *= cfg.beta1;
    b2t *= cfg.beta2;
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / (1.0 - b1t);
      const double vhat = v[i] / (1.0 - b2t);
      p[i] *= 1.0 - lr * cfg.weight_decay;
      p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
    if (cfg.ema_decay) {
      const double d = *cfg.ema_decay;
      for (std::size_t i = 0; i < n; ++i) ema[i] = d * ema[i] + (1.0 - d) * p[i];
    }
    const std::size_t done = step + 1;
    if (snapshots && (done % cfg.snapshot_every == 0 || done == cfg.iterations)) snap(done);
  }
  for (double x : p) {
    if (!std::isfinite(x)) throw Error(Errc::divergence, "weights became non-finite on task '" + task.name + "'");
  }
  rec.final_weights = net.to_checkpoint(p);
  if (cfg.ema_decay) rec.ema_final = net.to_checkpoint(ema);
  return rec;
}

inline TrainRecord finetune(const ToyModel& model, const TaskDataset& task, const TrainConfig& cfg) {
  return train(model.arch, model.weights, task, cfg);
}

// Initializes from arch.init_seed and trains on the union of the base tasks.
inline ToyModel pretrain(const ModelConfig& arch, const TrainConfig& cfg, std::span<const TaskDataset> base_tasks) {
  if (base_tasks.empty()) throw Error(Errc::invalid_argument, "pretraining needs at least one base task");
  ToyModel m = init_model(arch);
  const TaskDataset merged = base_tasks.size() == 1 ? base_tasks[0] : merge_tasks(base_tasks, "pretrain");
  m.weights = train(arch, m.weights, merged, cfg).final_weights;
  return m;
}

// ---------------------------------------------------------------------------
// Baselines

struct LabeledFrontier {
  std::string sweep;                // name of the swept quantity
  std::vector<std::string> labels;  // one per point, in alpha order
  Frontier frontier;
};

struct BaselineOptions {
  std::vector<double> lambdas = {10, 1, 0.1, 0.01, 0.001};  // strongest first
  std::vector<double> lr_multipliers = {0.01, 0.03, 0.1, 0.3, 1.0};  // of peak_lr, smallest first
  double ema_decay = 0.99;
  Split split = Split::test;
};

// Frontiers traced without weight interpolation. Accuracies are percent.
//   early_stopping  snapshots of one run, alpha = step / iterations
//   init_reg        zero-shot, then each lambda strongest first, then lambda = 0
//   learning_rate   zero-shot, then each rate smallest first
//   constant_lr     snapshots of a constant-rate run
//   ema             EMA weights of that constant-rate run
// Ladder points sit at alpha = i / (points - 1).
inline std::map<std::string, LabeledFrontier> baseline_frontiers(const ToyModel& model, const TaskDataset& task,
                                                                 const TaskDataset& supported, const TrainConfig& cfg,
                                                                 const BaselineOptions& opts = {}) {
  if (cfg.snapshot_every == 0) throw Error(Errc::invalid_argument, "baseline frontiers need snapshot_every > 0");
  if (cfg.iterations == 0) throw Error(Errc::invalid_argument, "baseline frontiers need iterations > 0");
  auto point = [&](double alpha, const Checkpoint& w) {
    ToyModel m{model.arch, w};
    return FrontierPoint{alpha, 100.0 * evaluate(m, supported, opts.split), 100.0 * evaluate(m, task, opts.split)};
  };
  auto along_steps = [&](const std::vector<std::pair<std::size_t, Checkpoint>>& snaps, const std::string& sweep) {
    std::vector<FrontierPoint> pts;
    std::vector<std::string> labels;
    for (const auto& [step, w] : snaps) {
      pts.push_back(point(static_cast<double>(step) / static_cast<double>(cfg.iterations), w));
      labels.push_back("step=" + std::to_string(step));
    }
    return LabeledFrontier{sweep, std::move(labels), Frontier(std::move(pts))};
  };

  // Independent runs: [0] schedule as configured, [1] constant rate with EMA,
  // then the lambda ladder, the unregularized run, and the rate ladder.
  std::vector<TrainConfig> runs;
  TrainConfig base = cfg;
  base.init_reg = 0.0;
  base.ema_decay.reset();
  runs.push_back(base);
  TrainConfig constant = base;
  constant.schedule = LrSchedule::constant;
  constant.warmup = 0;
  constant.ema_decay = opts.ema_decay;
  runs.push_back(constant);
  TrainConfig plain = base;
  plain.snapshot_every = 0;
  for (double lam : opts.lambdas) {
    TrainConfig c = plain;
    c.init_reg = lam;
    runs.push_back(c);
  }
  for (double mult : opts.lr_multipliers) {
    TrainConfig c = plain;
    c.peak_lr = cfg.peak_lr * mult;
    runs.push_back(c);
  }
  std::vector<std::optional<TrainRecord>> recs(runs.size());
  parallel_for(runs.size(), [&](std::size_t i) { recs[i] = finetune(model, task, runs[i]); });

  std::map<std::string, LabeledFrontier> out;
  out.emplace("early_stopping", along_steps(recs[0]->snapshots, "step"));
  out.emplace("constant_lr", along_steps(recs[1]->snapshots, "step"));
  out.emplace("ema", along_steps(recs[1]->ema_snapshots, "step"));

  auto ladder = [&](std::vector<std::pair<std::string, const Checkpoint*>> items, const std::string& sweep) {
    std::vector<FrontierPoint> pts;
    std::vector<std::string> labels;
    const double last = static_cast<double>(items.size() - 1);
    for (std::size_t i = 0; i < items.size(); ++i) {
      pts.push_back(point(i + 1 == items.size() ? 1.0 : static_cast<double>(i) / last, *items[i].second));
      labels.push_back(items[i].first);
    }
    return LabeledFrontier{sweep, std::move(labels), Frontier(std::move(pts))};
  };

  const std::size_t lam0 = 2, lr0 = 2 + opts.lambdas.size();
  std::vector<std::pair<std::string, const Checkpoint*>> reg = {{"zero-shot", &model.weights}};
  for (std::size_t i = 0; i < opts.lambdas.size(); ++i) {
    reg.emplace_back("lambda=" + text::format_number(opts.lambdas[i]), &recs[lam0 + i]->final_weights);
  }
  reg.emplace_back("lambda=0", &recs[0]->final_weights);
  out.emplace("init_reg", ladder(std::move(reg), "lambda"));

  std::vector<std::pair<std::string, const Checkpoint*>> rates = {{"zero-shot", &model.weights}};
  for (std::size_t i = 0; i < opts.lr_multipliers.size(); ++i) {
    rates.emplace_back("lr=" + text::format_number(runs[lr0 + i].peak_lr), &recs[lr0 + i]->final_weights);
  }
  if (rates.size() >= 2) out.emplace("learning_rate", ladder(std::move(rates), "peak_lr"));
  return out;
}

}  // namespace paintkit
