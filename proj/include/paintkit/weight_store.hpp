#pragma once

// Named tensor collections, the PAINTCKP container, and weight-space
// arithmetic (interpolation, multi-model combination, similarity).

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "paintkit/error.hpp"
#include "paintkit/io.hpp"

namespace paintkit {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

constexpr std::string_view to_string(DType d) noexcept { return d == DType::f32 ? "f32" : "f64"; }

// Dense row-major tensor. Elements are held as double regardless of dtype;
// an f32 tensor rounds every element to float on construction, so values
// always equal what the container stores.
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::vector<std::uint64_t> shape, std::vector<double> data, DType dtype = DType::f64)
      : shape_(std::move(shape)), data_(std::move(data)), dtype_(dtype) {
    std::uint64_t n = 1;
    for (auto d : shape_) {
      if (d == 0) throw Error(Errc::shape_mismatch, "tensor dimension must be positive");
      n *= d;
    }
    if (n != data_.size()) {
      throw Error(Errc::shape_mismatch, "data length " + std::to_string(data_.size()) +
                                            " does not match shape product " + std::to_string(n));
    }
    for (auto& v : data_) {
      if (dtype_ == DType::f32) v = static_cast<double>(static_cast<float>(v));
      if (!std::isfinite(v)) throw Error(Errc::non_finite, "tensor element is not finite");
    }
  }

  static Tensor zeros(std::vector<std::uint64_t> shape, DType dtype = DType::f64) {
    std::uint64_t n = 1;
    for (auto d : shape) n *= d;
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), dtype);
  }

  const std::vector<std::uint64_t>& shape() const noexcept { return shape_; }
  std::span<const double> data() const noexcept { return data_; }
  DType dtype() const noexcept { return dtype_; }
  std::size_t numel() const noexcept { return data_.size(); }
  double operator[](std::size_t i) const { return data_[i]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::uint64_t> shape_;
  std::vector<double> data_;
  DType dtype_ = DType::f64;
};

// Bit-level equality (distinguishes -0.0 from 0.0).
inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.dtype() != b.dtype() || a.shape() != b.shape()) return false;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(x[i]) != std::bit_cast<std::uint64_t>(y[i])) return false;
  }
  return true;
}

using Meta = std::map<std::string, std::string>;

// Ordered name -> Tensor map. Iteration order is insertion order and every
// tensor shares one dtype.
class Checkpoint {
 public:
  using Entry = std::pair<std::string, Tensor>;

  Checkpoint() = default;
  explicit Checkpoint(Meta meta) : meta_(std::move(meta)) {}

  void add(std::string name, Tensor tensor) {
    if (index_.count(name)) throw Error(Errc::conflict, "duplicate tensor name '" + name + "'");
    if (!entries_.empty() && tensor.dtype() != entries_.front().second.dtype()) {
      throw Error(Errc::dtype_mismatch, "tensor '" + name + "' has dtype " +
                                            std::string(to_string(tensor.dtype())) +
                                            " but checkpoint holds " +
                                            std::string(to_string(entries_.front().second.dtype())));
    }
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(tensor));
  }

  const Tensor* find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : &entries_[it->second].second;
  }

  const Tensor& at(std::string_view name) const {
    if (auto* t = find(name)) return *t;
    throw Error(Errc::name_mismatch, "no tensor named '" + std::string(name) + "'");
  }

  bool contains(std::string_view name) const { return find(name) != nullptr; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  DType dtype() const noexcept { return entries_.empty() ? DType::f64 : entries_.front().second.dtype(); }

  std::size_t numel() const noexcept {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.numel();
    return n;
  }

  Meta& meta() noexcept { return meta_; }
  const Meta& meta() const noexcept { return meta_; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [n, _] : entries_) out.push_back(n);
    return out;
  }

  friend bool operator==(const Checkpoint& a, const Checkpoint& b) {
    return a.entries_ == b.entries_ && a.meta_ == b.meta_;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  Meta meta_;
};

// Tensors equal bit for bit in the same order; metadata ignored.
inline bool bitwise_equal(const Checkpoint& a, const Checkpoint& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& [na, ta] = a.entries()[i];
    const auto& [nb, tb] = b.entries()[i];
    if (na != nb || !bitwise_equal(ta, tb)) return false;
  }
  return true;
}

// Selects which tensors participate in flattening and similarity. An empty
// filter selects every tensor.
using TensorFilter = std::function<bool(std::string_view)>;

inline TensorFilter exclude_tensors(std::vector<std::string> names) {
  return [names = std::move(names)](std::string_view n) {
    return std::find(names.begin(), names.end(), n) == names.end();
  };
}

struct FlatView {
  std::vector<double> values;
};

inline FlatView flatten(const Checkpoint& c, const TensorFilter& filter = {}) {
  FlatView v;
  v.values.reserve(c.numel());
  for (const auto& [name, t] : c.entries()) {
    if (filter && !filter(name)) continue;
    v.values.insert(v.values.end(), t.data().begin(), t.data().end());
  }
  return v;
}

inline void validate_compatible(const Checkpoint& a, const Checkpoint& b) {
  for (const auto& [name, _] : a.entries()) {
    if (!b.contains(name)) throw Error(Errc::name_mismatch, "tensor '" + name + "' missing from second checkpoint");
  }
  for (const auto& [name, _] : b.entries()) {
    if (!a.contains(name)) throw Error(Errc::name_mismatch, "tensor '" + name + "' missing from first checkpoint");
  }
  for (const auto& [name, ta] : a.entries()) {
    if (ta.shape() != b.at(name).shape()) throw Error(Errc::shape_mismatch, "tensor '" + name + "' differs in shape");
  }
  if (!a.empty() && a.dtype() != b.dtype()) {
    throw Error(Errc::dtype_mismatch, "tensor '" + a.entries().front().first + "' differs in dtype");
  }
}

namespace detail {

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::string model_id(const Checkpoint& c) {
  auto it = c.meta().find("model_id");
  return it == c.meta().end() ? std::string("?") : it->second;
}

// (1 - sum(coeffs)) * base + sum_i coeffs[i] * others[i], evaluated left to
// right in 64-bit. lerp and multi_combine share this path so that a one-model
// combination is bit-identical to the corresponding lerp.
inline Checkpoint affine_combine(const Checkpoint& base, std::span<const Checkpoint* const> others,
                                 std::span<const double> coeffs) {
  double total = 0.0;
  for (double a : coeffs) total += a;
  const double base_coeff = 1.0 - total;
  Checkpoint out;
  for (const auto& [name, t] : base.entries()) {
    std::vector<double> acc(t.numel());
    auto z = t.data();
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] = base_coeff * z[j];
    for (std::size_t i = 0; i < others.size(); ++i) {
      auto f = others[i]->at(name).data();
      const double a = coeffs[i];
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] = acc[j] + a * f[j];
    }
    out.add(name, Tensor(t.shape(), std::move(acc), t.dtype()));
  }
  return out;
}

// Copy of src's tensors laid out in order's name order.
inline Checkpoint copy_tensors_in_order(const Checkpoint& order, const Checkpoint& src) {
  Checkpoint out;
  for (const auto& [name, _] : order.entries()) out.add(name, src.at(name));
  return out;
}

}  // namespace detail

// (1 - alpha) * zs + alpha * ft. The endpoints are exact copies.
inline Checkpoint lerp(const Checkpoint& zs, const Checkpoint& ft, double alpha) {
  validate_compatible(zs, ft);
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw Error(Errc::out_of_range, "mixing coefficient " + detail::format_double(alpha) + " outside [0, 1]");
  }
  Checkpoint out;
  if (alpha == 0.0) {
    out = detail::copy_tensors_in_order(zs, zs);
  } else if (alpha == 1.0) {
    out = detail::copy_tensors_in_order(zs, ft);
  } else {
    const Checkpoint* others[] = {&ft};
    const double coeffs[] = {alpha};
    out = detail::affine_combine(zs, others, coeffs);
  }
  out.meta()["interp.kind"] = "lerp";
  out.meta()["interp.alpha"] = detail::format_double(alpha);
  out.meta()["interp.parents"] = detail::model_id(zs) + "," + detail::model_id(ft);
  return out;
}

// Sum of coefficients may exceed one by this much (accumulated rounding of
// e.g. three coefficients of 1/3).
inline constexpr double kCoeffSumSlack = 1e-12;

// (1 - sum a_i) * zs + sum a_i * fts[i].
inline Checkpoint multi_combine(const Checkpoint& zs, std::span<const Checkpoint> fts, std::span<const double> alphas) {
  if (fts.empty()) throw Error(Errc::invalid_argument, "multi_combine needs at least one fine-tuned checkpoint");
  if (fts.size() != alphas.size()) {
    throw Error(Errc::invalid_argument, "got " + std::to_string(alphas.size()) + " coefficients for " +
                                            std::to_string(fts.size()) + " checkpoints");
  }
  for (const auto& ft : fts) validate_compatible(zs, ft);
  double total = 0.0;
  for (double a : alphas) {
    if (!std::isfinite(a) || a < 0.0) throw Error(Errc::out_of_range, "negative or non-finite coefficient");
    if (a > 1.0) throw Error(Errc::out_of_range, "coefficient above 1");
    total += a;
  }
  if (total > 1.0 + kCoeffSumSlack) {
    throw Error(Errc::out_of_range, "coefficients sum to " + detail::format_double(total) + " > 1");
  }

  Checkpoint out;
  auto nonzero = std::count_if(alphas.begin(), alphas.end(), [](double a) { return a != 0.0; });
  if (nonzero == 0) {
    out = detail::copy_tensors_in_order(zs, zs);
  } else if (auto one = std::find(alphas.begin(), alphas.end(), 1.0); nonzero == 1 && one != alphas.end()) {
    out = detail::copy_tensors_in_order(zs, fts[static_cast<std::size_t>(one - alphas.begin())]);
  } else {
    std::vector<const Checkpoint*> ptrs;
    for (const auto& ft : fts) ptrs.push_back(&ft);
    out = detail::affine_combine(zs, ptrs, alphas);
  }
  std::string coeffs, parents = detail::model_id(zs);
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    coeffs += (i ? "," : "") + detail::format_double(alphas[i]);
    parents += "," + detail::model_id(fts[i]);
  }
  out.meta()["interp.kind"] = "multi_combine";
  out.meta()["interp.alphas"] = coeffs;
  out.meta()["interp.parents"] = parents;
  return out;
}

// Elementwise arithmetic mean. Uses the running-mean update so that the
// mean of identical checkpoints reproduces them exactly.
inline Checkpoint average(std::span<const Checkpoint> fts) {
  if (fts.empty()) throw Error(Errc::invalid_argument, "average of an empty checkpoint list");
  for (std::size_t i = 1; i < fts.size(); ++i) validate_compatible(fts[0], fts[i]);
  Checkpoint out;
  for (const auto& [name, t] : fts[0].entries()) {
    std::vector<double> mean(t.data().begin(), t.data().end());
    for (std::size_t i = 1; i < fts.size(); ++i) {
      auto x = fts[i].at(name).data();
      const double inv = 1.0 / static_cast<double>(i + 1);
      for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += (x[j] - mean[j]) * inv;
    }
    out.add(name, Tensor(t.shape(), std::move(mean), t.dtype()));
  }
  std::string parents;
  for (std::size_t i = 0; i < fts.size(); ++i) parents += (i ? "," : "") + detail::model_id(fts[i]);
  out.meta()["interp.kind"] = "average";
  out.meta()["interp.parents"] = parents;
  return out;
}

inline double cosine_similarity(const Checkpoint& a, const Checkpoint& b, const TensorFilter& filter = {}) {
  validate_compatible(a, b);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [name, ta] : a.entries()) {
    if (filter && !filter(name)) continue;
    auto x = ta.data();
    auto y = b.at(name).data();
    for (std::size_t j = 0; j < x.size(); ++j) {
      dot += x[j] * y[j];
      na += x[j] * x[j];
      nb += y[j] * y[j];
    }
  }
  if (na == 0.0 || nb == 0.0) throw Error(Errc::degenerate, "cosine similarity of a zero-norm checkpoint");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

// ||a - b||_1 / n over the selected parameters.
inline double l1_mean_distance(const Checkpoint& a, const Checkpoint& b, const TensorFilter& filter = {}) {
  validate_compatible(a, b);
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& [name, ta] : a.entries()) {
    if (filter && !filter(name)) continue;
    auto x = ta.data();
    auto y = b.at(name).data();
    for (std::size_t j = 0; j < x.size(); ++j) sum += std::abs(x[j] - y[j]);
    n += x.size();
  }
  if (n == 0) throw Error(Errc::degenerate, "L1 distance over zero parameters");
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// PAINTCKP container, little-endian:
//   "PAINTCKP" | u32 version | u32 tensor count
//   per tensor: u16 name length, name bytes, u8 dtype, u8 rank, rank x u64 dims
//   u32 meta count, per entry: u32 key length, key, u32 value length, value
//   payloads in table order (f32 or f64 LE)

inline constexpr char kCheckpointMagic[8] = {'P', 'A', 'I', 'N', 'T', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  template <class T>
  void put(T v) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
  }
  void put_bytes(std::string_view s) { buf_.append(s); }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      u |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }

  std::string_view get_bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw Error(Errc::truncated, std::string("file ends inside ") + what);
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& c) {
  detail::ByteWriter w;
  w.put_bytes(std::string_view(kCheckpointMagic, 8));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.size()));
  for (const auto& [name, t] : c.entries()) {
    if (name.size() > 0xFFFF) throw Error(Errc::invalid_argument, "tensor name too long");
    if (t.shape().size() > 0xFF) throw Error(Errc::invalid_argument, "tensor rank too large");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.dtype()));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.shape().size()));
    for (auto d : t.shape()) w.put<std::uint64_t>(d);
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.meta().size()));
  for (const auto& [k, v] : c.meta()) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(k.size()));
    w.put_bytes(k);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(v.size()));
    w.put_bytes(v);
  }
  for (const auto& [name, t] : c.entries()) {
    for (double v : t.data()) {
      if (!std::isfinite(v)) throw Error(Errc::non_finite, "tensor '" + name + "' holds a non-finite element");
      if (t.dtype() == DType::f32) {
        w.put<std::uint32_t>(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      } else {
        w.put<std::uint64_t>(std::bit_cast<std::uint64_t>(v));
      }
    }
  }
  return w.take();
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes);
  const std::size_t head = std::min<std::size_t>(bytes.size(), 8);
  if (head < 8 && (head == 0 || std::memcmp(bytes.data(), kCheckpointMagic, head) == 0)) {
    throw Error(Errc::truncated, "checkpoint ends inside the magic");
  }
  if (std::memcmp(bytes.data(), kCheckpointMagic, head) != 0) {
    throw Error(Errc::bad_magic, "not a PAINTCKP checkpoint");
  }
  r.get_bytes(8, "magic");
  const auto version = r.get<std::uint32_t>("header");
  if (version != kCheckpointVersion) {
    throw Error(Errc::unsupported_version, "checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>("header");

  struct Row {
    std::string name;
    DType dtype;
    std::vector<std::uint64_t> shape;
    std::uint64_t numel;
  };
  std::vector<Row> table;
  table.reserve(std::min<std::uint32_t>(count, 1u << 16));
  std::uint64_t payload_bytes = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    Row row;
    const auto len = r.get<std::uint16_t>("tensor table");
    row.name = std::string(r.get_bytes(len, "tensor table"));
    const auto code = r.get<std::uint8_t>("tensor table");
    if (code > 1) throw Error(Errc::parse, "unknown dtype code " + std::to_string(code));
    row.dtype = static_cast<DType>(code);
    if (!table.empty() && row.dtype != table.front().dtype) {
      throw Error(Errc::dtype_mismatch, "tensor '" + row.name + "' breaks the uniform checkpoint dtype");
    }
    const auto rank = r.get<std::uint8_t>("tensor table");
    row.numel = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      const auto d = r.get<std::uint64_t>("tensor table");
      if (d == 0) throw Error(Errc::shape_mismatch, "tensor '" + row.name + "' has a zero dimension");
      row.shape.push_back(d);
      row.numel *= d;
    }
    payload_bytes += row.numel * (row.dtype == DType::f32 ? 4 : 8);
    table.push_back(std::move(row));
  }

  Meta meta;
  const auto meta_count = r.get<std::uint32_t>("metadata");
  for (std::uint32_t i = 0; i < meta_count; ++i) {
    const auto kl = r.get<std::uint32_t>("metadata");
    std::string key(r.get_bytes(kl, "metadata"));
    const auto vl = r.get<std::uint32_t>("metadata");
    meta[std::move(key)] = std::string(r.get_bytes(vl, "metadata"));
  }

  if (r.remaining() < payload_bytes) {
    throw Error(Errc::truncated, "payload holds " + std::to_string(r.remaining()) + " bytes, table declares " +
                                     std::to_string(payload_bytes));
  }
  if (r.remaining() > payload_bytes) {
    throw Error(Errc::shape_mismatch, "payload holds " + std::to_string(r.remaining()) +
                                          " bytes but tensor shapes account for " + std::to_string(payload_bytes));
  }

  Checkpoint out(std::move(meta));
  for (auto& row : table) {
    std::vector<double> data(row.numel);
    for (auto& v : data) {
      v = row.dtype == DType::f32 ? static_cast<double>(std::bit_cast<float>(r.get<std::uint32_t>("payload")))
                                  : std::bit_cast<double>(r.get<std::uint64_t>("payload"));
      if (!std::isfinite(v)) throw Error(Errc::non_finite, "tensor '" + row.name + "' holds a non-finite element");
    }
    out.add(std::move(row.name), Tensor(std::move(row.shape), std::move(data), row.dtype));
  }
  return out;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  io::atomic_write(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace paintkit
