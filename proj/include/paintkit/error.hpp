#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace paintkit {

enum class Errc {
  io,
  bad_magic,
  unsupported_version,
  truncated,
  shape_mismatch,
  non_finite,
  name_mismatch,
  dtype_mismatch,
  invalid_argument,
  out_of_range,
  degenerate,
  missing_data,
  conflict,
  divergence,
  parse,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::io: return "io";
    case Errc::bad_magic: return "bad_magic";
    case Errc::unsupported_version: return "unsupported_version";
    case Errc::truncated: return "truncated";
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::non_finite: return "non_finite";
    case Errc::name_mismatch: return "name_mismatch";
    case Errc::dtype_mismatch: return "dtype_mismatch";
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::out_of_range: return "out_of_range";
    case Errc::degenerate: return "degenerate";
    case Errc::missing_data: return "missing_data";
    case Errc::conflict: return "conflict";
    case Errc::divergence: return "divergence";
    case Errc::parse: return "parse";
  }
  return "unknown";
}

// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace paintkit
