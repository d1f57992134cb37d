#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace nasb {

// Base class for every error raised by the library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// A tensor/layer dimension does not match what an operation expects.
struct ShapeError : Error {
  using Error::Error;
};

// A scalar argument is out of its valid range (negative eps, lr <= 0, ...).
struct ValueError : Error {
  using Error::Error;
};

// File level problems: bad magic, version mismatch, truncation.
struct IoError : Error {
  explicit IoError(const std::string& msg, std::int64_t byte_offset = -1)
      : Error(msg), offset(byte_offset) {}
  std::int64_t offset;
};

namespace detail {

inline void format_into(std::ostringstream&) {}

template <typename T, typename... Rest>
void format_into(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  format_into(os, rest...);
}

}  // namespace detail

// Small helper so call sites can write msg("bad dim ", i, ": ", got).
template <typename... Args>
std::string msg(const Args&... args) {
  std::ostringstream os;
  detail::format_into(os, args...);
  return os.str();
}

}  // namespace nasb
