#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nasb::serialize {

// Little-endian byte writer backing the NTSR/NLBL/NCKP formats.
class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void bytes(const char* data, std::size_t n);
  void str(const std::string& s);  // u32 length + bytes

  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

// Offset-tracking reader; truncation errors carry the byte offset.
class Reader {
 public:
  Reader(std::string data, std::string source);

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string str();
  void raw(char* out, std::size_t n);

  void expect_magic(const char* magic, std::size_t n, const char* format_name);
  void expect_end() const;
  std::int64_t offset() const { return static_cast<std::int64_t>(pos_); }

 private:
  void need(std::size_t n);
  std::string data_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace nasb::serialize
