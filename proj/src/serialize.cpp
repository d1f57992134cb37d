#include "nasb/serialize.hpp"

#include <bit>
#include <cstring>

#include "nasb/error.hpp"

namespace nasb::serialize {

static_assert(std::endian::native == std::endian::little,
              "serializers assume a little-endian host");

void Writer::u32(std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  buf_.append(b, 4);
}

void Writer::u64(std::uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  buf_.append(b, 8);
}

void Writer::f32(float v) {
  char b[4];
  std::memcpy(b, &v, 4);
  buf_.append(b, 4);
}

void Writer::f64(double v) {
  char b[8];
  std::memcpy(b, &v, 8);
  buf_.append(b, 8);
}

void Writer::bytes(const char* data, std::size_t n) { buf_.append(data, n); }

void Writer::str(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.append(s);
}

Reader::Reader(std::string data, std::string source)
    : data_(std::move(data)), source_(std::move(source)) {}

void Reader::need(std::size_t n) {
  if (pos_ + n > data_.size())
    throw IoError(msg(source_, ": truncated at byte ", pos_, " (need ", n,
                      " more, have ", data_.size() - pos_, ")"),
                  static_cast<std::int64_t>(pos_));
}

std::uint8_t Reader::u8() {
  need(1);
  return static_cast<std::uint8_t>(data_[pos_++]);
}

std::uint32_t Reader::u32() {
  need(4);
  std::uint32_t v;
  std::memcpy(&v, data_.data() + pos_, 4);
  pos_ += 4;
  return v;
}

std::uint64_t Reader::u64() {
  need(8);
  std::uint64_t v;
  std::memcpy(&v, data_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

float Reader::f32() {
  need(4);
  float v;
  std::memcpy(&v, data_.data() + pos_, 4);
  pos_ += 4;
  return v;
}

double Reader::f64() {
  need(8);
  double v;
  std::memcpy(&v, data_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

std::string Reader::str() {
  const std::uint32_t n = u32();
  need(n);
  std::string s = data_.substr(pos_, n);
  pos_ += n;
  return s;
}

void Reader::raw(char* out, std::size_t n) {
  need(n);
  std::memcpy(out, data_.data() + pos_, n);
  pos_ += n;
}

void Reader::expect_magic(const char* magic, std::size_t n, const char* format_name) {
  need(n);
  if (std::memcmp(data_.data() + pos_, magic, n) != 0)
    throw IoError(msg(source_, ": bad magic, not a ", format_name, " file"), 0);
  pos_ += n;
}

void Reader::expect_end() const {
  if (pos_ != data_.size())
    throw IoError(msg(source_, ": ", data_.size() - pos_,
                      " trailing bytes after byte ", pos_),
                  static_cast<std::int64_t>(pos_));
}

}  // namespace nasb::serialize
