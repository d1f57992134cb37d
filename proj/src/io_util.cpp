#include "nasb/io_util.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "nasb/error.hpp"

namespace nasb::io {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(msg("cannot open '", path, "' for reading"));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void atomic_write(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(msg("cannot open '", tmp, "' for writing"));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(msg("short write to '", tmp, "'"));
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(msg("cannot rename '", tmp, "' to '", path, "': ", ec.message()));
}

bool file_exists(const std::string& path) {
  return std::filesystem::exists(path);
}

}  // namespace nasb::io
