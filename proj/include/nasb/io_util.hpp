#pragma once

#include <string>

namespace nasb::io {

std::string read_file(const std::string& path);

// Write-temp-then-rename so readers never observe a partial file.
void atomic_write(const std::string& path, const std::string& bytes);

bool file_exists(const std::string& path);

}  // namespace nasb::io
